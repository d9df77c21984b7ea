//! Evaluation over a scale grid for the bicubic baseline and for a
//! fixed-integer-scale model wrapped with up-and-down resizing.

use arbsr::data::{bicubic_resize, phantom_volumes, DatasetProfile};
use arbsr::eval::{evaluate, Bicubic, EvalPlan, FixedScaleModelHandle, SrModel};
use arbsr::metrics::SeededConvEmbedder;

fn main() -> arbsr::Result<()> {
    let vols: Vec<_> = phantom_volumes(&DatasetProfile::builtin("phantom")?, 2, 4, 9)?
        .into_iter()
        .map(|(_, v)| v)
        .collect();
    // Stand-in for an external x2/x3/x4 network.
    let fixed = FixedScaleModelHandle::new("fixed-bicubic", vec![2, 3, 4], |lr, s| bicubic_resize(lr, s as f64));
    let plan = EvalPlan::new(vec![1.5, 2.0, 2.5, 3.0, 3.5, 4.0]);
    let embedder = SeededConvEmbedder::new(0);
    for model in [&Bicubic as &dyn SrModel, &fixed] {
        let r = evaluate(&plan, model, &vols, Some(&embedder))?;
        println!("{}\n{}", model.name(), r.to_csv());
    }
    Ok(())
}
