//! Memorizes four fixed phantom patches with the L1 warm-up and reports the
//! train-set PSNR of the model and of bicubic upsampling at each scale.
//!
//! `cargo run --release --example overfit -- [steps] [lr0] [halving] [depth] [width]`

use arbsr::data::{bicubic_resize, synth_phantom, FixedPatchSource, PatchSource};
use arbsr::generator::GeneratorConfig;
use arbsr::metrics::psnr;
use arbsr::nn::InitScheme;
use arbsr::train::{init_weights, warmup_train, TrainContext, TrainSchedule};
use arbsr::Tensor;

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> arbsr::Result<()> {
    let steps: u64 = arg(1, 2000);
    let tiny = GeneratorConfig::tiny();
    let config = GeneratorConfig {
        depth: arg(4, tiny.depth),
        width: arg(5, tiny.width),
        ..tiny
    };
    let scales = vec![1.5, 2.0, 3.0];
    let vols: Vec<_> = (0..2).map(|i| synth_phantom(10 + i, (64, 64), 8)).collect::<Result<_, _>>()?;
    let data = FixedPatchSource::from_volumes(&vols, 24, 4, 7)?;
    let schedule = TrainSchedule {
        warmup_steps: steps,
        batch_size: 4,
        lr0: arg(2, 4e-3),
        lr_halving_period: arg(3, 1000),
        scale_grid: scales.clone(),
        seed: 1,
        ..Default::default()
    };
    let state = init_weights(&config, &schedule, InitScheme::KaimingUniform)?;
    println!("{} parameters", state.generator.param_count());
    let t0 = std::time::Instant::now();
    let state = warmup_train(state, &data, &schedule, &TrainContext::default())?;
    println!("{steps} steps in {:.1}s", t0.elapsed().as_secs_f64());
    for r in state.log.iter().step_by((steps as usize / 10).max(1)) {
        println!("step {:>6} s={} l1={:.5}", r.step, r.scale, r.l1);
    }
    for s in scales {
        let b = data.batch(s, 0)?;
        let sr = state.generator.generate(&b.lr, s)?;
        let bic: Vec<Tensor> = (0..b.len())
            .map(|i| bicubic_resize(&b.lr.index_axis0(i), s).map(|t| t.map(|v| v.clamp(0.0, 1.0))))
            .collect::<Result<_, _>>()?;
        println!(
            "s={s}: model {:.2} dB, bicubic {:.2} dB",
            psnr(&sr, &b.hr, 1.0)?,
            psnr(&Tensor::stack(&bic), &b.hr, 1.0)?
        );
    }
    Ok(())
}
