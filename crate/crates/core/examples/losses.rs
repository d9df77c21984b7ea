//! Every loss term on one SR/HR pair: L1, the perceptual distance, and the
//! generator and critic sides of each adversarial variant, with gradient
//! norms taken through the tape.

use arbsr::autograd::Graph;
use arbsr::critic::{Critic, CriticConfig};
use arbsr::losses::{l1_loss, perceptual_loss, AdversarialLoss, GanVariant, SeededConvExtractor};
use arbsr::nn::InitScheme;
use arbsr::Tensor;

fn image(phase: f64) -> Tensor {
    Tensor::from_fn(&[2, 1, 24, 24], |i| 0.5 + 0.4 * ((i as f64) * 0.13 + phase).sin())
}

fn main() -> arbsr::Result<()> {
    let (sr0, hr0) = (image(0.3), image(0.0));
    let grad_norm = |g: &Graph, loss, sr| g.value(g.grad(loss, &[sr])[0]).data().iter().map(|v| v * v).sum::<f64>().sqrt();

    let g = Graph::new();
    let (sr, hr) = (g.leaf(sr0.clone()), g.leaf(hr0.clone()));
    let l1 = l1_loss(&g, sr, hr)?;
    println!("l1          {:.6}  |dL/dsr| {:.3e}", g.item(l1), grad_norm(&g, l1, sr));
    let v = SeededConvExtractor::new(0);
    let perc = perceptual_loss(&g, sr, hr, &v)?;
    println!("perceptual  {:.6}  |dL/dsr| {:.3e}", g.item(perc), grad_norm(&g, perc, sr));

    for variant in GanVariant::ALL {
        let cfg = CriticConfig {
            head_mode: variant.head_mode(),
            ..CriticConfig::desk()
        };
        let critic = Critic::new(cfg, 1, 5, InitScheme::KaimingUniform)?;
        let adv = AdversarialLoss::new(variant);
        let g = Graph::new();
        let (sr, hr) = (g.leaf(sr0.clone()), g.leaf(hr0.clone()));
        let d = critic.bind(&g);
        let gen = adv.generator_loss(&g, &d, sr, hr)?;
        let crit = adv.critic_loss(&g, &d, sr, hr, &[0.25, 0.75])?;
        let penalty = crit.penalty.map(|p| format!(", penalty {:.4}", g.item(p))).unwrap_or_default();
        println!(
            "{variant:<8} generator {:+.5} (|dL/dsr| {:.3e}), critic {:+.5}{penalty}",
            g.item(gen),
            grad_norm(&g, gen, sr),
            g.item(crit.loss)
        );
    }
    Ok(())
}
