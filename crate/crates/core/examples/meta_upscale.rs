//! The meta-upscale two ways: per-pixel local kernels (the production path)
//! and the explicit magnification matrix. Prints their agreement, timings and
//! the size of the matrix the local route never builds.

use std::time::Instant;

use arbsr::generator::{Generator, GeneratorConfig};
use arbsr::nn::InitScheme;
use arbsr::Tensor;

fn main() -> arbsr::Result<()> {
    let g = Generator::new(GeneratorConfig::tiny(), 1, InitScheme::KaimingUniform)?;
    let w = g.config.width;
    for (h, s) in [(8, 1.5), (12, 2.3), (12, 4.0)] {
        let f = Tensor::from_fn(&[w, h, h], |i| ((i as f64) * 0.37).sin());
        let t0 = Instant::now();
        let local = g.meta_upscale_local(&f, s)?;
        let t_local = t0.elapsed();
        let t0 = Instant::now();
        let dense = g.meta_upscale_dense(&f, s, usize::MAX)?;
        let t_dense = t0.elapsed();
        let out = local.shape()[1] * local.shape()[2];
        println!(
            "{h}x{h} at s={s}: max |local - dense| = {:.1e}; local {t_local:?}, dense {t_dense:?} ({} matrix entries)",
            local.max_abs_diff(&dense),
            out * w * h * h
        );
    }
    let big = Tensor::zeros(&[w, 64, 64]);
    match g.meta_upscale_dense(&big, 4.0, 50_000_000) {
        Err(e) => println!("64x64 at s=4 dense: {e}"),
        Ok(_) => println!("64x64 at s=4 dense fitted the budget"),
    }
    Ok(())
}
