//! PSNR, SSIM and FID on progressively noisier copies of a phantom slice.

use arbsr::data::{phantom_volumes, DatasetProfile};
use arbsr::metrics::{fid, psnr, ssim, SeededConvEmbedder};
use arbsr::Tensor;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

fn main() -> arbsr::Result<()> {
    let vol = phantom_volumes(&DatasetProfile::builtin("phantom")?, 1, 8, 2)?.remove(0).1;
    let clean: Vec<Tensor> = (0..vol.n_slices()).map(|i| vol.slice(i)).collect();
    let hr_set = Tensor::stack(&clean);
    let embedder = SeededConvEmbedder::new(0);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    println!("noise   psnr     ssim     fid");
    for sigma in [0.0, 0.01, 0.03, 0.1] {
        let noisy: Vec<Tensor> = clean
            .iter()
            .map(|t| {
                let noise = Tensor::from_fn(t.shape(), |_| sigma * rng.sample::<f64, _>(StandardNormal));
                t.zip_map(&noise, |v, n| (v + n).clamp(0.0, 1.0))
            })
            .collect();
        let sr_set = Tensor::stack(&noisy);
        println!(
            "{sigma:<6}  {:<7.2}  {:.4}   {:.4}",
            psnr(&noisy[0], &clean[0], 1.0)?,
            ssim(&noisy[0], &clean[0])?,
            fid(&sr_set, &hr_set, &embedder)?
        );
    }
    Ok(())
}
