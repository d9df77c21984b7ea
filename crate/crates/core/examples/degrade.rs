//! The HR -> LR degradation and the bicubic baseline on phantom slices,
//! per scale, for single- and four-channel profiles.

use arbsr::data::{degrade, phantom_volumes, DatasetProfile};
use arbsr::eval::bicubic_baseline;
use arbsr::metrics::{psnr, ssim};
use arbsr::scale::scaled_len;

fn main() -> arbsr::Result<()> {
    for profile in ["phantom", "phantom4"] {
        let p = DatasetProfile::builtin(profile)?;
        let (id, vol) = phantom_volumes(&p, 1, 6, 3)?.remove(0);
        println!("{profile}: {id} slices {} x {:?}, modalities {:?}", vol.n_slices(), vol.slice_dims(), vol.modality_names);
        let hr = vol.slice(3);
        for s in [1.5, 2.0, 3.0, 4.0] {
            let lr = degrade(&hr, s)?;
            let (h, w) = (lr.shape()[1], lr.shape()[2]);
            let up = bicubic_baseline(&lr, s)?;
            let target = top_left(&hr, up.shape()[1], up.shape()[2]);
            println!(
                "  s={s}: lr {h}x{w} -> {}x{}, bicubic psnr {:.2} dB ssim {:.4}",
                scaled_len(h, s),
                scaled_len(w, s),
                psnr(&up, &target, 1.0)?,
                ssim(&up, &target)?
            );
        }
    }
    Ok(())
}

fn top_left(img: &arbsr::Tensor, h: usize, w: usize) -> arbsr::Tensor {
    let (c, hh, ww) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    arbsr::Tensor::from_fn(&[c, h, w], |i| {
        let (ci, y, x) = (i / (h * w), (i / w) % h, i % w);
        img.data()[(ci * hh + y) * ww + x]
    })
}
