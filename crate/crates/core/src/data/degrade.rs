//! Blur, bicubic resampling and the HR -> LR degradation.
//!
//! Images are `[c, h, w]` tensors; every operation acts per channel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::generator::meta::reflect;
use crate::scale::{scaled_len, shrunk_len, validate_scale};
use crate::tensor::Tensor;

/// Standard deviation of the 3×3 Gaussian blur.
pub const BLUR_SIGMA: f64 = 0.5;

/// Bicubic convolution parameter.
pub const CUBIC_A: f64 = -0.5;

fn chw(img: &Tensor) -> Result<(usize, usize, usize)> {
    match img.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        other => Err(Error::Shape(format!("image must be [c, h, w], got {other:?}"))),
    }
}

/// Normalized 1-D taps of the 3-point Gaussian.
pub fn gaussian_taps(sigma: f64) -> [f64; 3] {
    let e = (-1.0 / (2.0 * sigma * sigma)).exp();
    let z = 1.0 + 2.0 * e;
    [e / z, 1.0 / z, e / z]
}

/// Separable 3×3 Gaussian blur with mirror (reflect-101) borders.
pub fn gaussian_blur_3x3(img: &Tensor, sigma: f64) -> Result<Tensor> {
    let (c, h, w) = chw(img)?;
    let k = gaussian_taps(sigma);
    let mut tmp = vec![0.0; c * h * w];
    let mut out = vec![0.0; c * h * w];
    let src = img.data();
    for ci in 0..c {
        let base = ci * h * w;
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    let xx = reflect(x as isize + t as isize - 1, w);
                    acc += kv * src[base + y * w + xx];
                }
                tmp[base + y * w + x] = acc;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    let yy = reflect(y as isize + t as isize - 1, h);
                    acc += kv * tmp[base + yy * w + x];
                }
                out[base + y * w + x] = acc;
            }
        }
    }
    Ok(Tensor::new(vec![c, h, w], out))
}

/// Cubic convolution kernel with parameter `a`.
pub fn cubic_weight(x: f64, a: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Source taps and weights for one output axis. Output index `d` samples the
/// input at `(d + 0.5) · ratio − 0.5`; out-of-range taps clamp to the edge.
fn axis_taps(n_in: usize, n_out: usize, ratio: f64) -> Vec<([usize; 4], [f64; 4])> {
    (0..n_out)
        .map(|d| {
            let src = (d as f64 + 0.5) * ratio - 0.5;
            let x0 = src.floor();
            let t = src - x0;
            let mut idx = [0usize; 4];
            let mut wts = [0.0; 4];
            for (j, off) in (-1i64..=2).enumerate() {
                let i = (x0 as i64 + off).clamp(0, n_in as i64 - 1);
                idx[j] = i as usize;
                wts[j] = cubic_weight(t - off as f64, CUBIC_A);
            }
            (idx, wts)
        })
        .collect()
}

fn resample(img: &Tensor, out: (usize, usize), ratio: (f64, f64)) -> Result<Tensor> {
    let (c, h, w) = chw(img)?;
    let (ho, wo) = out;
    if ho == 0 || wo == 0 {
        return Err(Error::InvalidArgument(format!(
            "bicubic resize of {h}x{w} would produce an empty {ho}x{wo} image"
        )));
    }
    let rows = axis_taps(h, ho, ratio.0);
    let cols = axis_taps(w, wo, ratio.1);
    let src = img.data();
    let mut tmp = vec![0.0; c * h * wo];
    for ci in 0..c {
        for y in 0..h {
            let row = &src[(ci * h + y) * w..(ci * h + y + 1) * w];
            for (x, (idx, wts)) in cols.iter().enumerate() {
                tmp[(ci * h + y) * wo + x] = (0..4).map(|j| wts[j] * row[idx[j]]).sum();
            }
        }
    }
    let mut dst = vec![0.0; c * ho * wo];
    for ci in 0..c {
        for (y, (idx, wts)) in rows.iter().enumerate() {
            for x in 0..wo {
                dst[(ci * ho + y) * wo + x] = (0..4).map(|j| wts[j] * tmp[(ci * h + idx[j]) * wo + x]).sum();
            }
        }
    }
    Ok(Tensor::new(vec![c, ho, wo], dst))
}

/// Bicubic resize by `factor`: output `(⌊h·factor⌋, ⌊w·factor⌋)`, sampling
/// the input at `(d + 0.5) / factor − 0.5`.
pub fn bicubic_resize(img: &Tensor, factor: f64) -> Result<Tensor> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::InvalidArgument(format!("resize factor {factor} must be positive")));
    }
    let (_, h, w) = chw(img)?;
    let out = (scaled_len(h, factor), scaled_len(w, factor));
    resample(img, out, (1.0 / factor, 1.0 / factor))
}

/// Bicubic resize to explicit dims, with the per-axis ratio `in / out`.
pub fn resize_to(img: &Tensor, out: (usize, usize)) -> Result<Tensor> {
    let (_, h, w) = chw(img)?;
    if out.0 == 0 || out.1 == 0 {
        return Err(Error::InvalidArgument(format!("cannot resize to {out:?}")));
    }
    resample(img, out, (h as f64 / out.0 as f64, w as f64 / out.1 as f64))
}

/// `clamp(bicubic(blur(hr)), 0, 1)` to `(⌊h/s⌋, ⌊w/s⌋)`.
pub fn degrade(hr: &Tensor, s: f64) -> Result<Tensor> {
    let (_, h, w) = chw(hr)?;
    validate_scale(s)?;
    degrade_to(hr, s, (shrunk_len(h, s), shrunk_len(w, s)))
}

/// Degradation to explicit LR dims, sampling the blurred HR image at
/// `(d + 0.5) · s − 0.5`. Patch sampling uses this with `⌊H_p/s⌋`, which can
/// differ from `⌊H_hr/s⌋` by one.
pub fn degrade_to(hr: &Tensor, s: f64, lr_dims: (usize, usize)) -> Result<Tensor> {
    validate_scale(s)?;
    let blurred = gaussian_blur_3x3(hr, BLUR_SIGMA)?;
    let lr = resample(&blurred, lr_dims, (s, s))?;
    Ok(lr.map(|v| v.clamp(0.0, 1.0)))
}

/// Optional additive Gaussian noise (followed by clamping); not part of the
/// default degradation.
pub fn add_gaussian_noise(img: &Tensor, std: f64, seed: u64) -> Result<Tensor> {
    if !(std.is_finite() && std >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise std {std} must be non-negative")));
    }
    if std == 0.0 {
        return Ok(img.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, std).expect("finite std");
    let data = img.data().iter().map(|v| (v + dist.sample(&mut rng)).clamp(0.0, 1.0)).collect();
    Ok(Tensor::new(img.shape().to_vec(), data))
}
