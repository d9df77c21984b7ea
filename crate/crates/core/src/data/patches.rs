//! Scale-consistent LR/HR patch batches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::degrade::{add_gaussian_noise, degrade_to};
use super::Volume;
use crate::error::{Error, Result};
use crate::scale::{patch_dims, validate_scale};
use crate::tensor::Tensor;

/// Matched LR/HR patches sharing one scale: `lr [B, m, H_lr, W_lr]`,
/// `hr [B, m, ⌊s·H_lr⌋, ⌊s·W_lr⌋]` with `H_lr = ⌊H_p/s⌋`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchBatch {
    pub lr: Tensor,
    pub hr: Tensor,
    pub scale: f64,
}

impl PatchBatch {
    pub fn len(&self) -> usize {
        self.hr.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Crops `[m, h, w]` to `(hh, ww)` at `(y0, x0)`.
pub(crate) fn crop(img: &Tensor, y0: usize, x0: usize, hh: usize, ww: usize) -> Tensor {
    let (m, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    assert!(y0 + hh <= h && x0 + ww <= w, "crop out of bounds");
    let mut out = Vec::with_capacity(m * hh * ww);
    for c in 0..m {
        for y in y0..y0 + hh {
            let row = (c * h + y) * w;
            out.extend_from_slice(&img.data()[row + x0..row + x0 + ww]);
        }
    }
    Tensor::new(vec![m, hh, ww], out)
}

/// Degrades each HR patch to `lr_dims` in parallel, preserving order.
fn degrade_all(hr: Vec<Tensor>, s: f64, lr_dims: (usize, usize), noise: Option<(f64, u64)>) -> Result<PatchBatch> {
    let lr: Vec<Tensor> = hr
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let lr = degrade_to(p, s, lr_dims)?;
            match noise {
                Some((std, seed)) if std > 0.0 => add_gaussian_noise(&lr, std, seed.wrapping_add(i as u64)),
                _ => Ok(lr),
            }
        })
        .collect::<Result<_>>()?;
    Ok(PatchBatch {
        lr: Tensor::stack(&lr),
        hr: Tensor::stack(&hr),
        scale: s,
    })
}

/// Draws `batch` random HR patches of nominal size `patch` (height, width)
/// from random slices of `volumes` and degrades each at the patch level.
pub fn sample_patch_batch(
    volumes: &[Volume],
    s: f64,
    patch: (usize, usize),
    batch: usize,
    seed: u64,
) -> Result<PatchBatch> {
    sample_patch_batch_noisy(volumes, s, patch, batch, seed, 0.0)
}

/// [`sample_patch_batch`] with optional additive Gaussian noise on the LR side.
pub fn sample_patch_batch_noisy(
    volumes: &[Volume],
    s: f64,
    patch: (usize, usize),
    batch: usize,
    seed: u64,
    noise_std: f64,
) -> Result<PatchBatch> {
    validate_scale(s)?;
    if volumes.is_empty() {
        return Err(Error::InvalidArgument("no volumes to sample from".into()));
    }
    if batch == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let m = volumes[0].channels();
    for v in volumes {
        let (h, w) = v.slice_dims();
        if patch.0 > h || patch.1 > w {
            return Err(Error::InvalidArgument(format!(
                "patch {}x{} larger than volume slices {h}x{w}",
                patch.0, patch.1
            )));
        }
        if v.channels() != m {
            return Err(Error::InvalidArgument("volumes have differing modality counts".into()));
        }
    }
    let (hr_h, lr_h) = patch_dims(patch.0, s);
    let (hr_w, lr_w) = patch_dims(patch.1, s);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hr = Vec::with_capacity(batch);
    for _ in 0..batch {
        let v = &volumes[rng.random_range(0..volumes.len())];
        let z = rng.random_range(0..v.n_slices());
        let (h, w) = v.slice_dims();
        let y0 = rng.random_range(0..=h - hr_h);
        let x0 = rng.random_range(0..=w - hr_w);
        hr.push(crop(&v.slice(z), y0, x0, hr_h, hr_w));
    }
    let noise = (noise_std > 0.0).then(|| (noise_std, rng.random::<u64>()));
    degrade_all(hr, s, (lr_h, lr_w), noise)
}

/// Anything that yields a patch batch for a given scale and per-step seed.
pub trait PatchSource: Send + Sync {
    fn batch(&self, s: f64, seed: u64) -> Result<PatchBatch>;
    fn channels(&self) -> usize;
}

/// Random patches from a set of volumes.
#[derive(Clone, Debug)]
pub struct VolumePatchSource {
    pub volumes: Vec<Volume>,
    pub patch: (usize, usize),
    pub batch_size: usize,
    pub noise_std: f64,
}

impl PatchSource for VolumePatchSource {
    fn batch(&self, s: f64, seed: u64) -> Result<PatchBatch> {
        sample_patch_batch_noisy(&self.volumes, s, self.patch, self.batch_size, seed, self.noise_std)
    }

    fn channels(&self) -> usize {
        self.volumes.first().map_or(1, Volume::channels)
    }
}

/// The same HR patches at every step (top-left crop to the scale's HR size);
/// used to check that a model can memorize a tiny set.
#[derive(Clone, Debug)]
pub struct FixedPatchSource {
    patches: Vec<Tensor>,
}

impl FixedPatchSource {
    /// `patches` are `[m, H_p, W_p]` images of equal shape.
    pub fn new(patches: Vec<Tensor>) -> Result<Self> {
        let first = patches
            .first()
            .ok_or_else(|| Error::InvalidArgument("fixed patch set is empty".into()))?;
        if first.shape().len() != 3 || patches.iter().any(|p| p.shape() != first.shape()) {
            return Err(Error::Shape("fixed patches must share one [m, h, w] shape".into()));
        }
        Ok(Self { patches })
    }

    /// `n` patches of size `patch` drawn from `volumes` with `seed`.
    pub fn from_volumes(volumes: &[Volume], patch: usize, n: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let v = volumes
                .get(rng.random_range(0..volumes.len().max(1)))
                .ok_or_else(|| Error::InvalidArgument("no volumes".into()))?;
            let (h, w) = v.slice_dims();
            if patch > h || patch > w {
                return Err(Error::InvalidArgument(format!("patch {patch} larger than slices {h}x{w}")));
            }
            // Middle third of the stack, where phantoms have most structure.
            let n_s = v.n_slices();
            let z = n_s / 3 + rng.random_range(0..(n_s / 3).max(1));
            let y0 = (h - patch) / 4 + rng.random_range(0..=(h - patch) / 2);
            let x0 = (w - patch) / 4 + rng.random_range(0..=(w - patch) / 2);
            out.push(crop(&v.slice(z), y0, x0, patch, patch));
        }
        Self::new(out)
    }

    pub fn patches(&self) -> &[Tensor] {
        &self.patches
    }
}

impl PatchSource for FixedPatchSource {
    fn batch(&self, s: f64, _seed: u64) -> Result<PatchBatch> {
        validate_scale(s)?;
        let shape = self.patches[0].shape();
        let (hr_h, lr_h) = patch_dims(shape[1], s);
        let (hr_w, lr_w) = patch_dims(shape[2], s);
        let hr = self.patches.iter().map(|p| crop(p, 0, 0, hr_h, hr_w)).collect();
        degrade_all(hr, s, (lr_h, lr_w), None)
    }

    fn channels(&self) -> usize {
        self.patches[0].shape()[0]
    }
}
