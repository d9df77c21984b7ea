//! Deterministic head-like phantoms used as the desk-scale corpus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Volume;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const N_BLOBS: usize = 9;

struct Blob {
    cy: f64,
    cx: f64,
    drift_y: f64,
    drift_x: f64,
    ay: f64,
    ax: f64,
    angle: f64,
    spin: f64,
    intensity: Vec<f64>,
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Raw slice size of phantoms produced for the built-in phantom profiles.
pub const PHANTOM_RAW_DIMS: (usize, usize) = (104, 104);

/// Single-modality phantom, voxels `[n_slices, 1, h, w]`.
pub fn synth_phantom(seed: u64, shape: (usize, usize), n_slices: usize) -> Result<Volume> {
    synth_phantom_channels(seed, shape, n_slices, 1)
}

/// Phantom with `channels` modalities that share anatomy but differ in
/// contrast. Everything outside an elliptical head region is exactly zero,
/// leaving a background margin of roughly a tenth of each dimension.
pub fn synth_phantom_channels(seed: u64, shape: (usize, usize), n_slices: usize, channels: usize) -> Result<Volume> {
    let (h, w) = shape;
    if h < 32 || w < 32 {
        return Err(Error::InvalidArgument(format!("phantom slices must be at least 32x32, got {h}x{w}")));
    }
    if n_slices == 0 {
        return Err(Error::InvalidArgument("phantom needs at least one slice".into()));
    }
    if !matches!(channels, 1 | 4) {
        return Err(Error::InvalidArgument(format!("phantom channels must be 1 or 4, got {channels}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let head_cy = h as f64 / 2.0 + rng.random_range(-0.02..0.02) * h as f64;
    let head_cx = w as f64 / 2.0 + rng.random_range(-0.02..0.02) * w as f64;
    let head_ay = h as f64 * rng.random_range(0.36..0.39);
    let head_ax = w as f64 * rng.random_range(0.36..0.39);
    let base: Vec<f64> = (0..channels).map(|_| rng.random_range(0.2..0.35)).collect();
    let rim: Vec<f64> = (0..channels).map(|_| rng.random_range(0.3..0.6)).collect();
    let blobs: Vec<Blob> = (0..N_BLOBS)
        .map(|_| Blob {
            cy: rng.random_range(-0.5..0.5),
            cx: rng.random_range(-0.5..0.5),
            drift_y: rng.random_range(-0.15..0.15),
            drift_x: rng.random_range(-0.15..0.15),
            ay: rng.random_range(0.08..0.32),
            ax: rng.random_range(0.08..0.32),
            angle: rng.random_range(0.0..std::f64::consts::PI),
            spin: rng.random_range(-0.6..0.6),
            intensity: (0..channels).map(|_| rng.random_range(-0.2..0.45)).collect(),
        })
        .collect();
    let freq: (f64, f64) = (rng.random_range(0.6..1.1), rng.random_range(0.6..1.1));
    let phase: (f64, f64) = (rng.random_range(0.0..6.3), rng.random_range(0.0..6.3));
    let texture: Vec<f64> = (0..channels).map(|_| rng.random_range(0.03..0.08)).collect();

    let mut data = Vec::with_capacity(n_slices * channels * h * w);
    for z in 0..n_slices {
        let t = (z as f64 + 0.5) / n_slices as f64 * 2.0 - 1.0;
        let shrink = (1.0 - 0.35 * t * t).sqrt();
        let (ay, ax) = (head_ay * shrink, head_ax * shrink);
        for c in 0..channels {
            for y in 0..h {
                for x in 0..w {
                    let dy = (y as f64 + 0.5 - head_cy) / ay;
                    let dx = (x as f64 + 0.5 - head_cx) / ax;
                    let rho = (dy * dy + dx * dx).sqrt();
                    if rho >= 1.0 {
                        data.push(0.0);
                        continue;
                    }
                    let mask = 1.0 - smoothstep(0.92, 1.0, rho);
                    let mut v = base[c] + rim[c] * smoothstep(0.78, 0.86, rho) * (1.0 - smoothstep(0.9, 0.96, rho));
                    for b in &blobs {
                        let by = b.cy + b.drift_y * t;
                        let bx = b.cx + b.drift_x * t;
                        let ang = b.angle + b.spin * t;
                        let (sa, ca) = ang.sin_cos();
                        let (py, px) = (dy - by, dx - bx);
                        let u = (ca * px + sa * py) / (b.ax * (1.0 - 0.3 * t.abs()));
                        let q = (-sa * px + ca * py) / (b.ay * (1.0 - 0.3 * t.abs()));
                        let r = (u * u + q * q).sqrt();
                        v += b.intensity[c] * (1.0 - smoothstep(0.75, 1.0, r));
                    }
                    v += texture[c] * (freq.0 * y as f64 + phase.0 + 2.0 * t).sin() * (freq.1 * x as f64 + phase.1).sin();
                    data.push((mask * v).clamp(0.0, 1.0));
                }
            }
        }
    }
    let voxels = Tensor::new(vec![n_slices, channels, h, w], data);
    let names = if channels == 1 {
        vec!["phantom".to_string()]
    } else {
        ["t1", "t1ce", "t2", "flair"].iter().map(|s| s.to_string()).collect()
    };
    Volume::new(voxels, names, (0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn determinism_and_seed_sensitivity() {
        let a = synth_phantom(1, (64, 64), 8).unwrap();
        let b = synth_phantom(1, (64, 64), 8).unwrap();
        let c = synth_phantom(2, (64, 64), 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.voxels.shape(), &[8, 1, 64, 64]);
        let differing = a.voxels.data().iter().zip(c.voxels.data()).filter(|(x, y)| x != y).count();
        assert!(differing * 100 >= a.voxels.numel(), "{differing}");
    }

    #[test]
    fn values_and_margin() {
        let v = synth_phantom(3, PHANTOM_RAW_DIMS, 4).unwrap();
        assert!(v.voxels.data().iter().all(|x| (0.0..=1.0).contains(x)));
        assert!(v.voxels.data().iter().any(|&x| x > 0.0));
        assert!(super::super::center_crop(&v.voxels, 96, 96).is_ok());
        assert!(synth_phantom(3, (16, 64), 4).is_err());
    }

    #[test]
    fn slices_vary() {
        let v = synth_phantom(4, (48, 48), 6).unwrap();
        assert_ne!(v.slice(0), v.slice(3));
    }
}
