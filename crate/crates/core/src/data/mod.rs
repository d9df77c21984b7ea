//! Volumes, dataset crop profiles, the degradation model and patch sampling.

pub mod degrade;
mod io;
pub mod patches;
pub mod phantom;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use degrade::{add_gaussian_noise, bicubic_resize, degrade, degrade_to, gaussian_blur_3x3, resize_to};
pub use io::{read_raw, write_raw, RAW_EXTENSION};
pub use patches::{sample_patch_batch, FixedPatchSource, PatchBatch, PatchSource, VolumePatchSource};
pub use phantom::{synth_phantom, synth_phantom_channels, PHANTOM_RAW_DIMS};

/// A stack of 2-D slices with one or more modalities: voxels `[slices, m, h, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub voxels: Tensor,
    pub modality_names: Vec<String>,
    /// Raw intensity range before normalization.
    pub value_range: (f64, f64),
}

impl Volume {
    pub fn new(voxels: Tensor, modality_names: Vec<String>, value_range: (f64, f64)) -> Result<Self> {
        let shape = voxels.shape();
        if shape.len() != 4 {
            return Err(Error::InvalidVolume(format!("voxels must be [slices, m, h, w], got {shape:?}")));
        }
        if !matches!(shape[1], 1 | 4) {
            return Err(Error::InvalidVolume(format!("{} modalities; expected 1 or 4", shape[1])));
        }
        if modality_names.len() != shape[1] {
            return Err(Error::InvalidVolume(format!(
                "{} modality names for {} channels",
                modality_names.len(),
                shape[1]
            )));
        }
        if !voxels.all_finite() {
            return Err(Error::InvalidVolume("volume contains NaN or infinite voxels".into()));
        }
        Ok(Self {
            voxels,
            modality_names,
            value_range,
        })
    }

    pub fn n_slices(&self) -> usize {
        self.voxels.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.voxels.shape()[1]
    }

    pub fn slice_dims(&self) -> (usize, usize) {
        (self.voxels.shape()[2], self.voxels.shape()[3])
    }

    /// Slice `i` as a `[m, h, w]` image.
    pub fn slice(&self, i: usize) -> Tensor {
        self.voxels.index_axis0(i)
    }
}

/// Axis along which 2-D slices are taken; the remaining two axes keep their
/// order as (rows, cols).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlicePlane {
    Sagittal,
    Coronal,
    Axial,
}

impl SlicePlane {
    pub fn axis(self) -> usize {
        match self {
            SlicePlane::Sagittal => 0,
            SlicePlane::Coronal => 1,
            SlicePlane::Axial => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetProfile {
    pub name: String,
    pub crop_height: usize,
    pub crop_width: usize,
    pub channels: usize,
    pub plane: SlicePlane,
}

impl DatasetProfile {
    pub const BUILTIN: [&'static str; 6] = ["oasis", "brats", "acdc", "covid_ct", "phantom", "phantom4"];

    /// Built-in crop profiles. The `phantom` profiles match synthetic volumes
    /// of [`PHANTOM_RAW_DIMS`] slices with a zero margin, cropped to 96×96;
    /// `phantom4` has four modalities.
    pub fn builtin(name: &str) -> Result<Self> {
        let (h, w, c) = match name {
            "oasis" => (144, 180, 1),
            "brats" => (180, 170, 4),
            "acdc" => (128, 128, 1),
            "covid_ct" => (412, 332, 1),
            "phantom" => (96, 96, 1),
            "phantom4" => (96, 96, 4),
            other => {
                return Err(Error::config(
                    "data.profile",
                    format!("unknown profile `{other}` (expected one of {:?})", Self::BUILTIN),
                ))
            }
        };
        Ok(Self {
            name: name.to_string(),
            crop_height: h,
            crop_width: w,
            channels: c,
            plane: SlicePlane::Axial,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop_height == 0 || self.crop_width == 0 {
            return Err(Error::config("data.profile", "crop dims must be positive"));
        }
        if !matches!(self.channels, 1 | 4) {
            return Err(Error::config("data.profile", "channels must be 1 or 4"));
        }
        Ok(())
    }
}

/// Raw (un-normalized) array as decoded from disk.
pub(crate) struct RawArray {
    /// Axis lengths; a 4th axis, when present, indexes modalities.
    pub dims: Vec<usize>,
    /// Element at `(i0, i1, i2[, i3])` lives at `i0 + d0·(i1 + d1·(i2 + d2·i3))`.
    pub data: Vec<f64>,
    pub modality_names: Option<Vec<String>>,
}

/// Rearranges a decoded array into `[slices, m, h, w]` for `plane`.
fn slice_stack(raw: &RawArray, plane: SlicePlane) -> Result<Tensor> {
    let d = &raw.dims;
    if !(d.len() == 3 || d.len() == 4) {
        return Err(Error::InvalidVolume(format!("expected a 3-D or 4-D array, got dims {d:?}")));
    }
    let m = if d.len() == 4 { d[3] } else { 1 };
    let axis = plane.axis();
    let in_plane: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
    let (n, h, w) = (d[axis], d[in_plane[0]], d[in_plane[1]]);
    let mut out = Vec::with_capacity(n * m * h * w);
    let mut idx = [0usize; 3];
    for z in 0..n {
        for c in 0..m {
            for r in 0..h {
                for q in 0..w {
                    idx[axis] = z;
                    idx[in_plane[0]] = r;
                    idx[in_plane[1]] = q;
                    let flat = idx[0] + d[0] * (idx[1] + d[1] * (idx[2] + d[2] * c));
                    out.push(raw.data[flat]);
                }
            }
        }
    }
    Ok(Tensor::new(vec![n, m, h, w], out))
}

/// Central `(ch, cw)` window of every slice; fails if anything non-zero would
/// be discarded.
pub fn center_crop(voxels: &Tensor, ch: usize, cw: usize) -> Result<Tensor> {
    let (n, m, h, w) = voxels.dims4();
    if ch > h || cw > w {
        return Err(Error::InvalidVolume(format!(
            "crop {ch}x{cw} exceeds slice dims {h}x{w}"
        )));
    }
    let (top, left) = ((h - ch) / 2, (w - cw) / 2);
    let mut out = Vec::with_capacity(n * m * ch * cw);
    let mut lost = 0usize;
    let mut lost_max = 0.0f64;
    for plane in 0..n * m {
        let base = plane * h * w;
        for y in 0..h {
            for x in 0..w {
                let v = voxels.data()[base + y * w + x];
                let inside = y >= top && y < top + ch && x >= left && x < left + cw;
                if inside {
                    out.push(v);
                } else if v != 0.0 {
                    lost += 1;
                    lost_max = lost_max.max(v.abs());
                }
            }
        }
    }
    if lost > 0 {
        return Err(Error::InvalidVolume(format!(
            "crop {ch}x{cw} of {h}x{w} slices would discard {lost} non-zero voxels (max |v| = {lost_max})"
        )));
    }
    Ok(Tensor::new(vec![n, m, ch, cw], out))
}

/// Per-modality min-max normalization over the whole volume. Returns the
/// normalized voxels and the overall raw range.
pub fn normalize(voxels: &Tensor) -> Result<(Tensor, (f64, f64))> {
    let (n, m, h, w) = voxels.dims4();
    let plane = h * w;
    let mut out = voxels.clone();
    let mut overall = (f64::INFINITY, f64::NEG_INFINITY);
    for c in 0..m {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for z in 0..n {
            let base = (z * m + c) * plane;
            for &v in &voxels.data()[base..base + plane] {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if hi <= lo {
            return Err(Error::InvalidVolume(format!(
                "modality {c} is constant ({lo}); cannot min-max normalize"
            )));
        }
        overall = (overall.0.min(lo), overall.1.max(hi));
        let span = hi - lo;
        for z in 0..n {
            let base = (z * m + c) * plane;
            for v in &mut out.data_mut()[base..base + plane] {
                *v = ((*v - lo) / span).clamp(0.0, 1.0);
            }
        }
    }
    Ok((out, overall))
}

/// Loads a NIfTI (`.nii`, `.nii.gz`) or raw (`.rvol`) volume, crops every
/// slice to the profile and normalizes to `[0, 1]`.
pub fn load_volume(path: &Path, profile: &DatasetProfile) -> Result<Volume> {
    profile.validate()?;
    let raw = io::read_any(path)?;
    if raw.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidVolume(format!("{} contains NaN or infinite voxels", path.display())));
    }
    if raw.data.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidVolume(
            "crop profile cannot be validated on empty volume".into(),
        ));
    }
    let stacked = slice_stack(&raw, profile.plane)?;
    let m = stacked.shape()[1];
    if m != profile.channels {
        return Err(Error::InvalidVolume(format!(
            "{} has {m} modalities, profile `{}` expects {}",
            path.display(),
            profile.name,
            profile.channels
        )));
    }
    let cropped = center_crop(&stacked, profile.crop_height, profile.crop_width)
        .map_err(|e| Error::InvalidVolume(format!("{}: {e}", path.display())))?;
    let (voxels, range) = normalize(&cropped)?;
    let names = raw
        .modality_names
        .unwrap_or_else(|| (0..m).map(|c| format!("m{c}")).collect());
    Volume::new(voxels, names, range)
}

impl DatasetProfile {
    pub fn is_phantom(&self) -> bool {
        self.name.starts_with("phantom")
    }
}

/// `n` synthetic volumes for a phantom profile, cropped and normalized
/// exactly as [`load_volume`] treats files, with ids `phantom-{seed + i}`.
pub fn phantom_volumes(profile: &DatasetProfile, n: usize, n_slices: usize, seed: u64) -> Result<Vec<(String, Volume)>> {
    if !profile.is_phantom() {
        return Err(Error::config("data.profile", format!("`{}` is not a phantom profile", profile.name)));
    }
    (0..n as u64)
        .map(|i| {
            let raw = synth_phantom_channels(seed + i, PHANTOM_RAW_DIMS, n_slices, profile.channels)?;
            let cropped = center_crop(&raw.voxels, profile.crop_height, profile.crop_width)?;
            let (voxels, range) = normalize(&cropped)?;
            Ok((format!("phantom-{}", seed + i), Volume::new(voxels, raw.modality_names, range)?))
        })
        .collect()
}

/// Volume id used to keep train and test splits disjoint: the file name
/// without extensions.
pub fn volume_id(path: &Path) -> String {
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    name.split('.').next().unwrap_or_default().to_string()
}
