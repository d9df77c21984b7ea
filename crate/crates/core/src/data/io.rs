//! Volume decoding: NIfTI via the `nifti` crate, and a portable raw format.
//!
//! Raw format: one line of JSON (`{"format": "arbsr-raw-v1", "dims": [...],
//! "modalities": [...]}`) terminated by `\n`, followed by little-endian `f32`
//! voxels with the first axis varying fastest (the NIfTI convention).

use std::fs;
use std::io::Write;
use std::path::Path;

use nifti::{IntoNdArray, NiftiObject, ReaderOptions};
use serde::{Deserialize, Serialize};

use super::{RawArray, Volume};
use crate::error::{Error, Result};

pub const RAW_EXTENSION: &str = "rvol";
const RAW_FORMAT: &str = "arbsr-raw-v1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHeader {
    format: String,
    dims: Vec<usize>,
    #[serde(default)]
    modalities: Option<Vec<String>>,
}

fn decode_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub(crate) fn read_any(path: &Path) -> Result<RawArray> {
    let name = path.to_string_lossy();
    if name.ends_with(".nii") || name.ends_with(".nii.gz") {
        read_nifti(path)
    } else if name.ends_with(&format!(".{RAW_EXTENSION}")) {
        read_raw_array(path)
    } else {
        Err(decode_err(path, "unsupported extension (expected .nii, .nii.gz or .rvol)"))
    }
}

fn read_nifti(path: &Path) -> Result<RawArray> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let obj = ReaderOptions::new()
        .read_file(path)
        .map_err(|e| decode_err(path, e.to_string()))?;
    let arr = obj
        .into_volume()
        .into_ndarray::<f64>()
        .map_err(|e| decode_err(path, e.to_string()))?;
    let dims = arr.shape().to_vec();
    // Reversed axes iterate in first-axis-fastest order.
    let data: Vec<f64> = arr.t().iter().copied().collect();
    Ok(RawArray {
        dims,
        data,
        modality_names: None,
    })
}

fn read_raw_array(path: &Path) -> Result<RawArray> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| decode_err(path, "missing header line"))?;
    let header: RawHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| decode_err(path, format!("bad header: {e}")))?;
    if header.format != RAW_FORMAT {
        return Err(decode_err(path, format!("unknown format tag `{}`", header.format)));
    }
    let n: usize = header.dims.iter().product();
    let payload = &bytes[nl + 1..];
    if payload.len() != n * 4 {
        return Err(decode_err(
            path,
            format!("payload has {} bytes, dims {:?} need {}", payload.len(), header.dims, n * 4),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(RawArray {
        dims: header.dims,
        data,
        modality_names: header.modalities,
    })
}

/// Reads a raw volume without cropping or normalization, as `[slices, m, h, w]`
/// along the axial plane.
pub fn read_raw(path: &Path) -> Result<Volume> {
    let raw = read_raw_array(path)?;
    let voxels = super::slice_stack(&raw, super::SlicePlane::Axial)?;
    let m = voxels.shape()[1];
    let lo = raw.data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let names = raw
        .modality_names
        .unwrap_or_else(|| (0..m).map(|c| format!("m{c}")).collect());
    Volume::new(voxels, names, (lo, hi))
}

/// Writes a volume in the raw format with slices along the third axis.
/// The file is written next to `path` and renamed into place.
pub fn write_raw(path: &Path, volume: &Volume) -> Result<()> {
    let (n, m, h, w) = volume.voxels.dims4();
    let dims = if m == 1 { vec![h, w, n] } else { vec![h, w, n, m] };
    let header = RawHeader {
        format: RAW_FORMAT.into(),
        dims,
        modalities: Some(volume.modality_names.clone()),
    };
    let mut buf = serde_json::to_vec(&header).expect("header serializes");
    buf.push(b'\n');
    buf.reserve(n * m * h * w * 4);
    let v = volume.voxels.data();
    for c in 0..m {
        for z in 0..n {
            for q in 0..w {
                for r in 0..h {
                    buf.extend_from_slice(&(v[((z * m + c) * h + r) * w + q] as f32).to_le_bytes());
                }
            }
        }
    }
    let tmp = path.with_extension(format!("{RAW_EXTENSION}.tmp"));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
