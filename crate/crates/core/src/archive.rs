//! Tensor archives in the safetensors format, written atomically.
//!
//! Tensors are stored as little-endian `f64` in name order. Metadata is a
//! single JSON document under one header key, so the bytes of an archive are a
//! pure function of its contents.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

const META_KEY: &str = "arbsr";

fn ck(e: impl std::fmt::Display) -> Error {
    Error::Checkpoint(e.to_string())
}

/// Serializes tensors plus a JSON metadata value.
pub fn to_bytes(tensors: &ParamStore, metadata: &serde_json::Value) -> Result<Vec<u8>> {
    let raw: Vec<(String, Vec<usize>, Vec<u8>)> = tensors
        .iter()
        .map(|(k, t)| {
            let bytes = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            (k.clone(), t.shape().to_vec(), bytes)
        })
        .collect();
    let views = raw
        .iter()
        .map(|(k, shape, bytes)| Ok((k.as_str(), TensorView::new(Dtype::F64, shape.clone(), bytes).map_err(ck)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut info = HashMap::new();
    info.insert(META_KEY.to_string(), serde_json::to_string(metadata).map_err(ck)?);
    safetensors::serialize(views, Some(info)).map_err(ck)
}

/// Decodes tensors (any float dtype is widened to `f64`) and the metadata
/// value, if present.
pub fn from_bytes(bytes: &[u8]) -> Result<(ParamStore, Option<serde_json::Value>)> {
    let st = SafeTensors::deserialize(bytes).map_err(ck)?;
    let mut store = ParamStore::new();
    for (name, view) in st.tensors() {
        let data = decode(&name, &view)?;
        store.insert(name, Arc::new(Tensor::new(view.shape().to_vec(), data)));
    }
    let (_, meta) = SafeTensors::read_metadata(bytes).map_err(ck)?;
    let value = match meta.metadata().as_ref().and_then(|m| m.get(META_KEY)) {
        Some(s) => Some(serde_json::from_str(s).map_err(ck)?),
        None => None,
    };
    Ok((store, value))
}

fn decode(name: &str, view: &TensorView<'_>) -> Result<Vec<f64>> {
    let d = view.data();
    Ok(match view.dtype() {
        Dtype::F64 => d.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        Dtype::F32 => d
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::BF16 => d
            .chunks_exact(2)
            .map(|c| f32::from_bits((u16::from_le_bytes([c[0], c[1]]) as u32) << 16) as f64)
            .collect(),
        other => {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has unsupported dtype {other:?}"
            )))
        }
    })
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// flushed to disk before it replaces the destination.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
        if let Ok(d) = fs::File::open(dir) {
            let _ = d.sync_all();
        }
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub fn save(path: &Path, tensors: &ParamStore, metadata: &serde_json::Value) -> Result<()> {
    write_atomic(path, &to_bytes(tensors, metadata)?)
}

pub fn load(path: &Path) -> Result<(ParamStore, Option<serde_json::Value>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_and_deterministic() {
        let mut store = ParamStore::new();
        store.insert("b.weight".into(), Arc::new(Tensor::from_fn(&[2, 3], |i| (i as f64).sqrt() / 7.0)));
        store.insert("a.bias".into(), Arc::new(Tensor::from_fn(&[3], |i| -(i as f64) * 1e-300)));
        let meta = serde_json::json!({"step": 12, "config": {"x": 1.5}});
        let bytes = to_bytes(&store, &meta).unwrap();
        for _ in 0..5 {
            assert_eq!(to_bytes(&store, &meta).unwrap(), bytes);
        }
        let (back, m) = from_bytes(&bytes).unwrap();
        assert_eq!(back, store);
        assert_eq!(m.unwrap(), meta);
    }
}
