//! Named parameter storage and weight initialization.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Flat map of named parameter tensors, ordered by name.
pub type ParamStore = BTreeMap<String, Arc<Tensor>>;

/// Negative slope of every leaky-ReLU in the generator and critic.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    KaimingUniform,
    KaimingNormal,
}

impl std::str::FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kaiming-uniform" => Ok(Self::KaimingUniform),
            "kaiming-normal" => Ok(Self::KaimingNormal),
            other => Err(Error::InvalidArgument(format!(
                "unknown init scheme `{other}` (expected kaiming-uniform or kaiming-normal)"
            ))),
        }
    }
}

/// Gain of a leaky-ReLU with the given negative slope.
pub fn leaky_gain(slope: f64) -> f64 {
    (2.0 / (1.0 + slope * slope)).sqrt()
}

/// Half-width of the Kaiming-uniform interval for `fan_in`.
pub fn kaiming_uniform_bound(fan_in: usize, slope: f64) -> f64 {
    leaky_gain(slope) * (3.0 / fan_in as f64).sqrt()
}

/// Independent RNG stream for one named parameter, so a tensor's initial value
/// does not depend on which other parameters exist.
pub fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Draws a weight tensor whose fan-in is `shape[1..].product()`.
pub fn init_weight(shape: &[usize], scheme: InitScheme, seed: u64, name: &str) -> Tensor {
    let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
    let mut rng = param_rng(seed, name);
    match scheme {
        InitScheme::KaimingUniform => {
            let b = kaiming_uniform_bound(fan_in, LEAKY_SLOPE);
            Tensor::from_fn(shape, |_| rng.random_range(-b..b))
        }
        InitScheme::KaimingNormal => {
            let std = leaky_gain(LEAKY_SLOPE) / (fan_in as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("finite std");
            Tensor::from_fn(shape, |_| dist.sample(&mut rng))
        }
    }
}

/// Adds `{prefix}.weight` and a zero `{prefix}.bias` to `store`.
pub(crate) fn init_layer(
    store: &mut ParamStore,
    prefix: &str,
    weight_shape: &[usize],
    scheme: InitScheme,
    seed: u64,
) {
    let wname = format!("{prefix}.weight");
    let w = init_weight(weight_shape, scheme, seed, &wname);
    store.insert(wname, Arc::new(w));
    store.insert(format!("{prefix}.bias"), Arc::new(Tensor::zeros(&[weight_shape[0]])));
}

pub fn count(store: &ParamStore) -> usize {
    store.values().map(|t| t.numel()).sum()
}

/// SHA-256 over names, shapes and values; used to prove state was not touched.
pub fn store_digest(store: &ParamStore) -> String {
    let mut h = Sha256::new();
    for (k, v) in store {
        h.update(k.as_bytes());
        for d in v.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for x in v.data() {
            h.update(x.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_weights() {
        let a = init_weight(&[8, 4, 3, 3], InitScheme::KaimingUniform, 7, "x.weight");
        let b = init_weight(&[8, 4, 3, 3], InitScheme::KaimingUniform, 7, "x.weight");
        let c = init_weight(&[8, 4, 3, 3], InitScheme::KaimingUniform, 8, "x.weight");
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_variance_matches_closed_form() {
        let w = init_weight(&[64, 64, 3, 3], InitScheme::KaimingUniform, 1, "conv.weight");
        let b = kaiming_uniform_bound(64 * 9, LEAKY_SLOPE);
        let target = b * b / 3.0;
        let mean = w.mean();
        let var = w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.numel() as f64;
        assert!((var / target - 1.0).abs() < 0.1, "var {var} target {target}");
    }

    #[test]
    fn scheme_names() {
        assert_eq!("kaiming-normal".parse::<InitScheme>().unwrap(), InitScheme::KaimingNormal);
        assert!("xavier".parse::<InitScheme>().is_err());
    }
}
