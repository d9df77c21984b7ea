//! Discriminator / critic: strided conv blocks, global average pool and a
//! scalar head. No normalization layers, so scores never couple samples.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autograd::{Backend, Bound, Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{self, InitScheme, ParamStore};
use crate::tensor::{ConvGeom, Tensor};

/// Prefix of every critic tensor in a checkpoint.
pub const PREFIX: &str = "critic.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadMode {
    /// Scores squashed to `(0, 1)`.
    SigmoidClassifier,
    /// Raw real-valued scores.
    LinearCritic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticConfig {
    pub n_blocks: usize,
    pub base_channels: usize,
    pub negative_slope: f64,
    pub head_mode: HeadMode,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            n_blocks: 7,
            base_channels: 64,
            negative_slope: 0.2,
            head_mode: HeadMode::SigmoidClassifier,
        }
    }
}

impl CriticConfig {
    /// Small critic for 24-pixel desk patches.
    pub fn desk() -> Self {
        Self {
            n_blocks: 4,
            base_channels: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 {
            return Err(Error::config("critic.n_blocks", "must be at least 1"));
        }
        if self.base_channels == 0 {
            return Err(Error::config("critic.base_channels", "must be at least 1"));
        }
        if !(self.negative_slope.is_finite() && self.negative_slope >= 0.0) {
            return Err(Error::config("critic.negative_slope", "must be a non-negative number"));
        }
        Ok(())
    }

    /// Width of block `i`: doubles every second block.
    pub fn block_channels(&self, i: usize) -> usize {
        self.base_channels << (i / 2)
    }

    /// Spatial sizes through the stride-2 chain, starting with `len`. Each
    /// halving rounds up; a halving that would receive a size of 1 means the
    /// input is too small for the configured depth.
    pub fn spatial_trace(&self, len: usize) -> Result<Vec<usize>> {
        let mut out = vec![len];
        let mut cur = len;
        for i in 0..self.n_blocks {
            if cur <= 1 {
                return Err(Error::Shape(format!(
                    "spatial collapse: input of size {len} is exhausted before block {} of {}",
                    i + 1,
                    self.n_blocks
                )));
            }
            cur = cur.div_ceil(2);
            out.push(cur);
        }
        Ok(out)
    }

    pub fn param_shapes(&self, in_channels: usize) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut c_in = in_channels;
        for i in 0..self.n_blocks {
            let c = self.block_channels(i);
            out.push((format!("critic.blocks.{i}.conv1.weight"), vec![c, c_in, 3, 3]));
            out.push((format!("critic.blocks.{i}.conv1.bias"), vec![c]));
            out.push((format!("critic.blocks.{i}.conv2.weight"), vec![c, c, 3, 3]));
            out.push((format!("critic.blocks.{i}.conv2.bias"), vec![c]));
            c_in = c;
        }
        out.push(("critic.head.weight".into(), vec![1, c_in]));
        out.push(("critic.head.bias".into(), vec![1]));
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }
}

/// Pre-squash scores `[n]` of an image batch `[n, m, h, w]`.
pub fn critic_logits<B: Backend>(b: &B, x: &B::T, p: &Bound<B::T>, config: &CriticConfig) -> Result<B::T> {
    let shape = b.shape(x);
    if shape.len() != 4 {
        return Err(Error::Shape(format!("critic expects [n, m, h, w], got {shape:?}")));
    }
    config.spatial_trace(shape[2])?;
    config.spatial_trace(shape[3])?;
    let n = shape[0];
    let mut y = x.clone();
    for i in 0..config.n_blocks {
        for (conv, geom) in [("conv1", ConvGeom::new(1, 1)), ("conv2", ConvGeom::new(2, 1))] {
            let w = p.get(&format!("critic.blocks.{i}.{conv}.weight"))?;
            let bias = p.get(&format!("critic.blocks.{i}.{conv}.bias"))?;
            y = b.conv2d(&y, &w, geom);
            y = b.add_bias(&y, &bias);
            y = b.leaky_relu(&y, config.negative_slope);
        }
    }
    let pooled = b.global_avg_pool(&y);
    let s = b.matmul(&pooled, &p.get("critic.head.weight")?, false, true);
    let s = b.add_bias(&s, &p.get("critic.head.bias")?);
    Ok(b.reshape(&s, &[n]))
}

/// Scores `[n]`: sigmoid of the logits in classifier mode, raw otherwise.
pub fn critic_forward<B: Backend>(b: &B, x: &B::T, p: &Bound<B::T>, config: &CriticConfig) -> Result<B::T> {
    let s = critic_logits(b, x, p, config)?;
    Ok(match config.head_mode {
        HeadMode::SigmoidClassifier => b.sigmoid(&s),
        HeadMode::LinearCritic => s,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    pub config: CriticConfig,
    pub in_channels: usize,
    pub params: ParamStore,
}

impl Critic {
    pub fn new(config: CriticConfig, in_channels: usize, seed: u64, scheme: InitScheme) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, shape) in config.param_shapes(in_channels) {
            if let Some(prefix) = name.strip_suffix(".weight") {
                nn::init_layer(&mut params, prefix, &shape, scheme, seed);
            }
        }
        Ok(Self {
            config,
            in_channels,
            params,
        })
    }

    pub fn from_params(config: CriticConfig, in_channels: usize, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected = config.param_shapes(in_channels);
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "critic expects {} tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape) in &expected {
            let t = params.get(name).ok_or_else(|| Error::MissingParam(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!("`{name}` has shape {:?}, expected {shape:?}", t.shape())));
            }
        }
        Ok(Self {
            config,
            in_channels,
            params,
        })
    }

    /// Scores of an image batch in the configured head mode.
    pub fn scores(&self, images: &Tensor) -> Result<Tensor> {
        let b = crate::autograd::Eager;
        let x = Arc::new(images.clone());
        Ok((*critic_forward(&b, &x, &b.bind(&self.params), &self.config)?).clone())
    }

    /// Binds the parameters into `g` for use with the losses.
    pub fn bind<'a>(&'a self, g: &Graph) -> BoundCritic<'a> {
        BoundCritic {
            config: &self.config,
            params: g.bind(&self.params),
        }
    }
}

/// A scoring function usable inside a [`Graph`]; `logits` returns `[n]`
/// pre-squash scores, which are raw scores for critics.
pub trait Discriminator {
    fn logits(&self, g: &Graph, x: Var) -> Result<Var>;
}

/// Network critic with parameters bound into one graph.
pub struct BoundCritic<'a> {
    pub config: &'a CriticConfig,
    pub params: Bound<Var>,
}

impl BoundCritic<'_> {
    /// Parameter nodes in name order.
    pub fn param_vars(&self) -> Vec<(String, Var)> {
        self.params.iter().map(|(k, v)| (k.clone(), *v)).collect()
    }
}

impl Discriminator for BoundCritic<'_> {
    fn logits(&self, g: &Graph, x: Var) -> Result<Var> {
        critic_logits(g, &x, &self.params, self.config)
    }
}

/// `D(I) = c · Σ pixels`. With `c = 1` the input gradient has norm `√N`; with
/// `c = 1/√N` it has unit norm everywhere.
#[derive(Clone, Copy, Debug)]
pub struct LinearSumCritic {
    pub coefficient: f64,
}

impl Discriminator for LinearSumCritic {
    fn logits(&self, g: &Graph, x: Var) -> Result<Var> {
        let s = g.sum_per_sample(x);
        Ok(g.scale(s, self.coefficient))
    }
}

/// Returns the same score for every input.
#[derive(Clone, Copy, Debug)]
pub struct ConstantCritic(pub f64);

impl Discriminator for ConstantCritic {
    fn logits(&self, g: &Graph, x: Var) -> Result<Var> {
        let n = g.shape(x)[0];
        Ok(g.leaf(Tensor::full(&[n], self.0)))
    }
}

/// Per-image 2-norm of `∂D(I)/∂I`, through the full network.
pub fn critic_gradient_norm(images: &Tensor, d: &dyn Discriminator, g: &Graph) -> Result<Vec<f64>> {
    let x = g.leaf(images.clone());
    let s = d.logits(g, x)?;
    let total = g.sum(s);
    let dx = g.grad(total, &[x])[0];
    let sq = g.square(dx);
    let per = g.sum_per_sample(sq);
    Ok(g.value(per).data().iter().map(|v| v.sqrt()).collect())
}
