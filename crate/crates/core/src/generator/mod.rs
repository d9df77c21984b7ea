//! The super-resolution generator: a residual feature extractor followed by a
//! meta-upscale module whose kernels are predicted from the scale and each
//! output pixel's sub-pixel offset.

pub mod meta;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autograd::{Backend, Bound, Eager};
use crate::error::{Error, Result};
use crate::nn::{self, InitScheme, ParamStore, LEAKY_SLOPE};
use crate::tensor::{ConvGeom, Tensor};

pub use meta::{dense_upscale, MetaPlan, MetaWeights};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub depth: usize,
    pub width: usize,
    pub kernel_size: usize,
    pub res_scale: f64,
    pub channels: usize,
    pub meta_hidden: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            depth: 16,
            width: 64,
            kernel_size: 3,
            res_scale: 1.0,
            channels: 1,
            meta_hidden: 256,
        }
    }
}

impl GeneratorConfig {
    pub fn tiny() -> Self {
        Self {
            depth: 4,
            width: 16,
            meta_hidden: 32,
            ..Self::default()
        }
    }

    /// Structural checks. A depth of zero is accepted here (head, tail and the
    /// global residual still apply); run configs require at least one block.
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::config("model.width", "must be at least 1"));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::config("model.kernel_size", "must be odd"));
        }
        if !(self.res_scale.is_finite() && self.res_scale > 0.0) {
            return Err(Error::config("model.res_scale", "must be positive and finite"));
        }
        if !matches!(self.channels, 1 | 4) {
            return Err(Error::config("model.channels", "must be 1 or 4"));
        }
        if self.meta_hidden == 0 {
            return Err(Error::config("model.meta_hidden", "must be at least 1"));
        }
        Ok(())
    }

    /// Scalars in one predicted kernel: `channels × width × k × k`.
    pub fn kernel_len(&self) -> usize {
        self.channels * self.width * self.kernel_size * self.kernel_size
    }

    /// Every parameter name with its shape, in checkpoint order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (w, k, m, h) = (self.width, self.kernel_size, self.channels, self.meta_hidden);
        let mut out = vec![
            ("head.weight".to_string(), vec![w, m, k, k]),
            ("head.bias".to_string(), vec![w]),
        ];
        for i in 0..self.depth {
            for c in ["conv1", "conv2"] {
                out.push((format!("body.{i}.{c}.weight"), vec![w, w, k, k]));
                out.push((format!("body.{i}.{c}.bias"), vec![w]));
            }
        }
        out.push(("tail.weight".to_string(), vec![w, w, k, k]));
        out.push(("tail.bias".to_string(), vec![w]));
        out.push(("meta_net.fc1.weight".to_string(), vec![h, 3]));
        out.push(("meta_net.fc1.bias".to_string(), vec![h]));
        out.push(("meta_net.fc2.weight".to_string(), vec![self.kernel_len(), h]));
        out.push(("meta_net.fc2.bias".to_string(), vec![self.kernel_len()]));
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }
}

/// Kernels predicted by the meta-net act as a convolution over `w·k²`
/// inputs, so the output layer's weights are shrunk by `1/√(w·k²)` to start
/// the predicted kernels at the scale of a freshly initialized conv.
pub fn meta_output_gain(config: &GeneratorConfig) -> f64 {
    1.0 / ((config.width * config.kernel_size * config.kernel_size) as f64).sqrt()
}

fn init_layer(
    params: &mut ParamStore,
    config: &GeneratorConfig,
    prefix: &str,
    shape: &[usize],
    scheme: InitScheme,
    seed: u64,
) {
    nn::init_layer(params, prefix, shape, scheme, seed);
    if prefix == "meta_net.fc2" {
        let name = format!("{prefix}.weight");
        let gain = meta_output_gain(config);
        let w = params[&name].map(|v| v * gain);
        params.insert(name, Arc::new(w));
    }
}

/// Exact number of trainable scalars of a generator with this config.
pub fn count_params(config: &GeneratorConfig) -> usize {
    config
        .param_shapes()
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum()
}

fn conv<B: Backend>(b: &B, x: &B::T, p: &Bound<B::T>, prefix: &str, k: usize) -> Result<B::T> {
    let w = p.get(&format!("{prefix}.weight"))?;
    let bias = p.get(&format!("{prefix}.bias"))?;
    let y = b.conv2d(x, &w, ConvGeom::same(k));
    Ok(b.add_bias(&y, &bias))
}

/// One enhanced residual block: `x + α · conv2(lrelu(conv1(x)))`, where
/// `conv1` is applied first.
pub fn erb_forward<B: Backend>(
    b: &B,
    x: &B::T,
    p: &Bound<B::T>,
    block: usize,
    config: &GeneratorConfig,
) -> Result<B::T> {
    let shape = b.shape(x);
    if shape.len() != 4 || shape[1] != config.width {
        return Err(Error::Shape(format!(
            "residual block expects {} channels, got input {shape:?}",
            config.width
        )));
    }
    let k = config.kernel_size;
    let y = conv(b, x, p, &format!("body.{block}.conv1"), k)?;
    let y = b.leaky_relu(&y, LEAKY_SLOPE);
    let y = conv(b, &y, p, &format!("body.{block}.conv2"), k)?;
    let y = b.scale(&y, config.res_scale);
    Ok(b.add(x, &y))
}

/// Head conv, residual blocks, tail conv, plus the global skip from the head.
pub fn extract_features<B: Backend>(
    b: &B,
    x: &B::T,
    p: &Bound<B::T>,
    config: &GeneratorConfig,
) -> Result<B::T> {
    let shape = b.shape(x);
    if shape.len() != 4 || shape[1] != config.channels {
        return Err(Error::Shape(format!(
            "generator expects [n, {}, h, w] input, got {shape:?}",
            config.channels
        )));
    }
    let k = config.kernel_size;
    let head = conv(b, x, p, "head", k)?;
    let mut f = head.clone();
    for i in 0..config.depth {
        f = erb_forward(b, &f, p, i, config)?;
    }
    let f = conv(b, &f, p, "tail", k)?;
    Ok(b.add(&f, &head))
}

/// Kernel table `[plan.n_kernels(), kernel_len]`, one row per distinct
/// sub-pixel offset pair.
pub fn predict_kernels<B: Backend>(b: &B, plan: &MetaPlan, p: &Bound<B::T>) -> Result<B::T> {
    let x = b.leaf(Arc::new(plan.meta_inputs()));
    let h = b.matmul(&x, &p.get("meta_net.fc1.weight")?, false, true);
    let h = b.add_bias(&h, &p.get("meta_net.fc1.bias")?);
    let h = b.leaky_relu(&h, LEAKY_SLOPE);
    let k = b.matmul(&h, &p.get("meta_net.fc2.weight")?, false, true);
    Ok(b.add_bias(&k, &p.get("meta_net.fc2.bias")?))
}

/// Plan for a feature map of `in_dims` at scale `s`.
pub fn plan_for(config: &GeneratorConfig, s: f64, in_dims: (usize, usize)) -> Result<Arc<MetaPlan>> {
    Ok(Arc::new(MetaPlan::for_input(
        s,
        in_dims,
        config.kernel_size,
        config.width,
        config.channels,
    )?))
}

/// Full differentiable forward pass, unclamped: `[n, m, h, w] -> [n, m, ⌊s·h⌋, ⌊s·w⌋]`.
pub fn forward<B: Backend>(
    b: &B,
    x: &B::T,
    s: f64,
    p: &Bound<B::T>,
    config: &GeneratorConfig,
) -> Result<B::T> {
    let f = extract_features(b, x, p, config)?;
    let shape = b.shape(&f);
    let plan = plan_for(config, s, (shape[2], shape[3]))?;
    let k = predict_kernels(b, &plan, p)?;
    Ok(b.meta_upscale(&f, &k, &plan))
}

/// Generator state: a config and its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub params: ParamStore,
}

impl Generator {
    /// Fresh generator with Kaiming-initialized weights and zero biases.
    pub fn new(config: GeneratorConfig, seed: u64, scheme: InitScheme) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, shape) in config.param_shapes() {
            if let Some(prefix) = name.strip_suffix(".weight") {
                init_layer(&mut params, &config, prefix, &shape, scheme, seed);
            }
        }
        Ok(Self { config, params })
    }

    /// Wraps an existing parameter map after checking names and shapes.
    pub fn from_params(config: GeneratorConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected = config.param_shapes();
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "generator expects {} tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape) in &expected {
            let t = params.get(name).ok_or_else(|| Error::MissingParam(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {:?}, config requires {shape:?}",
                    t.shape()
                )));
            }
            if !t.all_finite() {
                return Err(Error::Checkpoint(format!("`{name}` contains non-finite values")));
            }
        }
        Ok(Self { config, params })
    }

    pub fn param_count(&self) -> usize {
        nn::count(&self.params)
    }

    fn bound(&self) -> Bound<Arc<Tensor>> {
        Eager.bind(&self.params)
    }

    /// Feature map of a batch `[n, m, h, w]`.
    pub fn features(&self, lr: &Tensor) -> Result<Tensor> {
        let x = Arc::new(lr.clone());
        Ok((*extract_features(&Eager, &x, &self.bound(), &self.config)?).clone())
    }

    /// Inference: super-resolves a batch `[n, m, h, w]` (or a single
    /// `[m, h, w]` image) at scale `s` and clamps to `[0, 1]`.
    pub fn generate(&self, lr: &Tensor, s: f64) -> Result<Tensor> {
        let single = lr.shape().len() == 3;
        let x = if single {
            let mut shape = vec![1];
            shape.extend_from_slice(lr.shape());
            lr.clone().reshape(&shape)
        } else {
            lr.clone()
        };
        if !x.all_finite() {
            return Err(Error::InvalidArgument("input image contains non-finite values".into()));
        }
        let y = forward(&Eager, &Arc::new(x), s, &self.bound(), &self.config)?;
        let y = y.map(|v| v.clamp(0.0, 1.0));
        Ok(if single {
            let shape = y.shape()[1..].to_vec();
            y.reshape(&shape)
        } else {
            y
        })
    }

    /// Predicted kernels for a feature map of `in_dims` upscaled to `out_dims`.
    pub fn predict_weights(&self, s: f64, in_dims: (usize, usize), out_dims: (usize, usize)) -> Result<MetaWeights> {
        let plan = Arc::new(MetaPlan::new(
            s,
            in_dims,
            out_dims,
            self.config.kernel_size,
            self.config.width,
            self.config.channels,
        )?);
        let k = predict_kernels(&Eager, &plan, &self.bound())?;
        MetaWeights::new(plan, (*k).clone())
    }

    fn check_feature_map(&self, f: &Tensor) -> Result<(usize, usize)> {
        match f.shape() {
            [c, h, w] if *c == self.config.width => Ok((*h, *w)),
            other => Err(Error::Shape(format!(
                "feature map must be [{}, h, w], got {other:?}",
                self.config.width
            ))),
        }
    }

    /// Local-kernel meta-upscale of one feature map `[w, h, w]`.
    pub fn meta_upscale_local(&self, f: &Tensor, s: f64) -> Result<Tensor> {
        let dims = self.check_feature_map(f)?;
        let plan = plan_for(&self.config, s, dims)?;
        let k = predict_kernels(&Eager, &plan, &self.bound())?;
        let mut shape = vec![1];
        shape.extend_from_slice(f.shape());
        let y = meta::upscale(&f.clone().reshape(&shape), &k, &plan);
        let out = y.shape()[1..].to_vec();
        Ok(y.reshape(&out))
    }

    /// Literal dense-matrix meta-upscale of one feature map, refusing when the
    /// magnification matrix would exceed `element_cap` scalars.
    pub fn meta_upscale_dense(&self, f: &Tensor, s: f64, element_cap: usize) -> Result<Tensor> {
        let (h, w) = self.check_feature_map(f)?;
        let weights = self.predict_weights(
            s,
            (h, w),
            (crate::scale::scaled_len(h, s), crate::scale::scaled_len(w, s)),
        )?;
        dense_upscale(f, &weights, element_cap)
    }

    /// Copy adapted to `channels` image channels. When the channel count
    /// changes, the channel-dependent layers (head conv and the meta-net output
    /// layer) are re-initialized from `seed`; everything else is kept bit-exact.
    pub fn with_channels(&self, channels: usize, seed: u64, scheme: InitScheme) -> Result<Self> {
        if channels == self.config.channels {
            return Ok(self.clone());
        }
        let config = GeneratorConfig {
            channels,
            ..self.config.clone()
        };
        config.validate()?;
        let mut params = self.params.clone();
        let shapes: std::collections::BTreeMap<_, _> = config.param_shapes().into_iter().collect();
        for prefix in Self::CHANNEL_LAYERS {
            let wname = format!("{prefix}.weight");
            init_layer(&mut params, &config, prefix, &shapes[&wname], scheme, seed);
        }
        Self::from_params(config, params)
    }

    /// Layers whose shapes depend on the image channel count.
    pub const CHANNEL_LAYERS: [&'static str; 2] = ["head", "meta_net.fc2"];
}
