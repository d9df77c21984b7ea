//! Frozen feature extractors and the perceptual loss.

use std::path::Path;
use std::sync::Arc;

use crate::archive;
use crate::autograd::{Backend, Bound, Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{self, InitScheme, ParamStore};
use crate::tensor::{ConvGeom, Tensor};

use super::mse_loss;

/// Pre-activation output of the last conv of the fifth VGG block.
pub const DEFAULT_VGG_TAG: &str = "conv5_4";

/// A frozen network mapping single-channel images `[n, 1, h, w]` to feature
/// maps. Its parameters are constants of every graph it is used in.
pub trait FeatureExtractor: Send + Sync {
    fn tag(&self) -> &str;
    fn features(&self, g: &Graph, x: Var) -> Result<Var>;
}

/// Feature map equal to the image; the perceptual loss becomes pixel MSE.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn tag(&self) -> &str {
        "identity"
    }

    fn features(&self, _g: &Graph, x: Var) -> Result<Var> {
        Ok(x)
    }
}

/// Two 3×3 convs (1→8→8) with seeded random weights; the output is taken
/// before the second activation.
#[derive(Clone, Debug)]
pub struct SeededConvExtractor {
    params: ParamStore,
}

impl SeededConvExtractor {
    pub const TAG: &'static str = "seeded-small-conv";

    pub fn new(seed: u64) -> Self {
        let mut params = ParamStore::new();
        nn::init_layer(&mut params, "conv1", &[8, 1, 3, 3], InitScheme::KaimingUniform, seed);
        nn::init_layer(&mut params, "conv2", &[8, 8, 3, 3], InitScheme::KaimingUniform, seed);
        Self { params }
    }
}

fn conv<B: Backend>(b: &B, x: &B::T, p: &Bound<B::T>, name: &str) -> Result<B::T> {
    let y = b.conv2d(x, &p.get(&format!("{name}.weight"))?, ConvGeom::same(3));
    Ok(b.add_bias(&y, &p.get(&format!("{name}.bias"))?))
}

fn check_single_channel(shape: &[usize], who: &str) -> Result<()> {
    if shape.len() != 4 || shape[1] != 1 {
        return Err(Error::Shape(format!("{who} expects [n, 1, h, w], got {shape:?}")));
    }
    Ok(())
}

impl FeatureExtractor for SeededConvExtractor {
    fn tag(&self) -> &str {
        Self::TAG
    }

    fn features(&self, g: &Graph, x: Var) -> Result<Var> {
        check_single_channel(&g.shape(x), Self::TAG)?;
        let p = g.bind(&self.params);
        let y = conv(g, &x, &p, "conv1")?;
        let y = g.leaky_relu(y, nn::LEAKY_SLOPE);
        conv(g, &y, &p, "conv2")
    }
}

/// Convs per block of the 19-layer network.
const VGG_BLOCKS: [usize; 5] = [2, 2, 4, 4, 4];
const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Parses `convB_J` into 1-based `(block, conv)`.
fn parse_vgg_tag(tag: &str) -> Result<(usize, usize)> {
    let bad = || Error::InvalidArgument(format!("bad VGG layer tag `{tag}` (expected convB_J, e.g. conv5_4)"));
    let rest = tag.strip_prefix("conv").ok_or_else(bad)?;
    let (b, j) = rest.split_once('_').ok_or_else(bad)?;
    let (b, j): (usize, usize) = (b.parse().map_err(|_| bad())?, j.parse().map_err(|_| bad())?);
    if !(1..=5).contains(&b) || j == 0 || j > VGG_BLOCKS[b - 1] {
        return Err(bad());
    }
    Ok((b, j))
}

/// Index of each conv in the `features.{i}` numbering of the reference
/// layout, in which every conv is followed by a ReLU and every block by a pool.
fn vgg_layer_indices() -> Vec<Vec<usize>> {
    let mut idx = 0;
    VGG_BLOCKS
        .iter()
        .map(|&n| {
            let block = (0..n)
                .map(|_| {
                    let i = idx;
                    idx += 2;
                    i
                })
                .collect();
            idx += 1;
            block
        })
        .collect()
}

/// The 19-layer VGG feature stack with pretrained weights named
/// `features.{i}.weight` / `features.{i}.bias`. Gray images are replicated to
/// three channels and normalized with the ImageNet statistics.
#[derive(Clone, Debug)]
pub struct Vgg19Extractor {
    params: ParamStore,
    tag: String,
    layer: (usize, usize),
}

impl Vgg19Extractor {
    /// Parameter names and shapes up to and including the tagged conv.
    pub fn param_shapes(tag: &str) -> Result<Vec<(String, Vec<usize>)>> {
        let (tb, tj) = parse_vgg_tag(tag)?;
        let mut out = Vec::new();
        let mut c_in = 3;
        for (b, block) in vgg_layer_indices().iter().enumerate() {
            let c = 64usize << b.min(3);
            for (j, &i) in block.iter().enumerate() {
                out.push((format!("features.{i}.weight"), vec![c, c_in, 3, 3]));
                out.push((format!("features.{i}.bias"), vec![c]));
                c_in = c;
                if (b + 1, j + 1) == (tb, tj) {
                    return Ok(out);
                }
            }
        }
        unreachable!("tag validated above")
    }

    pub fn from_params(params: ParamStore, tag: &str) -> Result<Self> {
        let layer = parse_vgg_tag(tag)?;
        let mut kept = ParamStore::new();
        for (name, shape) in Self::param_shapes(tag)? {
            let t = params.get(&name).ok_or_else(|| Error::MissingParam(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!("`{name}` has shape {:?}, expected {shape:?}", t.shape())));
            }
            kept.insert(name, t.clone());
        }
        Ok(Self {
            params: kept,
            tag: tag.to_string(),
            layer,
        })
    }

    /// Loads pretrained weights from a tensor archive.
    pub fn load(path: &Path, tag: &str) -> Result<Self> {
        let (params, _) = archive::load(path)?;
        Self::from_params(params, tag)
    }

    /// Random weights; only useful for exercising the architecture.
    pub fn random(seed: u64, tag: &str) -> Result<Self> {
        let mut params = ParamStore::new();
        for (name, shape) in Self::param_shapes(tag)? {
            if let Some(prefix) = name.strip_suffix(".weight") {
                nn::init_layer(&mut params, prefix, &shape, InitScheme::KaimingUniform, seed);
            }
        }
        Self::from_params(params, tag)
    }
}

impl FeatureExtractor for Vgg19Extractor {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn features(&self, g: &Graph, x: Var) -> Result<Var> {
        let shape = g.shape(x);
        check_single_channel(&shape, "VGG19 extractor")?;
        let x3 = g.repeat_channels(x, 3);
        let mut s3 = shape.clone();
        s3[1] = 3;
        let plane = shape[2] * shape[3];
        let scale = Tensor::from_fn(&s3, |i| 1.0 / IMAGENET_STD[(i / plane) % 3]);
        let shift = Tensor::from_fn(&s3, |i| {
            let c = (i / plane) % 3;
            -IMAGENET_MEAN[c] / IMAGENET_STD[c]
        });
        let y = g.mul_const(x3, Arc::new(scale));
        let mut y = g.add(y, g.leaf(shift));
        let p = g.bind(&self.params);
        for (b, block) in vgg_layer_indices().iter().enumerate() {
            if b > 0 {
                let s = g.shape(y);
                if s[2] < 2 || s[3] < 2 {
                    return Err(Error::Shape(format!(
                        "image {}x{} is too small for VGG layer {}",
                        shape[2], shape[3], self.tag
                    )));
                }
                y = g.max_pool2d(y, 2, 2, false);
            }
            for (j, &i) in block.iter().enumerate() {
                y = conv(g, &y, &p, &format!("features.{i}"))?;
                if (b + 1, j + 1) == self.layer {
                    return Ok(y);
                }
                y = g.leaky_relu(y, 0.0);
            }
        }
        unreachable!("tag validated at construction")
    }
}

/// Mean squared distance between extractor features of `sr` and `hr`,
/// computed per modality and averaged.
pub fn perceptual_loss(g: &Graph, sr: Var, hr: Var, v: &dyn FeatureExtractor) -> Result<Var> {
    let shape = g.shape(sr);
    if shape != g.shape(hr) || shape.len() != 4 {
        return Err(Error::Shape(format!("sr {shape:?} and hr {:?} must be equal [n, m, h, w]", g.shape(hr))));
    }
    let m = shape[1];
    let mut acc: Option<Var> = None;
    for c in 0..m {
        let (a, b) = if m == 1 {
            (sr, hr)
        } else {
            (g.select_channel(sr, c), g.select_channel(hr, c))
        };
        let fa = v.features(g, a)?;
        let fb = v.features(g, b)?;
        let l = mse_loss(g, fa, fb)?;
        acc = Some(match acc {
            Some(s) => g.add(s, l),
            None => l,
        });
    }
    let total = acc.expect("at least one channel");
    Ok(g.scale(total, 1.0 / m as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vgg_names_follow_reference_indexing() {
        let shapes = Vgg19Extractor::param_shapes("conv5_4").unwrap();
        assert_eq!(shapes.len(), 32);
        assert_eq!(shapes.last().unwrap().0, "features.34.bias");
        assert_eq!(shapes[0].1, vec![64, 3, 3, 3]);
        assert_eq!(Vgg19Extractor::param_shapes("conv2_2").unwrap().last().unwrap().0, "features.7.bias");
        assert!(parse_vgg_tag("conv1_3").is_err());
        assert!(parse_vgg_tag("fc6").is_err());
    }

    #[test]
    fn identity_extractor_gives_pixel_mse() {
        let g = Graph::new();
        let a = g.leaf(Tensor::from_fn(&[2, 2, 3, 3], |i| i as f64 * 0.01));
        let b = g.leaf(Tensor::from_fn(&[2, 2, 3, 3], |i| (i as f64 * 0.3).sin()));
        let p = g.item(perceptual_loss(&g, a, b, &IdentityExtractor).unwrap());
        let m = g.item(mse_loss(&g, a, b).unwrap());
        assert!((p - m).abs() < 1e-15);
    }

    #[test]
    fn shallow_vgg_runs_on_small_input() {
        let v = Vgg19Extractor::random(1, "conv2_2").unwrap();
        let g = Graph::new();
        let x = g.leaf(Tensor::from_fn(&[1, 1, 8, 8], |i| (i % 7) as f64 / 7.0));
        assert_eq!(g.shape(v.features(&g, x).unwrap()), vec![1, 128, 4, 4]);
    }
}
