//! Training objectives: L1, perceptual, the four adversarial variants and
//! their weighted combination.
//!
//! Every loss is built on a [`Graph`] so it can be differentiated with respect
//! to the SR image, the generator parameters or the critic parameters.

mod perceptual;

pub use perceptual::{
    perceptual_loss, FeatureExtractor, IdentityExtractor, SeededConvExtractor, Vgg19Extractor, DEFAULT_VGG_TAG,
};

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::critic::{Discriminator, HeadMode};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

/// Lower clamp applied to every probability before taking its logarithm.
pub const LOG_EPS: f64 = 1e-12;

/// Default weight of the gradient penalty.
pub const DEFAULT_GP_WEIGHT: f64 = 10.0;

/// Added under the square root of the gradient norm so its derivative stays
/// finite at zero.
const NORM_EPS: f64 = 1e-12;

fn same_shape(g: &Graph, sr: Var, hr: Var) -> Result<Vec<usize>> {
    let (a, b) = (g.shape(sr), g.shape(hr));
    if a != b {
        return Err(Error::Shape(format!("sr {a:?} and hr {b:?} differ")));
    }
    Ok(a)
}

/// Mean absolute error over every element.
pub fn l1_loss(g: &Graph, sr: Var, hr: Var) -> Result<Var> {
    same_shape(g, sr, hr)?;
    let d = g.sub(hr, sr);
    let a = g.abs(d);
    Ok(g.mean(a))
}

/// Mean squared error over every element.
pub fn mse_loss(g: &Graph, a: Var, b: Var) -> Result<Var> {
    same_shape(g, a, b)?;
    let d = g.sub(a, b);
    let sq = g.square(d);
    Ok(g.mean(sq))
}

/// `−mean(log(max(p, ε)))`.
fn mean_neg_log(g: &Graph, p: Var) -> Var {
    let c = g.clamp_min(p, LOG_EPS);
    let l = g.log(c);
    let m = g.mean(l);
    g.neg(m)
}

fn mean_neg_log_sigmoid(g: &Graph, z: Var) -> Var {
    let p = g.sigmoid(z);
    mean_neg_log(g, p)
}

fn mean_neg_log_one_minus_sigmoid(g: &Graph, z: Var) -> Var {
    let nz = g.neg(z);
    mean_neg_log_sigmoid(g, nz)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanVariant {
    Vanilla,
    Wgan,
    Wgangp,
    Ragan,
}

impl GanVariant {
    pub const ALL: [GanVariant; 4] = [Self::Vanilla, Self::Wgan, Self::Wgangp, Self::Ragan];

    pub fn name(self) -> &'static str {
        match self {
            Self::Vanilla => "vanilla",
            Self::Wgan => "wgan",
            Self::Wgangp => "wgangp",
            Self::Ragan => "ragan",
        }
    }

    /// Head the critic network needs for this variant.
    pub fn head_mode(self) -> HeadMode {
        match self {
            Self::Vanilla | Self::Ragan => HeadMode::SigmoidClassifier,
            Self::Wgan | Self::Wgangp => HeadMode::LinearCritic,
        }
    }
}

impl fmt::Display for GanVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GanVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown GAN variant `{s}` (vanilla|wgan|wgangp|ragan)")))
    }
}

/// Generator-side and critic-side adversarial terms.
#[derive(Clone, Copy, Debug)]
pub struct AdvPair {
    pub generator: Var,
    pub critic: Var,
}

/// Critic objective with the gradient-penalty diagnostics when present.
#[derive(Clone, Debug)]
pub struct CriticLoss {
    pub loss: Var,
    pub penalty: Option<Var>,
    /// Per-sample `‖∇D(Î)‖₂` at the interpolated points.
    pub grad_norms: Option<Vec<f64>>,
}

pub fn adv_loss_vanilla(g: &Graph, d: &dyn Discriminator, sr: Var, hr: Var) -> Result<AdvPair> {
    same_shape(g, sr, hr)?;
    let real = d.logits(g, hr)?;
    let fake = d.logits(g, sr)?;
    let a = mean_neg_log_sigmoid(g, real);
    let b = mean_neg_log_one_minus_sigmoid(g, fake);
    Ok(AdvPair {
        generator: mean_neg_log_sigmoid(g, fake),
        critic: g.add(a, b),
    })
}

pub fn adv_loss_wgan(g: &Graph, d: &dyn Discriminator, sr: Var, hr: Var) -> Result<AdvPair> {
    same_shape(g, sr, hr)?;
    let real = d.logits(g, hr)?;
    let fake = d.logits(g, sr)?;
    let mf = g.mean(fake);
    let mr = g.mean(real);
    Ok(AdvPair {
        generator: g.neg(mf),
        critic: g.sub(mf, mr),
    })
}

/// Per-sample weights `u ~ U[0, 1)` for the interpolation `u·hr + (1−u)·sr`.
pub fn interpolation_weights(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>()).collect()
}

/// `u·hr + (1−u)·sr` with one `u` per sample.
pub fn interpolate(g: &Graph, sr: Var, hr: Var, u: &[f64]) -> Result<Var> {
    let shape = same_shape(g, sr, hr)?;
    if u.len() != shape[0] {
        return Err(Error::Shape(format!("{} interpolation weights for a batch of {}", u.len(), shape[0])));
    }
    let inner: usize = shape[1..].iter().product();
    let wu = Tensor::from_fn(&shape, |i| u[i / inner]);
    let wv = Tensor::from_fn(&shape, |i| 1.0 - u[i / inner]);
    let a = g.mul_const(hr, Arc::new(wu));
    let b = g.mul_const(sr, Arc::new(wv));
    Ok(g.add(a, b))
}

/// `E[(‖∇_Î D(Î)‖₂ − 1)²]` on the interpolated batch, plus the norms.
pub fn gradient_penalty(g: &Graph, d: &dyn Discriminator, sr: Var, hr: Var, u: &[f64]) -> Result<(Var, Vec<f64>)> {
    let x = interpolate(g, sr, hr, u)?;
    let s = d.logits(g, x)?;
    let total = g.sum(s);
    let dx = g.grad(total, &[x])[0];
    let sq = g.square(dx);
    let per = g.sum_per_sample(sq);
    let per = g.add_scalar(per, NORM_EPS);
    let norm = g.sqrt(per);
    let norms = g.value(norm).data().to_vec();
    let dev = g.add_scalar(norm, -1.0);
    let dev = g.square(dev);
    Ok((g.mean(dev), norms))
}

pub fn adv_loss_wgangp(
    g: &Graph,
    d: &dyn Discriminator,
    sr: Var,
    hr: Var,
    gp_weight: f64,
    u: &[f64],
) -> Result<(AdvPair, Var)> {
    let base = adv_loss_wgan(g, d, sr, hr)?;
    let (pen, _) = gradient_penalty(g, d, sr, hr, u)?;
    let w = g.scale(pen, gp_weight);
    Ok((
        AdvPair {
            generator: base.generator,
            critic: g.add(base.critic, w),
        },
        pen,
    ))
}

/// Relativistic average losses on logits, with batch means as opponents.
pub fn adv_loss_ragan(g: &Graph, d: &dyn Discriminator, sr: Var, hr: Var) -> Result<AdvPair> {
    let shape = same_shape(g, sr, hr)?;
    if shape[0] < 2 {
        log::warn!("relativistic average loss with batch size 1: each sample is its own opponent mean");
    }
    let real = d.logits(g, hr)?;
    let fake = d.logits(g, sr)?;
    let n = [shape[0]];
    let mr = g.mean(real);
    let mf = g.mean(fake);
    let mr = g.expand_scalar(mr, &n);
    let mf = g.expand_scalar(mf, &n);
    let dr = g.sub(real, mf);
    let df = g.sub(fake, mr);
    let critic = {
        let a = mean_neg_log_sigmoid(g, dr);
        let b = mean_neg_log_one_minus_sigmoid(g, df);
        g.add(a, b)
    };
    let generator = {
        let a = mean_neg_log_sigmoid(g, df);
        let b = mean_neg_log_one_minus_sigmoid(g, dr);
        g.add(a, b)
    };
    Ok(AdvPair { generator, critic })
}

/// Variant selector plus its options.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdversarialLoss {
    pub variant: GanVariant,
    pub gp_weight: f64,
}

impl AdversarialLoss {
    pub fn new(variant: GanVariant) -> Self {
        Self {
            variant,
            gp_weight: DEFAULT_GP_WEIGHT,
        }
    }

    /// Generator-side term.
    pub fn generator_loss(&self, g: &Graph, d: &dyn Discriminator, sr: Var, hr: Var) -> Result<Var> {
        match self.variant {
            GanVariant::Vanilla => {
                same_shape(g, sr, hr)?;
                let fake = d.logits(g, sr)?;
                Ok(mean_neg_log_sigmoid(g, fake))
            }
            GanVariant::Wgan | GanVariant::Wgangp => {
                same_shape(g, sr, hr)?;
                let fake = d.logits(g, sr)?;
                let m = g.mean(fake);
                Ok(g.neg(m))
            }
            GanVariant::Ragan => Ok(adv_loss_ragan(g, d, sr, hr)?.generator),
        }
    }

    /// Critic-side term. `u` holds the per-sample interpolation weights and is
    /// only read by the gradient-penalty variant.
    pub fn critic_loss(&self, g: &Graph, d: &dyn Discriminator, sr: Var, hr: Var, u: &[f64]) -> Result<CriticLoss> {
        let plain = |loss| CriticLoss {
            loss,
            penalty: None,
            grad_norms: None,
        };
        match self.variant {
            GanVariant::Vanilla => Ok(plain(adv_loss_vanilla(g, d, sr, hr)?.critic)),
            GanVariant::Wgan => Ok(plain(adv_loss_wgan(g, d, sr, hr)?.critic)),
            GanVariant::Ragan => Ok(plain(adv_loss_ragan(g, d, sr, hr)?.critic)),
            GanVariant::Wgangp => {
                let base = adv_loss_wgan(g, d, sr, hr)?;
                let (pen, norms) = gradient_penalty(g, d, sr, hr, u)?;
                let w = g.scale(pen, self.gp_weight);
                Ok(CriticLoss {
                    loss: g.add(base.critic, w),
                    penalty: Some(pen),
                    grad_norms: Some(norms),
                })
            }
        }
    }
}

/// Clamps every critic weight into `[−c, c]` (the original WGAN constraint).
pub fn clip_weights(params: &mut ParamStore, c: f64) {
    for t in params.values_mut() {
        *t = Arc::new(t.map(|v| v.clamp(-c, c)));
    }
}

/// Weights of the L1, adversarial and perceptual terms. An infinite weight
/// selects "only this component": the total becomes the unweighted sum of the
/// infinite-weight components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda: f64,
    pub gamma: f64,
    pub eta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            gamma: 0.001,
            eta: 0.006,
        }
    }
}

impl LossWeights {
    /// Pure L1 objective of the warm-up phase.
    pub fn l1_only() -> Self {
        Self {
            lambda: 1.0,
            gamma: 0.0,
            eta: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("loss.lambda", self.lambda), ("loss.gamma", self.gamma), ("loss.eta", self.eta)] {
            if v.is_nan() || v < 0.0 {
                return Err(Error::config(key, format!("must be >= 0 (or inf), got {v}")));
            }
        }
        Ok(())
    }

    /// Effective multipliers `(λ, γ, η)` after resolving infinite weights.
    pub fn effective(&self) -> (f64, f64, f64) {
        let w = [self.lambda, self.gamma, self.eta];
        if w.iter().any(|v| v.is_infinite()) {
            let pick = |v: f64| if v.is_infinite() { 1.0 } else { 0.0 };
            (pick(w[0]), pick(w[1]), pick(w[2]))
        } else {
            (w[0], w[1], w[2])
        }
    }
}

/// Total objective and its components.
#[derive(Clone, Copy, Debug)]
pub struct LossBreakdown {
    pub total: Var,
    pub l1: Option<Var>,
    pub adv: Option<Var>,
    pub perc: Option<Var>,
}

impl LossBreakdown {
    /// `(total, l1, adv, perc)` values; missing components read as 0.
    pub fn values(&self, g: &Graph) -> (f64, f64, f64, f64) {
        let v = |x: Option<Var>| x.map_or(0.0, |x| g.item(x));
        (g.item(self.total), v(self.l1), v(self.adv), v(self.perc))
    }
}

/// `λ·L1 + γ·L_adv + η·L_perc` using the generator-side adversarial term.
/// Components with a zero effective weight are not evaluated, so a missing
/// critic or extractor is fine when its weight is 0.
pub fn combined_loss(
    g: &Graph,
    sr: Var,
    hr: Var,
    d: Option<&dyn Discriminator>,
    adv: &AdversarialLoss,
    v: Option<&dyn FeatureExtractor>,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let (lam, gam, eta) = weights.effective();
    let mut terms = Vec::new();
    let mut out = LossBreakdown {
        total: sr,
        l1: None,
        adv: None,
        perc: None,
    };
    if lam != 0.0 {
        let l = l1_loss(g, sr, hr)?;
        out.l1 = Some(l);
        terms.push(g.scale(l, lam));
    }
    if gam != 0.0 {
        let d = d.ok_or_else(|| Error::InvalidArgument("adversarial weight is set but no critic was given".into()))?;
        let l = adv.generator_loss(g, d, sr, hr)?;
        out.adv = Some(l);
        terms.push(g.scale(l, gam));
    }
    if eta != 0.0 {
        let v = v.ok_or_else(|| Error::InvalidArgument("perceptual weight is set but no extractor was given".into()))?;
        let l = perceptual_loss(g, sr, hr, v)?;
        out.perc = Some(l);
        terms.push(g.scale(l, eta));
    }
    let mut it = terms.into_iter();
    let first = it
        .next()
        .ok_or_else(|| Error::InvalidArgument("all loss weights are zero".into()))?;
    out.total = it.fold(first, |acc, t| g.add(acc, t));
    Ok(out)
}
