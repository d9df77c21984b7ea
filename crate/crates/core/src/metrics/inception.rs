//! Inception-v3 feature tower up to the 2048-d global pool, evaluated eagerly
//! with batch norm folded into the convolutions.
//!
//! Weights use the reference layout (`Mixed_5b.branch1x1.conv.weight`,
//! `....bn.running_var`, ...). Gray images are resized to 299×299 with the
//! bicubic kernel, replicated to three channels and mapped to `[−1, 1]`.

use std::sync::Arc;

use rayon::prelude::*;

use super::Embedder;
use crate::data::resize_to;
use crate::error::{Error, Result};
use crate::nn::{self, InitScheme, ParamStore};
use crate::tensor::{conv, pool, ConvGeom, Tensor};

const BN_EPS: f64 = 1e-3;
const INPUT: usize = 299;

/// One conv + folded batch norm + ReLU.
#[derive(Clone, Debug)]
struct Unit {
    w: Tensor,
    b: Vec<f64>,
    geom: ConvGeom,
}

impl Unit {
    fn apply(&self, x: &Tensor) -> Tensor {
        let mut y = conv::conv2d(x, &self.w, self.geom);
        let (n, c, h, w) = y.dims4();
        let plane = h * w;
        for s in 0..n {
            for ci in 0..c {
                let base = (s * c + ci) * plane;
                for v in &mut y.data_mut()[base..base + plane] {
                    *v = (*v + self.b[ci]).max(0.0);
                }
            }
        }
        y
    }
}

/// `(name, out, in, kh, kw, stride, pad_h, pad_w)`.
type Spec = (String, usize, usize, usize, usize, usize, usize, usize);

fn basic(name: &str, o: usize, i: usize, k: (usize, usize), stride: usize, pad: (usize, usize)) -> Spec {
    (name.to_string(), o, i, k.0, k.1, stride, pad.0, pad.1)
}

fn block_a(p: &str, c: usize, pool: usize) -> Vec<Spec> {
    vec![
        basic(&format!("{p}.branch1x1"), 64, c, (1, 1), 1, (0, 0)),
        basic(&format!("{p}.branch5x5_1"), 48, c, (1, 1), 1, (0, 0)),
        basic(&format!("{p}.branch5x5_2"), 64, 48, (5, 5), 1, (2, 2)),
        basic(&format!("{p}.branch3x3dbl_1"), 64, c, (1, 1), 1, (0, 0)),
        basic(&format!("{p}.branch3x3dbl_2"), 96, 64, (3, 3), 1, (1, 1)),
        basic(&format!("{p}.branch3x3dbl_3"), 96, 96, (3, 3), 1, (1, 1)),
        basic(&format!("{p}.branch_pool"), pool, c, (1, 1), 1, (0, 0)),
    ]
}

fn block_b(p: &str, c: usize) -> Vec<Spec> {
    vec![
        basic(&format!("{p}.branch3x3"), 384, c, (3, 3), 2, (0, 0)),
        basic(&format!("{p}.branch3x3dbl_1"), 64, c, (1, 1), 1, (0, 0)),
        basic(&format!("{p}.branch3x3dbl_2"), 96, 64, (3, 3), 1, (1, 1)),
        basic(&format!("{p}.branch3x3dbl_3"), 96, 96, (3, 3), 2, (0, 0)),
    ]
}

fn block_c(p: &str, c: usize, c7: usize) -> Vec<Spec> {
    let (r, col) = ((1, 7), (7, 1));
    let (pr, pc) = ((0, 3), (3, 0));
    vec![
        basic(&format!("{p}.branch1x1"), 192, c, (1, 1), 1, (0, 0)),
        basic(&format!("{p}.branch7x7_1"), c7, c, (1, 1), 1, (0, 0)),
        basic(&format!("{p}.branch7x7_2"), c7, c7, r, 1, pr),
        basic(&format!("{p}.branch7x7_3"), 192, c7, col, 1, pc),
        basic(&format!("{p}.branch7x7dbl_1"), c7, c, (1, 1), 1, (0, 0)),
        basic(&format!("{p}.branch7x7dbl_2"), c7, c7, col, 1, pc),
        basic(&format!("{p}.branch7x7dbl_3"), c7, c7, r, 1, pr),
        basic(&format!("{p}.branch7x7dbl_4"), c7, c7, col, 1, pc),
        basic(&format!("{p}.branch7x7dbl_5"), 192, c7, r, 1, pr),
        basic(&format!("{p}.branch_pool"), 192, c, (1, 1), 1, (0, 0)),
    ]
}

fn block_d(p: &str, c: usize) -> Vec<Spec> {
    vec![
        basic(&format!("{p}.branch3x3_1"), 192, c, (1, 1), 1, (0, 0)),
        basic(&format!("{p}.branch3x3_2"), 320, 192, (3, 3), 2, (0, 0)),
        basic(&format!("{p}.branch7x7x3_1"), 192, c, (1, 1), 1, (0, 0)),
        basic(&format!("{p}.branch7x7x3_2"), 192, 192, (1, 7), 1, (0, 3)),
        basic(&format!("{p}.branch7x7x3_3"), 192, 192, (7, 1), 1, (3, 0)),
        basic(&format!("{p}.branch7x7x3_4"), 192, 192, (3, 3), 2, (0, 0)),
    ]
}

fn block_e(p: &str, c: usize) -> Vec<Spec> {
    vec![
        basic(&format!("{p}.branch1x1"), 320, c, (1, 1), 1, (0, 0)),
        basic(&format!("{p}.branch3x3_1"), 384, c, (1, 1), 1, (0, 0)),
        basic(&format!("{p}.branch3x3_2a"), 384, 384, (1, 3), 1, (0, 1)),
        basic(&format!("{p}.branch3x3_2b"), 384, 384, (3, 1), 1, (1, 0)),
        basic(&format!("{p}.branch3x3dbl_1"), 448, c, (1, 1), 1, (0, 0)),
        basic(&format!("{p}.branch3x3dbl_2"), 384, 448, (3, 3), 1, (1, 1)),
        basic(&format!("{p}.branch3x3dbl_3a"), 384, 384, (1, 3), 1, (0, 1)),
        basic(&format!("{p}.branch3x3dbl_3b"), 384, 384, (3, 1), 1, (1, 0)),
        basic(&format!("{p}.branch_pool"), 192, c, (1, 1), 1, (0, 0)),
    ]
}

fn all_specs() -> Vec<Spec> {
    let mut v = vec![
        basic("Conv2d_1a_3x3", 32, 3, (3, 3), 2, (0, 0)),
        basic("Conv2d_2a_3x3", 32, 32, (3, 3), 1, (0, 0)),
        basic("Conv2d_2b_3x3", 64, 32, (3, 3), 1, (1, 1)),
        basic("Conv2d_3b_1x1", 80, 64, (1, 1), 1, (0, 0)),
        basic("Conv2d_4a_3x3", 192, 80, (3, 3), 1, (0, 0)),
    ];
    v.extend(block_a("Mixed_5b", 192, 32));
    v.extend(block_a("Mixed_5c", 256, 64));
    v.extend(block_a("Mixed_5d", 288, 64));
    v.extend(block_b("Mixed_6a", 288));
    v.extend(block_c("Mixed_6b", 768, 128));
    v.extend(block_c("Mixed_6c", 768, 160));
    v.extend(block_c("Mixed_6d", 768, 160));
    v.extend(block_c("Mixed_6e", 768, 192));
    v.extend(block_d("Mixed_7a", 768));
    v.extend(block_e("Mixed_7b", 1280));
    v.extend(block_e("Mixed_7c", 2048));
    v
}

/// Concatenates `[n, c_i, h, w]` tensors along channels.
fn cat(parts: &[Tensor]) -> Tensor {
    let (n, _, h, w) = parts[0].dims4();
    let plane = h * w;
    let c: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let mut out = Vec::with_capacity(n * c * plane);
    for s in 0..n {
        for p in parts {
            let ci = p.shape()[1];
            out.extend_from_slice(&p.data()[s * ci * plane..(s + 1) * ci * plane]);
        }
    }
    Tensor::new(vec![n, c, h, w], out)
}

fn max_pool(x: &Tensor) -> Tensor {
    pool::max_pool2d(x, 3, 2, false).0
}

fn avg_pool(x: &Tensor) -> Tensor {
    pool::avg_pool2d(x, 3, 1, 1)
}

#[derive(Clone, Debug)]
pub struct InceptionV3 {
    units: std::collections::HashMap<String, Arc<Unit>>,
}

impl InceptionV3 {
    pub const TAG: &'static str = "inception-v3-pool3";
    pub const DIM: usize = 2048;

    /// Every tensor the network reads, with its shape.
    pub fn param_shapes() -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (name, o, i, kh, kw, ..) in all_specs() {
            out.push((format!("{name}.conv.weight"), vec![o, i, kh, kw]));
            for t in ["weight", "bias", "running_mean", "running_var"] {
                out.push((format!("{name}.bn.{t}"), vec![o]));
            }
        }
        out
    }

    pub fn from_params(params: ParamStore) -> Result<Self> {
        let get = |name: String, shape: &[usize]| -> Result<Arc<Tensor>> {
            let t = params.get(&name).ok_or_else(|| Error::MissingParam(name.clone()))?;
            if t.shape() != shape {
                return Err(Error::Checkpoint(format!("`{name}` has shape {:?}, expected {shape:?}", t.shape())));
            }
            Ok(t.clone())
        };
        let mut units = std::collections::HashMap::new();
        for (name, o, i, kh, kw, stride, ph, pw) in all_specs() {
            let w = get(format!("{name}.conv.weight"), &[o, i, kh, kw])?;
            let gamma = get(format!("{name}.bn.weight"), &[o])?;
            let beta = get(format!("{name}.bn.bias"), &[o])?;
            let mean = get(format!("{name}.bn.running_mean"), &[o])?;
            let var = get(format!("{name}.bn.running_var"), &[o])?;
            let per = i * kh * kw;
            let scale: Vec<f64> = (0..o).map(|c| gamma.data()[c] / (var.data()[c] + BN_EPS).sqrt()).collect();
            let wf = Tensor::from_fn(&[o, i, kh, kw], |j| w.data()[j] * scale[j / per]);
            let b = (0..o).map(|c| beta.data()[c] - mean.data()[c] * scale[c]).collect();
            let geom = ConvGeom {
                stride: (stride, stride),
                pad: (ph, pw),
            };
            units.insert(name, Arc::new(Unit { w: wf, b, geom }));
        }
        Ok(Self { units })
    }

    /// Random weights with unit batch-norm statistics; for shape checks only.
    pub fn random(seed: u64) -> Self {
        let mut params = ParamStore::new();
        for (name, shape) in Self::param_shapes() {
            let t = if name.ends_with("conv.weight") {
                nn::init_weight(&shape, InitScheme::KaimingUniform, seed, &name)
            } else if name.ends_with("bn.weight") || name.ends_with("running_var") {
                Tensor::full(&shape, 1.0)
            } else {
                Tensor::zeros(&shape)
            };
            params.insert(name, Arc::new(t));
        }
        Self::from_params(params).expect("shapes come from param_shapes")
    }

    fn u(&self, name: &str, x: &Tensor) -> Tensor {
        self.units[name].apply(x)
    }

    fn chain(&self, names: &[String], x: &Tensor) -> Tensor {
        names.iter().fold(x.clone(), |y, n| self.u(n, &y))
    }

    fn names(p: &str, parts: &[&str]) -> Vec<String> {
        parts.iter().map(|s| format!("{p}.{s}")).collect()
    }

    fn a(&self, p: &str, x: &Tensor) -> Tensor {
        cat(&[
            self.u(&format!("{p}.branch1x1"), x),
            self.chain(&Self::names(p, &["branch5x5_1", "branch5x5_2"]), x),
            self.chain(&Self::names(p, &["branch3x3dbl_1", "branch3x3dbl_2", "branch3x3dbl_3"]), x),
            self.u(&format!("{p}.branch_pool"), &avg_pool(x)),
        ])
    }

    fn b(&self, p: &str, x: &Tensor) -> Tensor {
        cat(&[
            self.u(&format!("{p}.branch3x3"), x),
            self.chain(&Self::names(p, &["branch3x3dbl_1", "branch3x3dbl_2", "branch3x3dbl_3"]), x),
            max_pool(x),
        ])
    }

    fn c(&self, p: &str, x: &Tensor) -> Tensor {
        cat(&[
            self.u(&format!("{p}.branch1x1"), x),
            self.chain(&Self::names(p, &["branch7x7_1", "branch7x7_2", "branch7x7_3"]), x),
            self.chain(
                &Self::names(
                    p,
                    &["branch7x7dbl_1", "branch7x7dbl_2", "branch7x7dbl_3", "branch7x7dbl_4", "branch7x7dbl_5"],
                ),
                x,
            ),
            self.u(&format!("{p}.branch_pool"), &avg_pool(x)),
        ])
    }

    fn d(&self, p: &str, x: &Tensor) -> Tensor {
        cat(&[
            self.chain(&Self::names(p, &["branch3x3_1", "branch3x3_2"]), x),
            self.chain(
                &Self::names(p, &["branch7x7x3_1", "branch7x7x3_2", "branch7x7x3_3", "branch7x7x3_4"]),
                x,
            ),
            max_pool(x),
        ])
    }

    fn e(&self, p: &str, x: &Tensor) -> Tensor {
        let b3 = self.u(&format!("{p}.branch3x3_1"), x);
        let bd = self.chain(&Self::names(p, &["branch3x3dbl_1", "branch3x3dbl_2"]), x);
        cat(&[
            self.u(&format!("{p}.branch1x1"), x),
            self.u(&format!("{p}.branch3x3_2a"), &b3),
            self.u(&format!("{p}.branch3x3_2b"), &b3),
            self.u(&format!("{p}.branch3x3dbl_3a"), &bd),
            self.u(&format!("{p}.branch3x3dbl_3b"), &bd),
            self.u(&format!("{p}.branch_pool"), &avg_pool(x)),
        ])
    }

    /// Pooled features of one `[1, 3, 299, 299]` input.
    fn tower(&self, x: &Tensor) -> Tensor {
        let mut y = self.chain(
            &["Conv2d_1a_3x3", "Conv2d_2a_3x3", "Conv2d_2b_3x3"].map(String::from),
            x,
        );
        y = max_pool(&y);
        y = self.chain(&["Conv2d_3b_1x1", "Conv2d_4a_3x3"].map(String::from), &y);
        y = max_pool(&y);
        for p in ["Mixed_5b", "Mixed_5c", "Mixed_5d"] {
            y = self.a(p, &y);
        }
        y = self.b("Mixed_6a", &y);
        for p in ["Mixed_6b", "Mixed_6c", "Mixed_6d", "Mixed_6e"] {
            y = self.c(p, &y);
        }
        y = self.d("Mixed_7a", &y);
        y = self.e("Mixed_7b", &y);
        y = self.e("Mixed_7c", &y);
        pool::global_avg_pool(&y)
    }

    fn prepare(gray: &Tensor) -> Result<Tensor> {
        let r = resize_to(gray, (INPUT, INPUT))?;
        let plane: Vec<f64> = r.data().iter().map(|v| v * 2.0 - 1.0).collect();
        let mut data = Vec::with_capacity(3 * plane.len());
        for _ in 0..3 {
            data.extend_from_slice(&plane);
        }
        Ok(Tensor::new(vec![1, 3, INPUT, INPUT], data))
    }
}

impl Embedder for InceptionV3 {
    fn tag(&self) -> &str {
        Self::TAG
    }

    fn dim(&self) -> usize {
        Self::DIM
    }

    /// Multi-channel images are embedded per channel and the vectors
    /// concatenated.
    fn embed(&self, images: &Tensor) -> Result<Vec<Vec<f64>>> {
        let (n, m, h, w) = match images.shape() {
            [n, m, h, w] => (*n, *m, *h, *w),
            other => return Err(Error::Shape(format!("expected [n, m, h, w], got {other:?}"))),
        };
        (0..n)
            .into_par_iter()
            .map(|s| {
                let mut v = Vec::with_capacity(m * Self::DIM);
                for c in 0..m {
                    let base = (s * m + c) * h * w;
                    let gray = Tensor::new(vec![1, h, w], images.data()[base..base + h * w].to_vec());
                    v.extend_from_slice(self.tower(&Self::prepare(&gray)?).data());
                }
                Ok(v)
            })
            .collect()
    }
}
