//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Backward passes are themselves recorded on the tape, so a gradient can be
//! differentiated again. The gradient penalty needs exactly that: the critic's
//! input gradient is part of the critic loss.

mod backend;

pub use backend::{Backend, Bound, Eager};

use std::cell::RefCell;
use std::sync::Arc;

use crate::generator::meta::{self, MetaPlan};
use crate::tensor::{bcast, conv, linalg, pool, ConvGeom, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Arc<Tensor>),
    LeakyRelu(Var, f64),
    Abs(Var),
    ClampMin(Var, f64),
    Sigmoid(Var),
    Sqrt(Var),
    Log(Var),
    Recip(Var),
    Square(Var),
    Reshape(Var),
    MatMul(Var, Var, bool, bool),
    Conv(Var, Var, ConvGeom),
    ConvInputGrad(Var, Var, ConvGeom),
    ConvWeightGrad(Var, Var, ConvGeom),
    Meta(Var, Var, Arc<MetaPlan>),
    MetaInputGrad(Var, Var, Arc<MetaPlan>),
    MetaKernelGrad(Var, Var, Arc<MetaPlan>),
    ExpandBias(Var),
    SumToBias(Var),
    SumAll(Var),
    ExpandScalar(Var),
    SumPerSample(Var),
    ExpandPerSample(Var),
    Gap(Var),
    GapAdjoint(Var),
    Gather(Var, Arc<Vec<usize>>),
    Scatter(Var, Arc<Vec<usize>>),
    SelectChannel(Var, usize),
    InsertChannel(Var, usize),
    RepeatChannels(Var),
    SumChannels(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b, ..) => vec![*a, *b],
            Conv(a, b, _) | ConvInputGrad(a, b, _) | ConvWeightGrad(a, b, _) => vec![*a, *b],
            Meta(a, b, _) | MetaInputGrad(a, b, _) | MetaKernelGrad(a, b, _) => vec![*a, *b],
            Neg(a) | Scale(a, _) | AddScalar(a) | MulConst(a, _) | LeakyRelu(a, _) | Abs(a)
            | ClampMin(a, _) | Sigmoid(a) | Sqrt(a) | Log(a) | Recip(a) | Square(a) | Reshape(a)
            | ExpandBias(a) | SumToBias(a) | SumAll(a) | ExpandScalar(a) | SumPerSample(a)
            | ExpandPerSample(a) | Gap(a) | GapAdjoint(a) | Gather(a, _) | Scatter(a, _)
            | SelectChannel(a, _) | InsertChannel(a, _) | RepeatChannels(a) | SumChannels(a) => vec![*a],
        }
    }
}

struct Node {
    op: Op,
    value: Arc<Tensor>,
}

/// A differentiation tape. Nodes are appended in evaluation order and never
/// removed; drop the graph to release memory.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, value: Tensor) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            value: Arc::new(value),
        });
        Var(nodes.len() - 1)
    }

    /// Independent variable (parameter, input or constant). Whether it is
    /// differentiated depends only on whether it is passed to [`Graph::grad`].
    pub fn leaf(&self, value: impl Into<Arc<Tensor>>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op: Op::Leaf,
            value: value.into(),
        });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Arc<Tensor> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// Value of a one-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value.item()
    }

    fn val(&self, v: Var) -> Arc<Tensor> {
        self.value(v)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let out = self.val(a).zip_map(&self.val(b), |x, y| x + y);
        self.push(Op::Add(a, b), out)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let out = self.val(a).zip_map(&self.val(b), |x, y| x - y);
        self.push(Op::Sub(a, b), out)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let out = self.val(a).zip_map(&self.val(b), |x, y| x * y);
        self.push(Op::Mul(a, b), out)
    }

    pub fn neg(&self, a: Var) -> Var {
        let out = self.val(a).map(|x| -x);
        self.push(Op::Neg(a), out)
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let out = self.val(a).map(|x| x * c);
        self.push(Op::Scale(a, c), out)
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        let out = self.val(a).map(|x| x + c);
        self.push(Op::AddScalar(a), out)
    }

    /// Elementwise product with a tensor that is not differentiated.
    pub fn mul_const(&self, a: Var, c: Arc<Tensor>) -> Var {
        let out = self.val(a).zip_map(&c, |x, y| x * y);
        self.push(Op::MulConst(a, c), out)
    }

    pub fn leaky_relu(&self, a: Var, slope: f64) -> Var {
        let out = self.val(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(Op::LeakyRelu(a, slope), out)
    }

    pub fn abs(&self, a: Var) -> Var {
        let out = self.val(a).map(f64::abs);
        self.push(Op::Abs(a), out)
    }

    pub fn clamp_min(&self, a: Var, lo: f64) -> Var {
        let out = self.val(a).map(|x| x.max(lo));
        self.push(Op::ClampMin(a, lo), out)
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let out = self.val(a).map(sigmoid);
        self.push(Op::Sigmoid(a), out)
    }

    pub fn sqrt(&self, a: Var) -> Var {
        let out = self.val(a).map(f64::sqrt);
        self.push(Op::Sqrt(a), out)
    }

    pub fn log(&self, a: Var) -> Var {
        let out = self.val(a).map(f64::ln);
        self.push(Op::Log(a), out)
    }

    pub fn recip(&self, a: Var) -> Var {
        let out = self.val(a).map(|x| 1.0 / x);
        self.push(Op::Recip(a), out)
    }

    pub fn square(&self, a: Var) -> Var {
        let out = self.val(a).map(|x| x * x);
        self.push(Op::Square(a), out)
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let out = (*self.val(a)).clone().reshape(shape);
        self.push(Op::Reshape(a), out)
    }

    pub fn matmul(&self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let out = linalg::matmul(&self.val(a), &self.val(b), ta, tb);
        self.push(Op::MatMul(a, b, ta, tb), out)
    }

    pub fn conv2d(&self, x: Var, w: Var, geom: ConvGeom) -> Var {
        let out = conv::conv2d(&self.val(x), &self.val(w), geom);
        self.push(Op::Conv(x, w, geom), out)
    }

    fn conv_input_grad(&self, g: Var, w: Var, x_shape: &[usize], geom: ConvGeom) -> Var {
        let out = conv::conv2d_input_grad(&self.val(g), &self.val(w), x_shape, geom);
        self.push(Op::ConvInputGrad(g, w, geom), out)
    }

    fn conv_weight_grad(&self, x: Var, g: Var, w_shape: &[usize], geom: ConvGeom) -> Var {
        let out = conv::conv2d_weight_grad(&self.val(x), &self.val(g), w_shape, geom);
        self.push(Op::ConvWeightGrad(x, g, geom), out)
    }

    pub fn meta_upscale(&self, f: Var, k: Var, plan: &Arc<MetaPlan>) -> Var {
        let out = meta::upscale(&self.val(f), &self.val(k), plan);
        self.push(Op::Meta(f, k, plan.clone()), out)
    }

    fn meta_input_grad(&self, g: Var, k: Var, plan: &Arc<MetaPlan>, f_shape: &[usize]) -> Var {
        let out = meta::upscale_input_grad(&self.val(g), &self.val(k), plan, f_shape);
        self.push(Op::MetaInputGrad(g, k, plan.clone()), out)
    }

    fn meta_kernel_grad(&self, f: Var, g: Var, plan: &Arc<MetaPlan>) -> Var {
        let out = meta::upscale_kernel_grad(&self.val(f), &self.val(g), plan);
        self.push(Op::MetaKernelGrad(f, g, plan.clone()), out)
    }

    /// Adds `b [c]` along axis 1 of `x`.
    pub fn add_bias(&self, x: Var, b: Var) -> Var {
        let shape = self.shape(x);
        let e = self.expand_bias(b, &shape);
        self.add(x, e)
    }

    fn expand_bias(&self, b: Var, shape: &[usize]) -> Var {
        let out = bcast::expand_bias(&self.val(b), shape);
        self.push(Op::ExpandBias(b), out)
    }

    fn sum_to_bias(&self, g: Var) -> Var {
        let out = bcast::sum_to_bias(&self.val(g));
        self.push(Op::SumToBias(g), out)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self, a: Var) -> Var {
        let out = Tensor::scalar(self.val(a).sum());
        self.push(Op::SumAll(a), out)
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.val(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Broadcasts a one-element node to `shape`.
    pub fn expand_scalar(&self, s: Var, shape: &[usize]) -> Var {
        let out = Tensor::full(shape, self.val(s).item());
        self.push(Op::ExpandScalar(s), out)
    }

    /// `[n, ...] -> [n]`.
    pub fn sum_per_sample(&self, a: Var) -> Var {
        let out = bcast::sum_per_sample(&self.val(a));
        self.push(Op::SumPerSample(a), out)
    }

    pub fn expand_per_sample(&self, v: Var, shape: &[usize]) -> Var {
        let out = bcast::expand_per_sample(&self.val(v), shape);
        self.push(Op::ExpandPerSample(v), out)
    }

    pub fn global_avg_pool(&self, x: Var) -> Var {
        let out = pool::global_avg_pool(&self.val(x));
        self.push(Op::Gap(x), out)
    }

    fn gap_adjoint(&self, g: Var, shape: &[usize]) -> Var {
        let out = pool::global_avg_pool_adjoint(&self.val(g), shape);
        self.push(Op::GapAdjoint(g), out)
    }

    pub fn max_pool2d(&self, x: Var, kernel: usize, stride: usize, ceil: bool) -> Var {
        let (out, idx) = pool::max_pool2d(&self.val(x), kernel, stride, ceil);
        self.push(Op::Gather(x, Arc::new(idx)), out)
    }

    fn gather(&self, x: Var, idx: &Arc<Vec<usize>>, out_shape: &[usize]) -> Var {
        let out = pool::gather(&self.val(x), idx, out_shape);
        self.push(Op::Gather(x, idx.clone()), out)
    }

    fn scatter(&self, g: Var, idx: &Arc<Vec<usize>>, in_shape: &[usize]) -> Var {
        let out = pool::scatter_add(&self.val(g), idx, in_shape);
        self.push(Op::Scatter(g, idx.clone()), out)
    }

    pub fn select_channel(&self, x: Var, c: usize) -> Var {
        let out = bcast::select_channel(&self.val(x), c);
        self.push(Op::SelectChannel(x, c), out)
    }

    fn insert_channel(&self, g: Var, c: usize, m: usize) -> Var {
        let out = bcast::insert_channel(&self.val(g), c, m);
        self.push(Op::InsertChannel(g, c), out)
    }

    pub fn repeat_channels(&self, x: Var, k: usize) -> Var {
        let out = bcast::repeat_channels(&self.val(x), k);
        self.push(Op::RepeatChannels(x), out)
    }

    fn sum_channels(&self, g: Var) -> Var {
        let out = bcast::sum_channels(&self.val(g));
        self.push(Op::SumChannels(g), out)
    }

    fn one_minus(&self, a: Var) -> Var {
        let n = self.neg(a);
        self.add_scalar(n, 1.0)
    }

    /// Contributions of the upstream gradient `h` of node `v` to its inputs.
    fn vjp(&self, v: Var, h: Var) -> Vec<(Var, Var)> {
        let op = self.nodes.borrow()[v.0].op.clone();
        let shape_of = |x: Var| self.shape(x);
        use Op::*;
        match op {
            Leaf => vec![],
            Add(a, b) => vec![(a, h), (b, h)],
            Sub(a, b) => vec![(a, h), (b, self.neg(h))],
            Mul(a, b) => vec![(a, self.mul(h, b)), (b, self.mul(h, a))],
            Neg(a) => vec![(a, self.neg(h))],
            Scale(a, c) => vec![(a, self.scale(h, c))],
            AddScalar(a) => vec![(a, h)],
            MulConst(a, c) => vec![(a, self.mul_const(h, c))],
            LeakyRelu(a, slope) => {
                let mask = self.val(a).map(|x| if x > 0.0 { 1.0 } else { slope });
                vec![(a, self.mul_const(h, Arc::new(mask)))]
            }
            Abs(a) => {
                let mask = self.val(a).map(|x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                vec![(a, self.mul_const(h, Arc::new(mask)))]
            }
            ClampMin(a, lo) => {
                let mask = self.val(a).map(|x| if x >= lo { 1.0 } else { 0.0 });
                vec![(a, self.mul_const(h, Arc::new(mask)))]
            }
            Sigmoid(a) => {
                let om = self.one_minus(v);
                let d = self.mul(v, om);
                vec![(a, self.mul(h, d))]
            }
            Sqrt(a) => {
                let r = self.recip(v);
                let d = self.scale(r, 0.5);
                vec![(a, self.mul(h, d))]
            }
            Log(a) => {
                let r = self.recip(a);
                vec![(a, self.mul(h, r))]
            }
            Recip(a) => {
                let sq = self.square(v);
                let d = self.mul(h, sq);
                vec![(a, self.neg(d))]
            }
            Square(a) => {
                let d = self.scale(a, 2.0);
                vec![(a, self.mul(h, d))]
            }
            Reshape(a) => {
                let s = shape_of(a);
                vec![(a, self.reshape(h, &s))]
            }
            MatMul(a, b, ta, tb) => {
                let da = if ta {
                    self.matmul(b, h, tb, true)
                } else {
                    self.matmul(h, b, false, !tb)
                };
                let db = if tb {
                    self.matmul(h, a, true, ta)
                } else {
                    self.matmul(a, h, !ta, false)
                };
                vec![(a, da), (b, db)]
            }
            Conv(x, w, geom) => {
                let (xs, ws) = (shape_of(x), shape_of(w));
                vec![
                    (x, self.conv_input_grad(h, w, &xs, geom)),
                    (w, self.conv_weight_grad(x, h, &ws, geom)),
                ]
            }
            ConvInputGrad(g, w, geom) => {
                let ws = shape_of(w);
                vec![
                    (g, self.conv2d(h, w, geom)),
                    (w, self.conv_weight_grad(h, g, &ws, geom)),
                ]
            }
            ConvWeightGrad(x, g, geom) => {
                let xs = shape_of(x);
                vec![
                    (x, self.conv_input_grad(g, h, &xs, geom)),
                    (g, self.conv2d(x, h, geom)),
                ]
            }
            Meta(f, k, plan) => {
                let fs = shape_of(f);
                vec![
                    (f, self.meta_input_grad(h, k, &plan, &fs)),
                    (k, self.meta_kernel_grad(f, h, &plan)),
                ]
            }
            MetaInputGrad(g, k, plan) => vec![
                (g, self.meta_upscale(h, k, &plan)),
                (k, self.meta_kernel_grad(h, g, &plan)),
            ],
            MetaKernelGrad(f, g, plan) => {
                let fs = shape_of(f);
                vec![
                    (f, self.meta_input_grad(g, h, &plan, &fs)),
                    (g, self.meta_upscale(f, h, &plan)),
                ]
            }
            ExpandBias(b) => vec![(b, self.sum_to_bias(h))],
            SumToBias(g) => {
                let s = shape_of(g);
                vec![(g, self.expand_bias(h, &s))]
            }
            SumAll(a) => {
                let s = shape_of(a);
                vec![(a, self.expand_scalar(h, &s))]
            }
            ExpandScalar(s) => vec![(s, self.sum(h))],
            SumPerSample(a) => {
                let s = shape_of(a);
                vec![(a, self.expand_per_sample(h, &s))]
            }
            ExpandPerSample(p) => vec![(p, self.sum_per_sample(h))],
            Gap(x) => {
                let s = shape_of(x);
                vec![(x, self.gap_adjoint(h, &s))]
            }
            GapAdjoint(g) => vec![(g, self.global_avg_pool(h))],
            Gather(x, idx) => {
                let s = shape_of(x);
                vec![(x, self.scatter(h, &idx, &s))]
            }
            Scatter(g, idx) => {
                let s = shape_of(g);
                vec![(g, self.gather(h, &idx, &s))]
            }
            SelectChannel(x, c) => {
                let m = shape_of(x)[1];
                vec![(x, self.insert_channel(h, c, m))]
            }
            InsertChannel(g, c) => vec![(g, self.select_channel(h, c))],
            RepeatChannels(x) => vec![(x, self.sum_channels(h))],
            SumChannels(g) => {
                let k = shape_of(g)[1];
                vec![(g, self.repeat_channels(h, k))]
            }
        }
    }

    /// Gradients of the one-element node `root` with respect to `wrt`, as new
    /// nodes of this graph (so they can be differentiated again). Variables
    /// that `root` does not depend on get a zero leaf.
    pub fn grad(&self, root: Var, wrt: &[Var]) -> Vec<Var> {
        assert_eq!(
            self.val(root).numel(),
            1,
            "grad() needs a one-element root, got {:?}",
            self.shape(root)
        );
        let end = root.0 + 1;
        let mut relevant = vec![false; end];
        for w in wrt {
            if w.0 < end {
                relevant[w.0] = true;
            }
        }
        for i in 0..end {
            if !relevant[i] {
                let op = self.nodes.borrow()[i].op.clone();
                relevant[i] = op.inputs().iter().any(|x| relevant[x.0]);
            }
        }
        let mut grads: Vec<Option<Var>> = vec![None; end];
        if relevant[root.0] {
            grads[root.0] = Some(self.leaf(Tensor::full(&self.shape(root), 1.0)));
        }
        for i in (0..end).rev() {
            let Some(h) = grads[i] else { continue };
            let leaf = matches!(self.nodes.borrow()[i].op, Op::Leaf);
            if leaf {
                continue;
            }
            let inputs = self.nodes.borrow()[i].op.inputs();
            if !inputs.iter().any(|x| relevant[x.0]) {
                continue;
            }
            for (input, contrib) in self.vjp(Var(i), h) {
                if !relevant[input.0] {
                    continue;
                }
                grads[input.0] = Some(match grads[input.0] {
                    Some(prev) => self.add(prev, contrib),
                    None => contrib,
                });
            }
        }
        wrt.iter()
            .map(|w| match grads.get(w.0).copied().flatten() {
                Some(g) => g,
                None => self.leaf(Tensor::zeros(&self.shape(*w))),
            })
            .collect()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, eps: f64) -> Tensor {
        let mut g = Tensor::zeros(x.shape());
        for i in 0..x.numel() {
            let mut p = x.clone();
            p.data_mut()[i] += eps;
            let mut m = x.clone();
            m.data_mut()[i] -= eps;
            g.data_mut()[i] = (f(&p) - f(&m)) / (2.0 * eps);
        }
        g
    }

    #[test]
    fn matmul_gradients_for_every_transpose_flag() {
        let a0 = Tensor::from_fn(&[3, 4], |i| (i as f64 * 0.3).sin());
        let b0 = Tensor::from_fn(&[4, 2], |i| (i as f64 * 0.7).cos());
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let a_in = if ta { Tensor::from_fn(&[4, 3], |i| (i as f64 * 0.3).sin()) } else { a0.clone() };
            let b_in = if tb { Tensor::from_fn(&[2, 4], |i| (i as f64 * 0.7).cos()) } else { b0.clone() };
            let f = |a: &Tensor, b: &Tensor| {
                let g = Graph::new();
                let (va, vb) = (g.leaf(a.clone()), g.leaf(b.clone()));
                let y = g.matmul(va, vb, ta, tb);
                let y = g.square(y);
                let s = g.sum(y);
                (g.item(s), g.grad(s, &[va, vb]).iter().map(|v| (*g.value(*v)).clone()).collect::<Vec<_>>())
            };
            let (_, grads) = f(&a_in, &b_in);
            let na = numeric_grad(|a| f(a, &b_in).0, &a_in, 1e-6);
            let nb = numeric_grad(|b| f(&a_in, b).0, &b_in, 1e-6);
            assert!(grads[0].max_abs_diff(&na) < 1e-6, "ta={ta} tb={tb}");
            assert!(grads[1].max_abs_diff(&nb) < 1e-6, "ta={ta} tb={tb}");
        }
    }

    #[test]
    fn second_order_through_conv() {
        // d/dw of ||d(sum(conv(x, w)^2))/dx||^2 against finite differences.
        let x0 = Tensor::from_fn(&[1, 2, 4, 4], |i| (i as f64 * 0.37).sin());
        let w0 = Tensor::from_fn(&[2, 2, 3, 3], |i| (i as f64 * 0.19).cos() * 0.3);
        let f = |w: &Tensor| {
            let g = Graph::new();
            let x = g.leaf(x0.clone());
            let wv = g.leaf(w.clone());
            let y = g.conv2d(x, wv, ConvGeom::same(3));
            let y = g.leaky_relu(y, 0.2);
            let y = g.square(y);
            let s = g.sum(y);
            let dx = g.grad(s, &[x])[0];
            let n = g.square(dx);
            let n = g.sum(n);
            let dw = g.grad(n, &[wv])[0];
            (g.item(n), (*g.value(dw)).clone())
        };
        let (_, analytic) = f(&w0);
        let numeric = numeric_grad(|w| f(w).0, &w0, 1e-6);
        let err = analytic.zip_map(&numeric, |a, b| a - b).data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = numeric.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err / scale < 1e-5, "rel err {}", err / scale);
    }

    #[test]
    fn unrelated_variables_get_zero_gradient() {
        let g = Graph::new();
        let a = g.leaf(Tensor::scalar(2.0));
        let b = g.leaf(Tensor::scalar(3.0));
        let y = g.square(a);
        let grads = g.grad(y, &[a, b]);
        assert_eq!(g.item(grads[0]), 4.0);
        assert_eq!(g.item(grads[1]), 0.0);
    }

    #[test]
    fn elementwise_chain_rule() {
        let x0 = Tensor::from_fn(&[5], |i| 0.3 + i as f64 * 0.4);
        let f = |x: &Tensor| {
            let g = Graph::new();
            let xv = g.leaf(x.clone());
            let s = g.sigmoid(xv);
            let l = g.log(s);
            let r = g.recip(xv);
            let q = g.sqrt(xv);
            let a = g.add(l, r);
            let a = g.mul(a, q);
            let a = g.abs(a);
            let a = g.clamp_min(a, 0.01);
            let t = g.mean(a);
            (g.item(t), (*g.value(g.grad(t, &[xv])[0])).clone())
        };
        let (_, analytic) = f(&x0);
        let numeric = numeric_grad(|x| f(x).0, &x0, 1e-6);
        assert!(analytic.max_abs_diff(&numeric) < 1e-7);
    }
}
