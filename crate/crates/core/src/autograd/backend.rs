//! Network code is written once against [`Backend`] and runs either on the
//! tape ([`Graph`]) or eagerly without recording ([`Eager`]). Both call the
//! same kernels, so their forward values are bit-identical.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{sigmoid, Graph, Var};
use crate::error::{Error, Result};
use crate::generator::meta::{self, MetaPlan};
use crate::tensor::{bcast, conv, linalg, pool, ConvGeom, Tensor};

pub trait Backend {
    type T: Clone;

    fn leaf(&self, t: Arc<Tensor>) -> Self::T;
    fn value(&self, x: &Self::T) -> Arc<Tensor>;
    fn shape(&self, x: &Self::T) -> Vec<usize> {
        self.value(x).shape().to_vec()
    }

    fn add(&self, a: &Self::T, b: &Self::T) -> Self::T;
    fn sub(&self, a: &Self::T, b: &Self::T) -> Self::T;
    fn mul(&self, a: &Self::T, b: &Self::T) -> Self::T;
    fn scale(&self, a: &Self::T, c: f64) -> Self::T;
    fn leaky_relu(&self, a: &Self::T, slope: f64) -> Self::T;
    fn sigmoid(&self, a: &Self::T) -> Self::T;
    fn reshape(&self, a: &Self::T, shape: &[usize]) -> Self::T;
    fn matmul(&self, a: &Self::T, b: &Self::T, ta: bool, tb: bool) -> Self::T;
    fn conv2d(&self, x: &Self::T, w: &Self::T, geom: ConvGeom) -> Self::T;
    fn add_bias(&self, x: &Self::T, b: &Self::T) -> Self::T;
    fn meta_upscale(&self, f: &Self::T, k: &Self::T, plan: &Arc<MetaPlan>) -> Self::T;
    fn global_avg_pool(&self, x: &Self::T) -> Self::T;
    fn max_pool2d(&self, x: &Self::T, kernel: usize, stride: usize, ceil: bool) -> Self::T;
    fn select_channel(&self, x: &Self::T, c: usize) -> Self::T;
    fn repeat_channels(&self, x: &Self::T, k: usize) -> Self::T;

    /// Binds every tensor of a parameter map into this backend.
    fn bind(&self, params: &BTreeMap<String, Arc<Tensor>>) -> Bound<Self::T> {
        Bound {
            map: params.iter().map(|(k, v)| (k.clone(), self.leaf(v.clone()))).collect(),
        }
    }
}

/// Parameters bound into a backend, looked up by checkpoint name.
#[derive(Clone, Debug)]
pub struct Bound<T> {
    map: BTreeMap<String, T>,
}

impl<T: Clone> Bound<T> {
    pub fn get(&self, name: &str) -> Result<T> {
        self.map
            .get(name)
            .cloned()
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &T)> {
        self.map.iter()
    }

    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a String, &'a T)> + 'a {
        self.map.iter().filter(move |(k, _)| k.starts_with(prefix))
    }
}

impl Backend for Graph {
    type T = Var;

    fn leaf(&self, t: Arc<Tensor>) -> Var {
        Graph::leaf(self, t)
    }
    fn value(&self, x: &Var) -> Arc<Tensor> {
        Graph::value(self, *x)
    }
    fn add(&self, a: &Var, b: &Var) -> Var {
        Graph::add(self, *a, *b)
    }
    fn sub(&self, a: &Var, b: &Var) -> Var {
        Graph::sub(self, *a, *b)
    }
    fn mul(&self, a: &Var, b: &Var) -> Var {
        Graph::mul(self, *a, *b)
    }
    fn scale(&self, a: &Var, c: f64) -> Var {
        Graph::scale(self, *a, c)
    }
    fn leaky_relu(&self, a: &Var, slope: f64) -> Var {
        Graph::leaky_relu(self, *a, slope)
    }
    fn sigmoid(&self, a: &Var) -> Var {
        Graph::sigmoid(self, *a)
    }
    fn reshape(&self, a: &Var, shape: &[usize]) -> Var {
        Graph::reshape(self, *a, shape)
    }
    fn matmul(&self, a: &Var, b: &Var, ta: bool, tb: bool) -> Var {
        Graph::matmul(self, *a, *b, ta, tb)
    }
    fn conv2d(&self, x: &Var, w: &Var, geom: ConvGeom) -> Var {
        Graph::conv2d(self, *x, *w, geom)
    }
    fn add_bias(&self, x: &Var, b: &Var) -> Var {
        Graph::add_bias(self, *x, *b)
    }
    fn meta_upscale(&self, f: &Var, k: &Var, plan: &Arc<MetaPlan>) -> Var {
        Graph::meta_upscale(self, *f, *k, plan)
    }
    fn global_avg_pool(&self, x: &Var) -> Var {
        Graph::global_avg_pool(self, *x)
    }
    fn max_pool2d(&self, x: &Var, kernel: usize, stride: usize, ceil: bool) -> Var {
        Graph::max_pool2d(self, *x, kernel, stride, ceil)
    }
    fn select_channel(&self, x: &Var, c: usize) -> Var {
        Graph::select_channel(self, *x, c)
    }
    fn repeat_channels(&self, x: &Var, k: usize) -> Var {
        Graph::repeat_channels(self, *x, k)
    }
}

/// Evaluation without a tape.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

type A = Arc<Tensor>;

impl Backend for Eager {
    type T = A;

    fn leaf(&self, t: A) -> A {
        t
    }
    fn value(&self, x: &A) -> A {
        x.clone()
    }
    fn add(&self, a: &A, b: &A) -> A {
        Arc::new(a.zip_map(b, |x, y| x + y))
    }
    fn sub(&self, a: &A, b: &A) -> A {
        Arc::new(a.zip_map(b, |x, y| x - y))
    }
    fn mul(&self, a: &A, b: &A) -> A {
        Arc::new(a.zip_map(b, |x, y| x * y))
    }
    fn scale(&self, a: &A, c: f64) -> A {
        Arc::new(a.map(|x| x * c))
    }
    fn leaky_relu(&self, a: &A, slope: f64) -> A {
        Arc::new(a.map(|x| if x > 0.0 { x } else { slope * x }))
    }
    fn sigmoid(&self, a: &A) -> A {
        Arc::new(a.map(sigmoid))
    }
    fn reshape(&self, a: &A, shape: &[usize]) -> A {
        Arc::new((**a).clone().reshape(shape))
    }
    fn matmul(&self, a: &A, b: &A, ta: bool, tb: bool) -> A {
        Arc::new(linalg::matmul(a, b, ta, tb))
    }
    fn conv2d(&self, x: &A, w: &A, geom: ConvGeom) -> A {
        Arc::new(conv::conv2d(x, w, geom))
    }
    fn add_bias(&self, x: &A, b: &A) -> A {
        let e = bcast::expand_bias(b, x.shape());
        Arc::new(x.zip_map(&e, |p, q| p + q))
    }
    fn meta_upscale(&self, f: &A, k: &A, plan: &Arc<MetaPlan>) -> A {
        Arc::new(meta::upscale(f, k, plan))
    }
    fn global_avg_pool(&self, x: &A) -> A {
        Arc::new(pool::global_avg_pool(x))
    }
    fn max_pool2d(&self, x: &A, kernel: usize, stride: usize, ceil: bool) -> A {
        Arc::new(pool::max_pool2d(x, kernel, stride, ceil).0)
    }
    fn select_channel(&self, x: &A, c: usize) -> A {
        Arc::new(bcast::select_channel(x, c))
    }
    fn repeat_channels(&self, x: &A, k: usize) -> A {
        Arc::new(bcast::repeat_channels(x, k))
    }
}
