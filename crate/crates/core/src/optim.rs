//! Adam with bias correction.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: ParamStore,
    pub v: ParamStore,
}

impl Adam {
    pub fn new(betas: (f64, f64), eps: f64) -> Self {
        Self {
            beta1: betas.0,
            beta2: betas.1,
            eps,
            t: 0,
            m: ParamStore::new(),
            v: ParamStore::new(),
        }
    }

    /// One update of every parameter that has a gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (name, g) in grads {
            let p = params.get(name).ok_or_else(|| Error::MissingParam(name.clone()))?;
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!("gradient of `{name}` has shape {:?}", g.shape())));
            }
            let zeros = || Arc::new(Tensor::zeros(g.shape()));
            let m = self.m.entry(name.clone()).or_insert_with(zeros);
            let m_new = m.zip_map(g, |m, g| b1 * m + (1.0 - b1) * g);
            let v = self.v.entry(name.clone()).or_insert_with(zeros);
            let v_new = v.zip_map(g, |v, g| b2 * v + (1.0 - b2) * g * g);
            let data = p
                .data()
                .iter()
                .zip(m_new.data().iter().zip(v_new.data()))
                .map(|(p, (m, v))| p - lr * (m / c1) / ((v / c2).sqrt() + eps))
                .collect();
            params.insert(name.clone(), Arc::new(Tensor::new(p.shape().to_vec(), data)));
            self.m.insert(name.clone(), Arc::new(m_new));
            self.v.insert(name.clone(), Arc::new(v_new));
        }
        Ok(())
    }
}
