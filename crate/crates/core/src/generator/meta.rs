//! Meta-upscale geometry and kernels.
//!
//! Every output pixel `(i, j)` at scale `s` reads the `k × k` neighbourhood of
//! the LR feature map centred at `(⌊i/s⌋, ⌊j/s⌋)` (reflection at the borders)
//! and contracts it with its own predicted kernel. The predicted kernel only
//! depends on `(i/s − ⌊i/s⌋, j/s − ⌊j/s⌋, 1/s)`, so the plan deduplicates
//! output rows and columns by offset and stores one kernel per distinct pair.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scale::{scaled_len, source_and_offset, validate_scale};
use crate::tensor::linalg::gemm;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct MetaPlan {
    scale: f64,
    in_dims: (usize, usize),
    out_dims: (usize, usize),
    kernel_size: usize,
    channels_in: usize,
    channels_out: usize,
    row_offsets: Vec<f64>,
    col_offsets: Vec<f64>,
    row_kernel: Vec<usize>,
    col_kernel: Vec<usize>,
    row_src: Vec<usize>,
    col_src: Vec<usize>,
}

fn axis_plan(out_len: usize, in_len: usize, s: f64) -> (Vec<f64>, Vec<usize>, Vec<usize>) {
    let mut uniq: Vec<f64> = Vec::new();
    let mut ids = Vec::with_capacity(out_len);
    let mut src = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let (fl, off) = source_and_offset(i, s);
        let id = match uniq.iter().position(|u| u.to_bits() == off.to_bits()) {
            Some(id) => id,
            None => {
                uniq.push(off);
                uniq.len() - 1
            }
        };
        ids.push(id);
        src.push(fl.min(in_len - 1));
    }
    (uniq, ids, src)
}

impl MetaPlan {
    /// Plan for an explicit output size, which must follow `⌊s · in⌋`.
    pub fn new(
        scale: f64,
        in_dims: (usize, usize),
        out_dims: (usize, usize),
        kernel_size: usize,
        channels_in: usize,
        channels_out: usize,
    ) -> Result<Self> {
        validate_scale(scale)?;
        if in_dims.0 == 0 || in_dims.1 == 0 {
            return Err(Error::Shape("empty LR feature map".into()));
        }
        let expected = (scaled_len(in_dims.0, scale), scaled_len(in_dims.1, scale));
        if out_dims != expected {
            return Err(Error::Shape(format!(
                "output dims {out_dims:?} inconsistent with floor(s * {in_dims:?}) = {expected:?} at s = {scale}"
            )));
        }
        if kernel_size.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("kernel size {kernel_size} must be odd")));
        }
        let (row_offsets, row_kernel, row_src) = axis_plan(out_dims.0, in_dims.0, scale);
        let (col_offsets, col_kernel, col_src) = axis_plan(out_dims.1, in_dims.1, scale);
        Ok(Self {
            scale,
            in_dims,
            out_dims,
            kernel_size,
            channels_in,
            channels_out,
            row_offsets,
            col_offsets,
            row_kernel,
            col_kernel,
            row_src,
            col_src,
        })
    }

    pub fn for_input(
        scale: f64,
        in_dims: (usize, usize),
        kernel_size: usize,
        channels_in: usize,
        channels_out: usize,
    ) -> Result<Self> {
        validate_scale(scale)?;
        let out = (scaled_len(in_dims.0, scale), scaled_len(in_dims.1, scale));
        Self::new(scale, in_dims, out, kernel_size, channels_in, channels_out)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn in_dims(&self) -> (usize, usize) {
        self.in_dims
    }

    pub fn out_dims(&self) -> (usize, usize) {
        self.out_dims
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn channels_in(&self) -> usize {
        self.channels_in
    }

    pub fn channels_out(&self) -> usize {
        self.channels_out
    }

    /// Number of distinct predicted kernels.
    pub fn n_kernels(&self) -> usize {
        self.row_offsets.len() * self.col_offsets.len()
    }

    /// Scalars per kernel: `channels_out × channels_in × k × k`.
    pub fn kernel_len(&self) -> usize {
        self.channels_out * self.taps()
    }

    fn taps(&self) -> usize {
        self.channels_in * self.kernel_size * self.kernel_size
    }

    pub fn kernel_index(&self, i: usize, j: usize) -> usize {
        self.row_kernel[i] * self.col_offsets.len() + self.col_kernel[j]
    }

    /// LR source pixel of output pixel `(i, j)`, clamped into the LR grid.
    pub fn source(&self, i: usize, j: usize) -> (usize, usize) {
        (self.row_src[i], self.col_src[j])
    }

    /// Weight-prediction input `(i/s − ⌊i/s⌋, j/s − ⌊j/s⌋, 1/s)` of `(i, j)`.
    pub fn meta_input(&self, i: usize, j: usize) -> [f64; 3] {
        [
            self.row_offsets[self.row_kernel[i]],
            self.col_offsets[self.col_kernel[j]],
            1.0 / self.scale,
        ]
    }

    /// One weight-prediction input row per distinct kernel, `[n_kernels, 3]`.
    pub fn meta_inputs(&self) -> Tensor {
        let nc = self.col_offsets.len();
        let mut data = Vec::with_capacity(self.n_kernels() * 3);
        for &r in &self.row_offsets {
            for &c in &self.col_offsets[..nc] {
                data.extend_from_slice(&[r, c, 1.0 / self.scale]);
            }
        }
        Tensor::new(vec![self.n_kernels(), 3], data)
    }

    fn pixel_tables(&self) -> (Vec<usize>, Vec<usize>) {
        let (ho, wo) = self.out_dims;
        let mut ker = Vec::with_capacity(ho * wo);
        let mut src = Vec::with_capacity(ho * wo);
        for i in 0..ho {
            for j in 0..wo {
                ker.push(self.kernel_index(i, j));
                let (si, sj) = self.source(i, j);
                src.push(si * self.in_dims.1 + sj);
            }
        }
        (ker, src)
    }

    /// LR flat indices of the `k × k` taps around LR pixel `(y, x)`, reflected
    /// at the borders, in `(dy, dx)` row-major order.
    pub fn tap_indices(&self, y: usize, x: usize) -> Vec<usize> {
        let r = (self.kernel_size / 2) as isize;
        let (h, w) = self.in_dims;
        let mut out = Vec::with_capacity(self.kernel_size * self.kernel_size);
        for dy in -r..=r {
            for dx in -r..=r {
                out.push(reflect(y as isize + dy, h) * w + reflect(x as isize + dx, w));
            }
        }
        out
    }
}

/// Mirror reflection without edge repetition (`-1 -> 1`, `n -> n-2`).
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Predicted kernels for a plan. `kernels[u]` is laid out
/// `[channels_out, channels_in, k, k]`.
#[derive(Debug, Clone)]
pub struct MetaWeights {
    pub plan: Arc<MetaPlan>,
    pub kernels: Tensor,
}

impl MetaWeights {
    pub fn new(plan: Arc<MetaPlan>, kernels: Tensor) -> Result<Self> {
        if kernels.shape() != [plan.n_kernels(), plan.kernel_len()] {
            return Err(Error::Shape(format!(
                "kernel table {:?} does not match plan [{}, {}]",
                kernels.shape(),
                plan.n_kernels(),
                plan.kernel_len()
            )));
        }
        Ok(Self { plan, kernels })
    }

    /// Number of output pixels, each of which owns one (possibly shared) kernel.
    pub fn pixel_count(&self) -> usize {
        self.plan.out_dims.0 * self.plan.out_dims.1
    }

    /// Kernel of output pixel `(i, j)`.
    pub fn kernel_at(&self, i: usize, j: usize) -> &[f64] {
        let u = self.plan.kernel_index(i, j);
        let len = self.plan.kernel_len();
        &self.kernels.data()[u * len..(u + 1) * len]
    }

    pub fn source(&self, i: usize, j: usize) -> (usize, usize) {
        self.plan.source(i, j)
    }
}

/// Reflection im2col of one sample, transposed: `[h*w, c*k*k]`.
fn reflect_cols(f: &[f64], plan: &MetaPlan) -> Vec<f64> {
    let (h, w) = plan.in_dims;
    let c = plan.channels_in;
    let k = plan.kernel_size;
    let taps = plan.taps();
    let mut cols = vec![0.0; h * w * taps];
    for y in 0..h {
        for x in 0..w {
            let idx = plan.tap_indices(y, x);
            let row = &mut cols[(y * w + x) * taps..(y * w + x + 1) * taps];
            for ci in 0..c {
                for (t, &src) in idx.iter().enumerate() {
                    row[ci * k * k + t] = f[ci * h * w + src];
                }
            }
        }
    }
    cols
}

fn reflect_cols_adjoint(cols: &[f64], plan: &MetaPlan, f: &mut [f64]) {
    let (h, w) = plan.in_dims;
    let c = plan.channels_in;
    let k = plan.kernel_size;
    let taps = plan.taps();
    for y in 0..h {
        for x in 0..w {
            let idx = plan.tap_indices(y, x);
            let row = &cols[(y * w + x) * taps..(y * w + x + 1) * taps];
            for ci in 0..c {
                for (t, &src) in idx.iter().enumerate() {
                    f[ci * h * w + src] += row[ci * k * k + t];
                }
            }
        }
    }
}

fn check_features(f_shape: &[usize], plan: &MetaPlan) {
    assert_eq!(f_shape.len(), 4, "meta-upscale input must be NCHW");
    assert_eq!(
        (f_shape[1], f_shape[2], f_shape[3]),
        (plan.channels_in, plan.in_dims.0, plan.in_dims.1),
        "meta-upscale input does not match plan"
    );
}

/// Local-kernel meta-upscale: `f [n, c, h, w]`, `kernels [u, o*c*k*k]` ->
/// `[n, o, ⌊s·h⌋, ⌊s·w⌋]`.
pub(crate) fn upscale(f: &Tensor, kernels: &Tensor, plan: &MetaPlan) -> Tensor {
    check_features(f.shape(), plan);
    assert_eq!(kernels.shape(), &[plan.n_kernels(), plan.kernel_len()]);
    let n = f.shape()[0];
    let (ho, wo) = plan.out_dims;
    let o = plan.channels_out;
    let taps = plan.taps();
    let in_len = plan.channels_in * plan.in_dims.0 * plan.in_dims.1;
    let out_len = o * ho * wo;
    let (ker, src) = plan.pixel_tables();
    let mut out = vec![0.0; n * out_len];
    out.par_chunks_mut(out_len)
        .zip(f.data().par_chunks(in_len))
        .for_each(|(dst, fs)| {
            let cols = reflect_cols(fs, plan);
            for p in 0..ho * wo {
                let patch = &cols[src[p] * taps..(src[p] + 1) * taps];
                let kern = &kernels.data()[ker[p] * o * taps..(ker[p] + 1) * o * taps];
                for oc in 0..o {
                    let kv = &kern[oc * taps..(oc + 1) * taps];
                    dst[oc * ho * wo + p] = kv.iter().zip(patch).map(|(a, b)| a * b).sum();
                }
            }
        });
    Tensor::new(vec![n, o, ho, wo], out)
}

/// Adjoint of [`upscale`] in the features.
pub(crate) fn upscale_input_grad(g: &Tensor, kernels: &Tensor, plan: &MetaPlan, f_shape: &[usize]) -> Tensor {
    check_features(f_shape, plan);
    let n = f_shape[0];
    let (ho, wo) = plan.out_dims;
    let o = plan.channels_out;
    let taps = plan.taps();
    let (h, w) = plan.in_dims;
    let in_len = plan.channels_in * h * w;
    let out_len = o * ho * wo;
    assert_eq!(g.shape(), &[n, o, ho, wo], "meta-upscale grad shape mismatch");
    let (ker, src) = plan.pixel_tables();
    let mut df = vec![0.0; n * in_len];
    df.par_chunks_mut(in_len)
        .zip(g.data().par_chunks(out_len))
        .for_each(|(dst, gs)| {
            let mut cols = vec![0.0; h * w * taps];
            for p in 0..ho * wo {
                let kern = &kernels.data()[ker[p] * o * taps..(ker[p] + 1) * o * taps];
                let row = &mut cols[src[p] * taps..(src[p] + 1) * taps];
                for oc in 0..o {
                    let gv = gs[oc * ho * wo + p];
                    for (r, kv) in row.iter_mut().zip(&kern[oc * taps..(oc + 1) * taps]) {
                        *r += gv * kv;
                    }
                }
            }
            reflect_cols_adjoint(&cols, plan, dst);
        });
    Tensor::new(f_shape.to_vec(), df)
}

/// Adjoint of [`upscale`] in the kernel table, summed over the batch in order.
pub(crate) fn upscale_kernel_grad(f: &Tensor, g: &Tensor, plan: &MetaPlan) -> Tensor {
    check_features(f.shape(), plan);
    let n = f.shape()[0];
    let (ho, wo) = plan.out_dims;
    let o = plan.channels_out;
    let taps = plan.taps();
    let in_len = plan.channels_in * plan.in_dims.0 * plan.in_dims.1;
    let out_len = o * ho * wo;
    assert_eq!(g.shape(), &[n, o, ho, wo], "meta-upscale grad shape mismatch");
    let (ker, src) = plan.pixel_tables();
    let k_len = plan.n_kernels() * o * taps;
    let partials: Vec<Vec<f64>> = f
        .data()
        .par_chunks(in_len)
        .zip(g.data().par_chunks(out_len))
        .map(|(fs, gs)| {
            let cols = reflect_cols(fs, plan);
            let mut dk = vec![0.0; k_len];
            for p in 0..ho * wo {
                let patch = &cols[src[p] * taps..(src[p] + 1) * taps];
                let base = ker[p] * o * taps;
                for oc in 0..o {
                    let gv = gs[oc * ho * wo + p];
                    let dst = &mut dk[base + oc * taps..base + (oc + 1) * taps];
                    for (d, pv) in dst.iter_mut().zip(patch) {
                        *d += gv * pv;
                    }
                }
            }
            dk
        })
        .collect();
    let mut dk = vec![0.0; k_len];
    for p in &partials {
        for (a, b) in dk.iter_mut().zip(p) {
            *a += b;
        }
    }
    Tensor::new(vec![plan.n_kernels(), o * taps], dk)
}

/// Literal dense form `F_sr = W_s × F_lr`: materialises, per output channel,
/// the `[H_out·W_out, C·H_in·W_in]` magnification matrix by scattering each
/// pixel's kernel onto its reflected source support, then multiplies.
/// `f` is `[c, h, w]`; refuses when `W_s` would exceed `element_cap` scalars.
pub fn dense_upscale(f: &Tensor, weights: &MetaWeights, element_cap: usize) -> Result<Tensor> {
    let plan = &weights.plan;
    let (h, w) = plan.in_dims;
    let c = plan.channels_in;
    if f.shape() != [c, h, w] {
        return Err(Error::Shape(format!(
            "dense meta-upscale expects [{c}, {h}, {w}], got {:?}",
            f.shape()
        )));
    }
    let (ho, wo) = plan.out_dims;
    let o = plan.channels_out;
    let k2 = plan.kernel_size * plan.kernel_size;
    let rows = ho * wo;
    let cols = c * h * w;
    let requested = o * rows * cols;
    if requested > element_cap {
        return Err(Error::MemoryBudget {
            requested,
            cap: element_cap,
        });
    }
    let mut out = vec![0.0; o * rows];
    for oc in 0..o {
        let mut mat = vec![0.0; rows * cols];
        for i in 0..ho {
            for j in 0..wo {
                let p = i * wo + j;
                let (si, sj) = plan.source(i, j);
                let taps = plan.tap_indices(si, sj);
                let kern = weights.kernel_at(i, j);
                for ci in 0..c {
                    for (t, &q) in taps.iter().enumerate() {
                        mat[p * cols + ci * h * w + q] += kern[(oc * c + ci) * k2 + t];
                    }
                }
            }
        }
        gemm(rows, cols, 1, &mat, false, f.data(), false, &mut out[oc * rows..(oc + 1) * rows], false);
    }
    Ok(Tensor::new(vec![o, ho, wo], out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflection_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(6, 5), 2);
        assert_eq!(reflect(3, 1), 0);
        assert_eq!(reflect(-1, 2), 1);
    }

    #[test]
    fn plan_deduplicates_offsets() {
        let plan = MetaPlan::for_input(2.0, (6, 6), 3, 4, 1).unwrap();
        assert_eq!(plan.out_dims(), (12, 12));
        assert_eq!(plan.n_kernels(), 4);
        assert_eq!(plan.kernel_index(0, 0), plan.kernel_index(2, 4));
        assert_eq!(plan.meta_input(3, 5), [0.5, 0.5, 0.5]);
        assert_eq!(plan.source(11, 11), (5, 5));
    }

    #[test]
    fn plan_rejects_inconsistent_output() {
        assert!(MetaPlan::new(2.0, (6, 6), (13, 12), 3, 1, 1).is_err());
        assert!(MetaPlan::new(0.5, (6, 6), (3, 3), 3, 1, 1).is_err());
    }

    #[test]
    fn adjoints_satisfy_the_dot_product_identity() {
        let plan = MetaPlan::for_input(1.7, (5, 4), 3, 2, 2).unwrap();
        let f = Tensor::from_fn(&[2, 2, 5, 4], |i| (i as f64 * 0.37).sin());
        let k = Tensor::from_fn(&[plan.n_kernels(), plan.kernel_len()], |i| (i as f64 * 0.11).cos());
        let y = upscale(&f, &k, &plan);
        let g = Tensor::from_fn(y.shape(), |i| (i as f64 * 0.07).sin());
        let dot = |a: &Tensor, b: &Tensor| a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>();
        let lhs = dot(&g, &y);
        let df = upscale_input_grad(&g, &k, &plan, f.shape());
        let dk = upscale_kernel_grad(&f, &g, &plan);
        assert!((lhs - dot(&df, &f)).abs() < 1e-10 * lhs.abs().max(1.0));
        assert!((lhs - dot(&dk, &k)).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn dense_refuses_over_cap() {
        let plan = Arc::new(MetaPlan::for_input(2.0, (4, 4), 3, 1, 1).unwrap());
        let k = Tensor::zeros(&[plan.n_kernels(), plan.kernel_len()]);
        let w = MetaWeights::new(plan, k).unwrap();
        let f = Tensor::zeros(&[1, 4, 4]);
        assert!(matches!(dense_upscale(&f, &w, 100), Err(Error::MemoryBudget { .. })));
        assert!(dense_upscale(&f, &w, 1 << 20).is_ok());
    }
}
