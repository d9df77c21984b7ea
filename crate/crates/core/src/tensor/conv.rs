//! Zero-padded 2D cross-correlation (NCHW) and its two adjoints.
//!
//! The forward map and both adjoints are partial derivatives of one trilinear
//! form `<g, conv(x, w)>`, which lets the tape differentiate them to any order.

use rayon::prelude::*;

use super::linalg::gemm;
use super::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvGeom {
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl ConvGeom {
    /// Stride 1 with padding that preserves spatial dims for an odd kernel.
    pub fn same(kernel: usize) -> Self {
        Self {
            stride: (1, 1),
            pad: (kernel / 2, kernel / 2),
        }
    }

    pub fn new(stride: usize, pad: usize) -> Self {
        Self {
            stride: (stride, stride),
            pad: (pad, pad),
        }
    }

    pub fn out_dims(&self, h: usize, w: usize, kh: usize, kw: usize) -> Option<(usize, usize)> {
        let hp = h + 2 * self.pad.0;
        let wp = w + 2 * self.pad.1;
        if hp < kh || wp < kw || self.stride.0 == 0 || self.stride.1 == 0 {
            return None;
        }
        Some(((hp - kh) / self.stride.0 + 1, (wp - kw) / self.stride.1 + 1))
    }
}

struct Layout {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    geom: ConvGeom,
}

impl Layout {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    fn src_index(&self, oy: usize, ky: usize, ox: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.geom.stride.0 + ky) as isize - self.geom.pad.0 as isize;
        let ix = (ox * self.geom.stride.1 + kx) as isize - self.geom.pad.1 as isize;
        if iy < 0 || ix < 0 || iy as usize >= self.h || ix as usize >= self.w {
            None
        } else {
            Some((iy as usize, ix as usize))
        }
    }
}

fn im2col(x: &[f64], l: &Layout, cols: &mut [f64]) {
    let p = l.cols();
    for ci in 0..l.c {
        for ky in 0..l.kh {
            for kx in 0..l.kw {
                let row = (ci * l.kh + ky) * l.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..l.ho {
                    for ox in 0..l.wo {
                        dst[oy * l.wo + ox] = match l.src_index(oy, ky, ox, kx) {
                            Some((iy, ix)) => x[(ci * l.h + iy) * l.w + ix],
                            None => 0.0,
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], l: &Layout, x: &mut [f64]) {
    let p = l.cols();
    for ci in 0..l.c {
        for ky in 0..l.kh {
            for kx in 0..l.kw {
                let row = (ci * l.kh + ky) * l.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..l.ho {
                    for ox in 0..l.wo {
                        if let Some((iy, ix)) = l.src_index(oy, ky, ox, kx) {
                            x[(ci * l.h + iy) * l.w + ix] += src[oy * l.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn layout(x_shape: &[usize], w_shape: &[usize], geom: ConvGeom) -> Layout {
    assert_eq!(x_shape.len(), 4, "conv input must be NCHW");
    assert_eq!(w_shape.len(), 4, "conv weight must be OCKK");
    assert_eq!(
        x_shape[1], w_shape[1],
        "conv channel mismatch: input {x_shape:?}, weight {w_shape:?}"
    );
    let (h, w) = (x_shape[2], x_shape[3]);
    let (kh, kw) = (w_shape[2], w_shape[3]);
    let (ho, wo) = geom
        .out_dims(h, w, kh, kw)
        .unwrap_or_else(|| panic!("conv kernel {kh}x{kw} larger than padded input {h}x{w}"));
    Layout {
        c: x_shape[1],
        h,
        w,
        kh,
        kw,
        ho,
        wo,
        geom,
    }
}

/// `[n, c, h, w] ⋆ [o, c, kh, kw] -> [n, o, ho, wo]`.
pub(crate) fn conv2d(x: &Tensor, w: &Tensor, geom: ConvGeom) -> Tensor {
    let l = layout(x.shape(), w.shape(), geom);
    let n = x.shape()[0];
    let o = w.shape()[0];
    let in_len = l.c * l.h * l.w;
    let out_len = o * l.cols();
    let mut out = vec![0.0; n * out_len];
    out.par_chunks_mut(out_len.max(1))
        .zip(x.data().par_chunks(in_len.max(1)))
        .for_each(|(dst, src)| {
            let mut cols = vec![0.0; l.rows() * l.cols()];
            im2col(src, &l, &mut cols);
            gemm(o, l.rows(), l.cols(), w.data(), false, &cols, false, dst, false);
        });
    Tensor::new(vec![n, o, l.ho, l.wo], out)
}

/// Adjoint of [`conv2d`] in its input: `g [n, o, ho, wo] -> [n, c, h, w]`.
pub(crate) fn conv2d_input_grad(g: &Tensor, w: &Tensor, x_shape: &[usize], geom: ConvGeom) -> Tensor {
    let l = layout(x_shape, w.shape(), geom);
    let n = x_shape[0];
    let o = w.shape()[0];
    assert_eq!(g.shape(), &[n, o, l.ho, l.wo], "conv grad shape mismatch");
    let in_len = l.c * l.h * l.w;
    let out_len = o * l.cols();
    let mut dx = vec![0.0; n * in_len];
    dx.par_chunks_mut(in_len.max(1))
        .zip(g.data().par_chunks(out_len.max(1)))
        .for_each(|(dst, gs)| {
            let mut cols = vec![0.0; l.rows() * l.cols()];
            gemm(l.rows(), o, l.cols(), w.data(), true, gs, false, &mut cols, false);
            col2im(&cols, &l, dst);
        });
    Tensor::new(x_shape.to_vec(), dx)
}

/// Adjoint of [`conv2d`] in its weight: `(x, g) -> [o, c, kh, kw]`, summed over
/// the batch in sample order.
pub(crate) fn conv2d_weight_grad(x: &Tensor, g: &Tensor, w_shape: &[usize], geom: ConvGeom) -> Tensor {
    let l = layout(x.shape(), w_shape, geom);
    let n = x.shape()[0];
    let o = w_shape[0];
    assert_eq!(g.shape(), &[n, o, l.ho, l.wo], "conv grad shape mismatch");
    let in_len = l.c * l.h * l.w;
    let out_len = o * l.cols();
    let w_len = o * l.rows();
    let partials: Vec<Vec<f64>> = x
        .data()
        .par_chunks(in_len.max(1))
        .zip(g.data().par_chunks(out_len.max(1)))
        .map(|(xs, gs)| {
            let mut cols = vec![0.0; l.rows() * l.cols()];
            im2col(xs, &l, &mut cols);
            let mut dw = vec![0.0; w_len];
            gemm(o, l.cols(), l.rows(), gs, false, &cols, true, &mut dw, false);
            dw
        })
        .collect();
    let mut dw = vec![0.0; w_len];
    for p in &partials {
        for (a, b) in dw.iter_mut().zip(p) {
            *a += b;
        }
    }
    Tensor::new(w_shape.to_vec(), dw)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor, w: &Tensor, geom: ConvGeom) -> Tensor {
        let (n, c, h, wd) = x.dims4();
        let (o, _, kh, kw) = w.dims4();
        let (ho, wo) = geom.out_dims(h, wd, kh, kw).unwrap();
        let mut out = Tensor::zeros(&[n, o, ho, wo]);
        for b in 0..n {
            for oc in 0..o {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * geom.stride.0 + ky) as isize - geom.pad.0 as isize;
                                    let ix = (ox * geom.stride.1 + kx) as isize - geom.pad.1 as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += x.data()[((b * c + ci) * h + iy as usize) * wd + ix as usize]
                                            * w.data()[((oc * c + ci) * kh + ky) * kw + kx];
                                    }
                                }
                            }
                        }
                        out.data_mut()[((b * o + oc) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn conv_matches_nested_loops() {
        let x = Tensor::from_fn(&[2, 3, 7, 6], |i| ((i * 7919) % 101) as f64 / 50.0 - 1.0);
        let w = Tensor::from_fn(&[4, 3, 3, 3], |i| ((i * 104729) % 37) as f64 / 18.0 - 1.0);
        for geom in [ConvGeom::same(3), ConvGeom::new(2, 1), ConvGeom::new(1, 0)] {
            let got = conv2d(&x, &w, geom);
            let want = naive_conv(&x, &w, geom);
            assert!(got.max_abs_diff(&want) < 1e-12, "{geom:?}");
        }
    }

    #[test]
    fn adjoints_satisfy_the_dot_product_identity() {
        let x = Tensor::from_fn(&[2, 3, 5, 6], |i| (i as f64 * 0.3).sin());
        let w = Tensor::from_fn(&[4, 3, 3, 3], |i| (i as f64 * 0.7).cos());
        let geom = ConvGeom::new(2, 1);
        let y = conv2d(&x, &w, geom);
        let g = Tensor::from_fn(y.shape(), |i| (i as f64 * 0.13).sin());
        let lhs = dot(&g, &y);
        let dx = conv2d_input_grad(&g, &w, x.shape(), geom);
        let dw = conv2d_weight_grad(&x, &g, w.shape(), geom);
        assert!((lhs - dot(&dx, &x)).abs() < 1e-10);
        assert!((lhs - dot(&dw, &w)).abs() < 1e-10);
    }
}
