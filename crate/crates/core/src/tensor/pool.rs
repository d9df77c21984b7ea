use super::Tensor;

/// Max pooling without padding; returns the pooled tensor and, per output
/// element, the flat index of the winning input element.
pub(crate) fn max_pool2d(x: &Tensor, kernel: usize, stride: usize, ceil: bool) -> (Tensor, Vec<usize>) {
    let (n, c, h, w) = x.dims4();
    let span = |len: usize| {
        if len < kernel {
            return 1;
        }
        let num = len - kernel;
        if ceil {
            num.div_ceil(stride) + 1
        } else {
            num / stride + 1
        }
    };
    let (ho, wo) = (span(h), span(w));
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut idx = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = base + (oy * stride).min(h - 1) * w + (ox * stride).min(w - 1);
                for ky in 0..kernel {
                    let iy = oy * stride + ky;
                    if iy >= h {
                        break;
                    }
                    for kx in 0..kernel {
                        let ix = ox * stride + kx;
                        if ix >= w {
                            break;
                        }
                        let v = x.data()[base + iy * w + ix];
                        if v > best {
                            best = v;
                            best_i = base + iy * w + ix;
                        }
                    }
                }
                out.push(x.data()[best_i]);
                idx.push(best_i);
            }
        }
    }
    (Tensor::new(vec![n, c, ho, wo], out), idx)
}

pub(crate) fn gather(x: &Tensor, idx: &[usize], out_shape: &[usize]) -> Tensor {
    Tensor::new(out_shape.to_vec(), idx.iter().map(|&i| x.data()[i]).collect())
}

pub(crate) fn scatter_add(g: &Tensor, idx: &[usize], out_shape: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(out_shape);
    for (&i, &v) in idx.iter().zip(g.data()) {
        out.data_mut()[i] += v;
    }
    out
}

/// Global average pool `[n, c, h, w] -> [n, c]`.
pub(crate) fn global_avg_pool(x: &Tensor) -> Tensor {
    let (n, c, h, w) = x.dims4();
    let hw = h * w;
    let data = x
        .data()
        .chunks(hw)
        .map(|p| p.iter().sum::<f64>() / hw as f64)
        .collect();
    Tensor::new(vec![n, c], data)
}

/// Adjoint of [`global_avg_pool`]: spreads `g [n, c]` uniformly over `h × w`.
pub(crate) fn global_avg_pool_adjoint(g: &Tensor, shape: &[usize]) -> Tensor {
    let hw = shape[2] * shape[3];
    let mut data = Vec::with_capacity(g.numel() * hw);
    for &v in g.data() {
        data.extend(std::iter::repeat_n(v / hw as f64, hw));
    }
    Tensor::new(shape.to_vec(), data)
}

/// Average pooling with zero padding counted in the divisor.
pub(crate) fn avg_pool2d(x: &Tensor, kernel: usize, stride: usize, pad: usize) -> Tensor {
    let (n, c, h, w) = x.dims4();
    let ho = (h + 2 * pad - kernel) / stride + 1;
    let wo = (w + 2 * pad - kernel) / stride + 1;
    let norm = (kernel * kernel) as f64;
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0;
                for ky in 0..kernel {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for kx in 0..kernel {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix as usize >= w {
                            continue;
                        }
                        acc += x.data()[base + iy as usize * w + ix as usize];
                    }
                }
                out.push(acc / norm);
            }
        }
    }
    Tensor::new(vec![n, c, ho, wo], out)
}
