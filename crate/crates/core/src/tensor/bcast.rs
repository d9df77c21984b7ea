//! Broadcast, reduction and channel-shuffling kernels, each paired with its
//! adjoint.

use super::Tensor;

fn axis1(shape: &[usize]) -> (usize, usize, usize) {
    assert!(shape.len() >= 2, "expected at least rank 2, got {shape:?}");
    let inner: usize = shape[2..].iter().product();
    (shape[0], shape[1], inner)
}

/// Broadcasts `b [c]` along axis 1 of `shape`.
pub(crate) fn expand_bias(b: &Tensor, shape: &[usize]) -> Tensor {
    let (n, c, inner) = axis1(shape);
    assert_eq!(b.shape(), &[c], "bias length does not match channel axis");
    let mut out = Vec::with_capacity(n * c * inner);
    for _ in 0..n {
        for &v in b.data() {
            out.extend(std::iter::repeat_n(v, inner));
        }
    }
    Tensor::new(shape.to_vec(), out)
}

pub(crate) fn sum_to_bias(g: &Tensor) -> Tensor {
    let (n, c, inner) = axis1(g.shape());
    let mut out = vec![0.0; c];
    for s in 0..n {
        for (ci, o) in out.iter_mut().enumerate() {
            let base = (s * c + ci) * inner;
            *o += g.data()[base..base + inner].iter().sum::<f64>();
        }
    }
    Tensor::new(vec![c], out)
}

pub(crate) fn sum_per_sample(x: &Tensor) -> Tensor {
    let n = x.shape()[0];
    let inner = x.numel() / n.max(1);
    Tensor::new(
        vec![n],
        x.data().chunks(inner.max(1)).map(|c| c.iter().sum()).collect(),
    )
}

pub(crate) fn expand_per_sample(v: &Tensor, shape: &[usize]) -> Tensor {
    let n = shape[0];
    assert_eq!(v.shape(), &[n], "per-sample vector does not match batch");
    let inner: usize = shape[1..].iter().product();
    let mut out = Vec::with_capacity(n * inner);
    for &x in v.data() {
        out.extend(std::iter::repeat_n(x, inner));
    }
    Tensor::new(shape.to_vec(), out)
}

/// Channel `c` of `[n, m, ...]` as `[n, 1, ...]`.
pub(crate) fn select_channel(x: &Tensor, c: usize) -> Tensor {
    let (n, m, inner) = axis1(x.shape());
    assert!(c < m, "channel {c} out of range for {m} channels");
    let mut out = Vec::with_capacity(n * inner);
    for s in 0..n {
        let base = (s * m + c) * inner;
        out.extend_from_slice(&x.data()[base..base + inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[1] = 1;
    Tensor::new(shape, out)
}

pub(crate) fn insert_channel(g: &Tensor, c: usize, m: usize) -> Tensor {
    let (n, one, inner) = axis1(g.shape());
    assert_eq!(one, 1);
    let mut shape = g.shape().to_vec();
    shape[1] = m;
    let mut out = Tensor::zeros(&shape);
    for s in 0..n {
        let dst = (s * m + c) * inner;
        out.data_mut()[dst..dst + inner].copy_from_slice(&g.data()[s * inner..(s + 1) * inner]);
    }
    out
}

/// `[n, 1, ...] -> [n, k, ...]` by copying the single channel.
pub(crate) fn repeat_channels(x: &Tensor, k: usize) -> Tensor {
    let (n, one, inner) = axis1(x.shape());
    assert_eq!(one, 1, "channel repetition expects a single channel");
    let mut out = Vec::with_capacity(n * k * inner);
    for s in 0..n {
        for _ in 0..k {
            out.extend_from_slice(&x.data()[s * inner..(s + 1) * inner]);
        }
    }
    let mut shape = x.shape().to_vec();
    shape[1] = k;
    Tensor::new(shape, out)
}

pub(crate) fn sum_channels(g: &Tensor) -> Tensor {
    let (n, k, inner) = axis1(g.shape());
    let mut out = vec![0.0; n * inner];
    for s in 0..n {
        for ci in 0..k {
            let base = (s * k + ci) * inner;
            for (o, v) in out[s * inner..(s + 1) * inner].iter_mut().zip(&g.data()[base..base + inner]) {
                *o += v;
            }
        }
    }
    let mut shape = g.shape().to_vec();
    shape[1] = 1;
    Tensor::new(shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn pairs_are_adjoint() {
        let shape = [2, 3, 2, 2];
        let x = Tensor::from_fn(&shape, |i| (i as f64).sin());
        let b = Tensor::from_fn(&[3], |i| i as f64 + 0.5);
        assert!((dot(&expand_bias(&b, &shape), &x) - dot(&b, &sum_to_bias(&x))).abs() < 1e-12);

        let v = Tensor::from_fn(&[2], |i| i as f64 - 0.3);
        assert!((dot(&expand_per_sample(&v, &shape), &x) - dot(&v, &sum_per_sample(&x))).abs() < 1e-12);

        let one = Tensor::from_fn(&[2, 1, 2, 2], |i| (i as f64).cos());
        assert!((dot(&select_channel(&x, 1), &one) - dot(&x, &insert_channel(&one, 1, 3))).abs() < 1e-12);
        assert!((dot(&repeat_channels(&one, 3), &x) - dot(&one, &sum_channels(&x))).abs() < 1e-12);
    }
}
