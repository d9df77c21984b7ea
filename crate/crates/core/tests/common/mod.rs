//! Helpers shared by the integration tests.
#![allow(dead_code)]

use arbsr::Tensor;

/// Central finite-difference derivative of `f` at `x` along coordinate `i`.
pub fn fd(f: &dyn Fn(&Tensor) -> f64, x: &Tensor, i: usize, h: f64) -> f64 {
    let mut p = x.clone();
    p.data_mut()[i] += h;
    let mut m = x.clone();
    m.data_mut()[i] -= h;
    (f(&p) - f(&m)) / (2.0 * h)
}

/// Relative error `‖a − n‖ / max(‖a‖, ‖n‖)` between analytic and numeric
/// derivatives sampled at `idx`.
pub fn grad_rel_error(f: &dyn Fn(&Tensor) -> f64, x: &Tensor, analytic: &Tensor, idx: &[usize], h: f64) -> f64 {
    let (mut num2, mut den_a, mut den_n) = (0.0, 0.0, 0.0);
    for &i in idx {
        let n = fd(f, x, i, h);
        let a = analytic.data()[i];
        num2 += (a - n) * (a - n);
        den_a += a * a;
        den_n += n * n;
    }
    let den = den_a.sqrt().max(den_n.sqrt());
    if den == 0.0 {
        return num2.sqrt();
    }
    num2.sqrt() / den
}

/// `k` evenly spread coordinates of a tensor with `n` elements.
pub fn spread(n: usize, k: usize) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    (0..k).map(|j| j * n / k + (j * 7919) % (n / k).max(1)).collect()
}

pub fn smooth_image(shape: &[usize], phase: f64) -> Tensor {
    Tensor::from_fn(shape, |i| 0.5 + 0.4 * ((i as f64) * 0.37 + phase).sin())
}
