use super::Tensor;

/// `c = op(a) · op(b)` (or `c += ...` when `accumulate`), with `op(a)` of
/// logical shape `[m, k]` and `op(b)` of shape `[k, n]`. A transposed operand
/// is stored in the transposed layout (`[k, m]` resp. `[n, k]`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index the kernel touches for the
    // given strides; `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Matrix product of rank-2 tensors with optional transposition of either side.
pub(crate) fn matmul(a: &Tensor, b: &Tensor, a_trans: bool, b_trans: bool) -> Tensor {
    assert_eq!(a.shape().len(), 2, "matmul lhs must be rank 2");
    assert_eq!(b.shape().len(), 2, "matmul rhs must be rank 2");
    let (m, ka) = if a_trans {
        (a.shape()[1], a.shape()[0])
    } else {
        (a.shape()[0], a.shape()[1])
    };
    let (kb, n) = if b_trans {
        (b.shape()[1], b.shape()[0])
    } else {
        (b.shape()[0], b.shape()[1])
    };
    assert_eq!(ka, kb, "matmul inner dimension mismatch");
    let mut out = vec![0.0; m * n];
    gemm(m, ka, n, a.data(), a_trans, b.data(), b_trans, &mut out, false);
    Tensor::new(vec![m, n], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor, b: &Tensor, at: bool, bt: bool) -> Tensor {
        let get = |t: &Tensor, tr: bool, i: usize, j: usize| {
            let cols = t.shape()[1];
            if tr {
                t.data()[j * cols + i]
            } else {
                t.data()[i * cols + j]
            }
        };
        let m = if at { a.shape()[1] } else { a.shape()[0] };
        let k = if at { a.shape()[0] } else { a.shape()[1] };
        let n = if bt { b.shape()[0] } else { b.shape()[1] };
        Tensor::from_fn(&[m, n], |idx| {
            let (i, j) = (idx / n, idx % n);
            (0..k).map(|l| get(a, at, i, l) * get(b, bt, l, j)).sum()
        })
    }

    #[test]
    fn matmul_transpose_variants_match_naive() {
        let a = Tensor::from_fn(&[3, 4], |i| (i as f64 * 0.37).sin());
        let b = Tensor::from_fn(&[4, 5], |i| (i as f64 * 0.11).cos());
        let bt = Tensor::from_fn(&[5, 4], |i| (i as f64 * 0.23).cos());
        let at = Tensor::from_fn(&[4, 3], |i| (i as f64 * 0.71).sin());
        for (x, xt, y, yt) in [
            (&a, false, &b, false),
            (&a, false, &bt, true),
            (&at, true, &b, false),
            (&at, true, &bt, true),
        ] {
            let got = matmul(x, y, xt, yt);
            let want = naive(x, y, xt, yt);
            assert!(got.max_abs_diff(&want) < 1e-12);
        }
    }
}
