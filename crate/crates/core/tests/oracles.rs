//! Resampling, degradation and metric implementations against direct
//! scalar-loop evaluations of their definitions.

mod common;

use proptest::prelude::*;

use arbsr::data::{bicubic_resize, degrade, degrade_to, gaussian_blur_3x3, resize_to};
use arbsr::metrics::{frechet_distance, psnr, ssim, EmbeddingStats, SSIM_K1, SSIM_K2};
use arbsr::Tensor;

fn keys(x: f64) -> f64 {
    let a = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (a + 2.0) * x.powi(3) - (a + 3.0) * x.powi(2) + 1.0
    } else if x < 2.0 {
        a * x.powi(3) - 5.0 * a * x.powi(2) + 8.0 * a * x - 4.0 * a
    } else {
        0.0
    }
}

/// Non-separable 2-D bicubic sampling with edge clamping.
fn naive_resample(img: &Tensor, out: (usize, usize), ratio: (f64, f64)) -> Tensor {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    Tensor::from_fn(&[c, out.0, out.1], |flat| {
        let ci = flat / (out.0 * out.1);
        let y = (flat / out.1) % out.0;
        let x = flat % out.1;
        let sy = (y as f64 + 0.5) * ratio.0 - 0.5;
        let sx = (x as f64 + 0.5) * ratio.1 - 0.5;
        let (y0, x0) = (sy.floor() as i64, sx.floor() as i64);
        let mut acc = 0.0;
        for i in y0 - 1..=y0 + 2 {
            for j in x0 - 1..=x0 + 2 {
                let yy = i.clamp(0, h as i64 - 1) as usize;
                let xx = j.clamp(0, w as i64 - 1) as usize;
                acc += keys(sy - i as f64) * keys(sx - j as f64) * img.data()[(ci * h + yy) * w + xx];
            }
        }
        acc
    })
}

fn mirror(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let p = 2 * (n as i64 - 1);
    let m = i.rem_euclid(p);
    (if m >= n as i64 { p - m } else { m }) as usize
}

fn naive_blur(img: &Tensor, sigma: f64) -> Tensor {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let g = |d: i64| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp();
    let z: f64 = (-1..=1).flat_map(|a| (-1..=1).map(move |b| g(a) * g(b))).sum();
    Tensor::from_fn(&[c, h, w], |flat| {
        let ci = flat / (h * w);
        let (y, x) = ((flat / w) % h, flat % w);
        let mut acc = 0.0;
        for dy in -1..=1 {
            for dx in -1..=1 {
                let v = img.data()[(ci * h + mirror(y as i64 + dy, h)) * w + mirror(x as i64 + dx, w)];
                acc += g(dy) * g(dx) / z * v;
            }
        }
        acc
    })
}

fn image(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
    Tensor::from_fn(&[c, h, w], |i| {
        let t = (i as f64 + 1.0) * (seed as f64 * 0.013 + 0.71);
        0.5 + 0.49 * (t.sin() * 0.7 + (0.37 * t).cos() * 0.3)
    })
}

/// SSIM by an explicit loop over every full window.
fn naive_ssim(x: &Tensor, y: &Tensor) -> f64 {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let win = 11usize;
    let g: Vec<f64> = (0..win).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp()).collect();
    let z: f64 = g.iter().sum();
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let mut total = 0.0;
    for ci in 0..c {
        let mut acc = 0.0;
        let mut count = 0;
        for y0 in 0..=h - win {
            for x0 in 0..=w - win {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..win {
                    for j in 0..win {
                        let k = g[i] * g[j] / (z * z);
                        let a = x.data()[(ci * h + y0 + i) * w + x0 + j];
                        let b = y.data()[(ci * h + y0 + i) * w + x0 + j];
                        mx += k * a;
                        my += k * b;
                        sxx += k * a * a;
                        syy += k * b * b;
                        sxy += k * a * b;
                    }
                }
                let (vx, vy, cxy) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        total += acc / count as f64;
    }
    total / c as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bicubic_resize_matches_direct_sampling(h in 1usize..14, w in 1usize..14, q in 30usize..420, seed in 0u64..1000) {
        let img = image(2, h, w, seed);
        let f = q as f64 / 100.0;
        let (ho, wo) = ((h * q) / 100, (w * q) / 100);
        prop_assume!(ho > 0 && wo > 0);
        let got = bicubic_resize(&img, f).unwrap();
        prop_assert_eq!(got.shape(), &[2, ho, wo]);
        let want = naive_resample(&img, (ho, wo), (1.0 / f, 1.0 / f));
        prop_assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn resize_to_matches_direct_sampling(h in 1usize..12, w in 1usize..12, ho in 1usize..30, wo in 1usize..30) {
        let img = image(1, h, w, 3);
        let got = resize_to(&img, (ho, wo)).unwrap();
        let want = naive_resample(&img, (ho, wo), (h as f64 / ho as f64, w as f64 / wo as f64));
        prop_assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn blur_matches_direct_3x3(h in 1usize..12, w in 1usize..12, seed in 0u64..100) {
        let img = image(2, h, w, seed);
        let got = gaussian_blur_3x3(&img, 0.5).unwrap();
        prop_assert!(got.max_abs_diff(&naive_blur(&img, 0.5)) < 1e-12);
    }

    #[test]
    fn degradation_is_blur_then_sample_then_clamp(h in 4usize..40, w in 4usize..40, q in 101usize..=400) {
        let s = q as f64 / 100.0;
        let (lh, lw) = ((h * 100) / q, (w * 100) / q);
        prop_assume!(lh > 0 && lw > 0);
        let hr = image(1, h, w, 9);
        let lr = degrade(&hr, s).unwrap();
        prop_assert_eq!(lr.shape(), &[1, lh, lw]);
        let want = naive_resample(&naive_blur(&hr, 0.5), (lh, lw), (s, s)).map(|v| v.clamp(0.0, 1.0));
        prop_assert!(lr.max_abs_diff(&want) < 1e-12);
        prop_assert!(lr.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let explicit = degrade_to(&hr, s, (lh, lw)).unwrap();
        prop_assert_eq!(explicit, lr);
    }

    #[test]
    fn psnr_matches_scalar_loop(n in 1usize..200, seed in 0u64..1000) {
        let a = Tensor::from_fn(&[n], |i| ((i as f64 + seed as f64) * 0.77).sin().abs());
        let b = Tensor::from_fn(&[n], |i| ((i as f64 * 1.3 + seed as f64) * 0.41).cos().abs());
        let mut se = 0.0;
        for i in 0..n {
            se += (a.data()[i] - b.data()[i]).powi(2);
        }
        let want = 10.0 * (1.0 / (se / n as f64)).log10();
        prop_assert!((psnr(&a, &b, 1.0).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn frechet_one_dimensional_closed_form(m1 in -3.0f64..3.0, m2 in -3.0f64..3.0, s1 in 0.1f64..3.0, s2 in 0.1f64..3.0) {
        // Two points at mean ± sd·√(1/2) have unbiased variance sd².
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let a = EmbeddingStats::from_vectors(&[vec![m1 - s1 * h], vec![m1 + s1 * h]]).unwrap();
        let b = EmbeddingStats::from_vectors(&[vec![m2 - s2 * h], vec![m2 + s2 * h]]).unwrap();
        let want = (m1 - m2).powi(2) + (s1 - s2).powi(2);
        prop_assert!((frechet_distance(&a, &b).unwrap() - want).abs() < 1e-9);
    }
}

#[test]
fn ssim_matches_window_loop() {
    for (h, w, seed) in [(11, 11, 1), (16, 13, 2), (24, 20, 3)] {
        let x = image(2, h, w, seed);
        let y = image(2, h, w, seed + 40);
        let got = ssim(&x, &y).unwrap();
        let want = naive_ssim(&x, &y);
        assert!((got - want).abs() < 1e-7, "{h}x{w}: {got} vs {want}");
    }
}

#[test]
fn ssim_needs_a_full_window() {
    let x = image(1, 10, 30, 1);
    assert!(ssim(&x, &x).is_err());
}

#[test]
fn bicubic_reproduces_a_ramp_in_the_interior() {
    let img = Tensor::from_fn(&[1, 1, 20], |i| 0.1 + 0.03 * i as f64);
    let out = bicubic_resize(&img, 2.5).unwrap();
    for (x, v) in out.data().iter().enumerate() {
        let src = (x as f64 + 0.5) / 2.5 - 0.5;
        if (1.0..=17.0).contains(&src) {
            assert!((v - (0.1 + 0.03 * src)).abs() < 1e-12, "x={x}");
        }
    }
}

#[test]
fn psnr_of_identical_images_is_infinite() {
    let a = image(1, 8, 8, 5);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    assert!(psnr(&a, &image(1, 8, 9, 5), 1.0).is_err());
}
