//! Floor arithmetic shared by every place that maps sizes across a scale
//! factor. All of it tolerates the representation error of decimal scales such
//! as `2.3` (`2.3 * 10.0 == 22.999999999999996`).

use crate::error::{Error, Result};

const FLOOR_EPS: f64 = 1e-9;

pub const MIN_SCALE_EXCLUSIVE: f64 = 1.0;
pub const MAX_SCALE: f64 = 4.0;

/// `⌊x⌋`, treating values within `1e-9` below an integer as that integer.
pub fn tolerant_floor(x: f64) -> f64 {
    (x + FLOOR_EPS).floor()
}

/// `⌊s · n⌋`.
pub fn scaled_len(n: usize, s: f64) -> usize {
    tolerant_floor(n as f64 * s).max(0.0) as usize
}

/// `⌊n / s⌋`.
pub fn shrunk_len(n: usize, s: f64) -> usize {
    tolerant_floor(n as f64 / s).max(0.0) as usize
}

/// Splits `i / s` into its integer part and fractional offset in `[0, 1)`.
pub fn source_and_offset(i: usize, s: f64) -> (usize, f64) {
    let q = i as f64 / s;
    let fl = tolerant_floor(q);
    ((fl.max(0.0)) as usize, (q - fl).max(0.0))
}

pub fn validate_scale(s: f64) -> Result<()> {
    if s.is_finite() && s > MIN_SCALE_EXCLUSIVE && s <= MAX_SCALE + FLOOR_EPS {
        Ok(())
    } else {
        Err(Error::ScaleOutOfRange(s))
    }
}

/// HR-patch and LR-patch sizes for a nominal patch size `p` at scale `s`:
/// `(⌊s·⌊p/s⌋⌋, ⌊p/s⌋)`.
pub fn patch_dims(p: usize, s: f64) -> (usize, usize) {
    let lr = shrunk_len(p, s);
    (scaled_len(lr, s), lr)
}

/// `{1.1, 1.2, …, 4.0}`.
pub fn default_scale_grid() -> Vec<f64> {
    (11..=40).map(|k| k as f64 / 10.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_rules_absorb_decimal_noise() {
        assert_eq!(scaled_len(10, 2.3), 23);
        assert_eq!(scaled_len(20, 3.3), 66);
        assert_eq!(scaled_len(24, 1.5), 36);
        assert_eq!(scaled_len(100, 0.33), 33);
        assert_eq!(shrunk_len(96, 2.5), 38);
    }

    #[test]
    fn patch_arithmetic() {
        assert_eq!(patch_dims(96, 3.0), (96, 32));
        assert_eq!(patch_dims(96, 2.5), (95, 38));
        assert_eq!(patch_dims(96, 1.05), (95, 91));
    }

    #[test]
    fn offsets() {
        let (src, off) = source_and_offset(7, 2.5);
        assert_eq!(src, 2);
        assert!((off - 0.8).abs() < 1e-12);
        assert_eq!(source_and_offset(5, 2.5), (2, 0.0));
        assert_eq!(source_and_offset(3, 2.0), (1, 0.5));
    }

    #[test]
    fn grid_and_range() {
        let g = default_scale_grid();
        assert_eq!(g.len(), 30);
        assert_eq!(g[0], 1.1);
        assert_eq!(g[29], 4.0);
        assert!(g.iter().all(|&s| validate_scale(s).is_ok()));
        assert!(validate_scale(1.0).is_err());
        assert!(validate_scale(4.5).is_err());
        assert!(validate_scale(f64::NAN).is_err());
    }
}
