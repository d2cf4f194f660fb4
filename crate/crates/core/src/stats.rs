//! Small descriptive-statistics helpers shared by the EVT and detector code.

use crate::error::{Error, Result};

/// Empirical quantile by linear interpolation between order statistics
/// (Hyndman-Fan type 7): position `1 + (m - 1) * level` on the sorted sample.
pub fn quantile(values: &[f64], level: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("quantile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::InvalidProbability(level));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, level))
}

/// Type-7 quantile of an already sorted, non-empty slice.
pub fn quantile_sorted(sorted: &[f64], level: f64) -> f64 {
    let m = sorted.len();
    let h = (m - 1) as f64 * level;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(m - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_three() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5).unwrap(), 2.0);
    }

    #[test]
    fn interpolated_upper_quantile() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        let q = quantile(&xs, 0.98).unwrap();
        assert!((q - 98.02).abs() < 1e-12);
    }

    #[test]
    fn endpoints() {
        let xs = [5.0, -1.0, 2.0];
        assert_eq!(quantile(&xs, 0.0).unwrap(), -1.0);
        assert_eq!(quantile(&xs, 1.0).unwrap(), 5.0);
    }

    #[test]
    fn empty_sample_is_an_error() {
        assert!(matches!(quantile(&[], 0.5), Err(Error::Empty(_))));
    }
}
