use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Five-number summary with Tukey whiskers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

/// Quantile of sorted data by linear interpolation between order
/// statistics at position `q·(n−1)`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Quartiles by linear interpolation; whiskers reach the most extreme data
/// points within 1.5·IQR of the box, and anything beyond is an outlier.
pub fn boxplot_stats(values: &[f64]) -> Result<BoxplotStats> {
    if values.is_empty() {
        return Err(Error::Degenerate("boxplot of an empty sample".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("boxplot of non-finite values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let mut inside = sorted.iter().copied().filter(|v| (lo_fence..=hi_fence).contains(v));
    let whisker_low = inside.clone().next().unwrap_or(q1);
    let whisker_high = inside.next_back().unwrap_or(q3);
    Ok(BoxplotStats {
        min: sorted[0],
        q1,
        median: quantile_sorted(&sorted, 0.5),
        q3,
        max: sorted[sorted.len() - 1],
        whisker_low,
        whisker_high,
        outliers: sorted.iter().copied().filter(|v| !(lo_fence..=hi_fence).contains(v)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn singleton() {
        let b = boxplot_stats(&[4.5]).unwrap();
        for v in [b.min, b.q1, b.median, b.q3, b.max, b.whisker_low, b.whisker_high] {
            assert_eq!(v, 4.5);
        }
        assert!(b.outliers.is_empty());
    }

    #[test]
    fn interpolated_quartiles() {
        let b = boxplot_stats(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((b.q1, b.median, b.q3), (1.75, 2.5, 3.25));
        assert_eq!((b.whisker_low, b.whisker_high), (1.0, 4.0));
    }

    #[test]
    fn tukey_outlier() {
        let b = boxplot_stats(&[1.0, 1.0, 1.0, 100.0]).unwrap();
        assert_eq!(b.outliers, vec![100.0]);
        assert_eq!(b.whisker_high, 1.0);
        assert_eq!(b.max, 100.0);
    }

    #[test]
    fn empty_is_rejected() {
        assert!(boxplot_stats(&[]).is_err());
    }

    proptest! {
        #[test]
        fn ordering(values in prop::collection::vec(-1e3f64..1e3, 1..60)) {
            let b = boxplot_stats(&values).unwrap();
            prop_assert!(b.min <= b.whisker_low && b.whisker_low <= b.q1.max(b.whisker_low));
            prop_assert!(b.q1 <= b.median && b.median <= b.q3);
            prop_assert!(b.whisker_high <= b.max);
            let inside = values.iter().filter(|v| **v >= b.whisker_low && **v <= b.whisker_high).count();
            prop_assert_eq!(inside + b.outliers.len(), values.len());
        }
    }
}
