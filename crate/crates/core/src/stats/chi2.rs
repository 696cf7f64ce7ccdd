// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::error::{Error, Result};

use super::special::chi2_sf;
use super::{Method, TestResult};

/// Pearson goodness-of-fit: sum((obs - exp)^2 / exp), df = cells - 1.
///
/// Expected counts are taken as given; they need not sum to the observed
/// total.
pub fn chi2_gof(observed: &[u64], expected: &[f64]) -> Result<TestResult> {
    if observed.len() != expected.len() {
        return Err(Error::InvalidArgument(format!(
            "observed has {} cells, expected has {}",
            observed.len(),
            expected.len()
        )));
    }
    if observed.len() < 2 {
        return Err(Error::InvalidArgument("chi-square needs at least 2 cells".into()));
    }
    if let Some(e) = expected.iter().find(|&&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "expected counts must be positive, got {e}"
        )));
    }
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| {
            let d = o as f64 - e;
            d * d / e
        })
        .sum();
    let df = (observed.len() - 1) as f64;
    Ok(TestResult::new(Method::ChiSquareGof, stat, df, chi2_sf(stat, df)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed() {
        let r = chi2_gof(&[40, 60], &[20.0, 80.0]).unwrap();
        assert!((r.statistic - 25.0).abs() < 1e-12);
        assert_eq!(r.df, 1.0);
        assert!((r.p_value - 5.733031437583875e-07).abs() < 1e-15);
    }

    #[test]
    fn equal_counts_give_p_one() {
        let r = chi2_gof(&[10, 20, 30], &[10.0, 20.0, 30.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn three_cells_reference() {
        // 40-digit reference: stat 2.000201020102..., Q(1, stat/2)
        let r = chi2_gof(&[30, 30, 40], &[33.33, 33.33, 33.33]).unwrap();
        assert!((r.statistic - 2.000201020102010).abs() < 1e-12);
        assert!((r.p_value - 0.3678424674481930).abs() < 1e-6);
    }

    #[test]
    fn errors() {
        assert!(chi2_gof(&[1, 2], &[1.0]).is_err());
        assert!(chi2_gof(&[1, 2], &[0.0, 3.0]).is_err());
        assert!(chi2_gof(&[1], &[1.0]).is_err());
    }
}
