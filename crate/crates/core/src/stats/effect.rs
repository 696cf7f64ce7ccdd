// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::error::{Error, Result};

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance (n - 1 denominator).
pub fn sample_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (values.len() as f64 - 1.0)
}

/// Cohen's d on raw values with a pooled sample standard deviation.
/// Positive when `b` has the larger mean.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Insufficient(format!(
            "cohens_d needs two values per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = ((na - 1.0) * sample_variance(a) + (nb - 1.0) * sample_variance(b)) / (na + nb - 2.0);
    if !(pooled > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok((mean(b) - mean(a)) / pooled.sqrt())
}

/// n / m, the interleaving risk ratio.
pub fn risk_ratio(n: u64, m: u64) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidArgument("risk ratio with m = 0".into()));
    }
    Ok(n as f64 / m as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert!((cohens_d(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap() - 3.0).abs() < 1e-12);
        let a = [1.0, 4.0, 2.0];
        assert_eq!(cohens_d(&a, &a).unwrap(), 0.0);
        assert!(matches!(cohens_d(&[0.0, 0.0], &[1.0, 1.0]), Err(Error::ZeroVariance)));
        assert!(cohens_d(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn risk_ratio_examples() {
        assert_eq!(risk_ratio(40, 20).unwrap(), 2.0);
        assert_eq!(risk_ratio(7, 7).unwrap(), 1.0);
        assert!(risk_ratio(3, 0).is_err());
    }

    proptest! {
        #[test]
        fn antisymmetric_and_scale_equivariant(
            a in prop::collection::vec(-100.0f64..100.0, 2..12),
            b in prop::collection::vec(-100.0f64..100.0, 2..12),
            c in 0.01f64..50.0,
        ) {
            if let Ok(d) = cohens_d(&a, &b) {
                prop_assert!((d + cohens_d(&b, &a).unwrap()).abs() < 1e-9);
                let ca: Vec<f64> = a.iter().map(|x| x * c).collect();
                let cb: Vec<f64> = b.iter().map(|x| x * c).collect();
                prop_assert!((d - cohens_d(&ca, &cb).unwrap()).abs() < 1e-9 * (1.0 + d.abs()));
            }
        }
    }
}
