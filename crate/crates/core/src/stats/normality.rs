// SPDX-License-Identifier: MIT OR Apache-2.0

//! Preliminary normality checks: Jarque-Bera, Kolmogorov-Smirnov against a
//! fitted normal with a Monte Carlo (Lilliefors) p-value, moment
//! coefficients, and QQ-plot points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};

use super::special::{chi2_sf, normal_cdf, normal_quantile};
use super::{check_finite, mean, Method, TestResult};

pub const JB_MIN_N: usize = 8;
pub const KS_MIN_N: usize = 4;

/// Population-moment skewness and (non-excess) kurtosis.
fn moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = mean(values);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in values {
        let d = x - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    (m3 / m2.powf(1.5), m4 / (m2 * m2))
}

pub fn jarque_bera(values: &[f64]) -> Result<TestResult> {
    if values.len() < JB_MIN_N {
        return Err(Error::Insufficient(format!(
            "Jarque-Bera needs n >= {JB_MIN_N}, got {}",
            values.len()
        )));
    }
    check_finite(values, "Jarque-Bera input")?;
    let (s, k) = moments(values);
    if !s.is_finite() || !k.is_finite() {
        return Err(Error::ZeroVariance);
    }
    let n = values.len() as f64;
    let jb = n / 6.0 * (s * s + (k - 3.0) * (k - 3.0) / 4.0);
    Ok(TestResult::new(Method::JarqueBera, jb, 2.0, chi2_sf(jb, 2.0)))
}

/// KS distance between the sample and a normal with the sample's mean and
/// (n - 1) standard deviation.
pub fn ks_normal_statistic(values: &[f64]) -> Result<f64> {
    if values.len() < KS_MIN_N {
        return Err(Error::Insufficient(format!(
            "Kolmogorov-Smirnov needs n >= {KS_MIN_N}, got {}",
            values.len()
        )));
    }
    check_finite(values, "Kolmogorov-Smirnov input")?;
    let m = mean(values);
    let sd = super::sample_variance(values).sqrt();
    if !(sd > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = normal_cdf((x - m) / sd);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(d)
}

/// Simulated null distribution of the fitted-normal KS statistic for a
/// fixed sample size. Reusable across samples of that size.
#[derive(Debug, Clone)]
pub struct LillieforsNull {
    n: usize,
    sorted: Vec<f64>,
}

impl LillieforsNull {
    pub fn simulate(n: usize, replicates: usize, seed: u64) -> Result<Self> {
        if replicates == 0 {
            return Err(Error::InvalidArgument("replicates must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut buf = vec![0.0; n];
        let mut sorted = Vec::with_capacity(replicates);
        for _ in 0..replicates {
            for x in buf.iter_mut() {
                *x = rng.sample(StandardNormal);
            }
            sorted.push(ks_normal_statistic(&buf)?);
        }
        sorted.sort_by(f64::total_cmp);
        Ok(Self { n, sorted })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn replicates(&self) -> usize {
        self.sorted.len()
    }

    /// (1 + #{null >= d}) / (R + 1).
    pub fn p_value(&self, d: f64) -> f64 {
        let below = self.sorted.partition_point(|&x| x < d);
        let at_or_above = self.sorted.len() - below;
        (1 + at_or_above) as f64 / (self.sorted.len() + 1) as f64
    }

    pub fn test(&self, values: &[f64]) -> Result<TestResult> {
        if values.len() != self.n {
            return Err(Error::InvalidArgument(format!(
                "null simulated for n = {}, sample has n = {}",
                self.n,
                values.len()
            )));
        }
        let d = ks_normal_statistic(values)?;
        Ok(TestResult::new(Method::Lilliefors, d, 0.0, self.p_value(d)))
    }
}

pub fn lilliefors(values: &[f64], replicates: usize, seed: u64) -> Result<TestResult> {
    ks_normal_statistic(values)?;
    LillieforsNull::simulate(values.len(), replicates, seed)?.test(values)
}

/// (theoretical normal quantile, sample quantile) pairs using plotting
/// positions (i - 0.5) / n.
pub fn qq_series(values: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, x)| (normal_quantile((i as f64 + 0.5) / n), x))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct NormalityReport {
    pub n: usize,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub jarque_bera: Option<TestResult>,
    pub lilliefors: Option<TestResult>,
    pub qq: Vec<(f64, f64)>,
    /// Tests that could not run, with the reason.
    pub skipped: Vec<String>,
}

impl NormalityReport {
    pub fn tests(&self) -> Vec<TestResult> {
        self.jarque_bera.iter().chain(&self.lilliefors).cloned().collect()
    }
}

pub fn normality_battery(values: &[f64], replicates: usize, seed: u64) -> Result<NormalityReport> {
    if values.len() < KS_MIN_N {
        return Err(Error::Insufficient(format!(
            "normality battery needs n >= {KS_MIN_N}, got {}",
            values.len()
        )));
    }
    check_finite(values, "normality input")?;
    let (s, k) = moments(values);
    let mut skipped = Vec::new();
    let jarque_bera = match jarque_bera(values) {
        Ok(r) => Some(r),
        Err(e) => {
            skipped.push(format!("jarque_bera: {e}"));
            None
        }
    };
    let lilliefors = match lilliefors(values, replicates, seed) {
        Ok(r) => Some(r),
        Err(e) => {
            skipped.push(format!("lilliefors: {e}"));
            None
        }
    };
    Ok(NormalityReport {
        n: values.len(),
        skewness: s,
        excess_kurtosis: k - 3.0,
        jarque_bera,
        lilliefors,
        qq: qq_series(values),
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_mesokurtic_sample_has_zero_jb() {
        // {+-1 x3, +-c}: kurtosis 3 when c^4 - 18c^2 - 15 = 0
        let c = ((18.0 + 384f64.sqrt()) / 2.0).sqrt();
        let v = [1.0, 1.0, 1.0, -1.0, -1.0, -1.0, c, -c];
        let r = jarque_bera(&v).unwrap();
        assert!(r.statistic.abs() < 1e-12, "{}", r.statistic);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_samples_are_rejected_per_test() {
        let v = [1.0, 2.0, 4.0, 3.5, 0.5];
        assert!(jarque_bera(&v).is_err());
        let rep = normality_battery(&v, 10_000, 1).unwrap();
        assert!(rep.jarque_bera.is_none());
        assert!(rep.lilliefors.is_some());
        assert_eq!(rep.skipped.len(), 1);
        assert!(normality_battery(&v[..3], 10_000, 1).is_err());
    }

    #[test]
    fn qq_is_monotone() {
        let v = [3.0, -1.0, 2.0, 8.0, 0.0, 0.5, 2.0];
        let qq = qq_series(&v);
        for w in qq.windows(2) {
            assert!(w[0].0 <= w[1].0 && w[0].1 <= w[1].1);
        }
    }

    #[test]
    fn lilliefors_is_seeded() {
        let v: Vec<f64> = (0..30).map(|i| ((i * 7) % 13) as f64).collect();
        let a = lilliefors(&v, 10_000, 9).unwrap();
        let b = lilliefors(&v, 10_000, 9).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a.p_value));
    }

    #[test]
    fn lilliefors_detects_gross_non_normality() {
        // strongly bimodal
        let v: Vec<f64> = (0..60).map(|i| if i % 2 == 0 { 0.0 } else { 10.0 } + i as f64 * 1e-3).collect();
        assert!(lilliefors(&v, 10_000, 3).unwrap().p_value < 0.01);
    }
}
