// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::error::{Error, Result};

use super::special::{chi2_sf, f_sf};
use super::{check_finite, mean, sample_variance, Method, TestResult};

fn check_groups<G: AsRef<[f64]>>(groups: &[G]) -> Result<()> {
    if groups.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 groups, got {}",
            groups.len()
        )));
    }
    for (i, g) in groups.iter().enumerate() {
        let g = g.as_ref();
        if g.len() < 2 {
            return Err(Error::Insufficient(format!(
                "group {} has {} values, need 2",
                i + 1,
                g.len()
            )));
        }
        check_finite(g, "group")?;
    }
    Ok(())
}

/// Levene's test with mean-centred absolute deviations; F on (k-1, N-k).
pub fn levene<G: AsRef<[f64]>>(groups: &[G]) -> Result<TestResult> {
    check_groups(groups)?;
    let devs: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            let g = g.as_ref();
            let m = mean(g);
            g.iter().map(|x| (x - m).abs()).collect()
        })
        .collect();
    let k = groups.len() as f64;
    let n: f64 = devs.iter().map(|d| d.len() as f64).sum();
    let grand = devs.iter().flatten().sum::<f64>() / n;
    let mut between = 0.0;
    let mut within = 0.0;
    for d in &devs {
        let m = mean(d);
        between += d.len() as f64 * (m - grand) * (m - grand);
        within += d.iter().map(|z| (z - m) * (z - m)).sum::<f64>();
    }
    if within <= 0.0 {
        return Err(Error::Degenerate(
            "absolute deviations are constant within every group".into(),
        ));
    }
    let w = (n - k) / (k - 1.0) * between / within;
    let mut r = TestResult::new(Method::Levene, w, k - 1.0, f_sf(w, k - 1.0, n - k));
    r.df2 = Some(n - k);
    Ok(r)
}

/// Bartlett's test; chi-square on k - 1 degrees of freedom.
pub fn bartlett<G: AsRef<[f64]>>(groups: &[G]) -> Result<TestResult> {
    check_groups(groups)?;
    let k = groups.len() as f64;
    let sizes: Vec<f64> = groups.iter().map(|g| g.as_ref().len() as f64).collect();
    let vars: Vec<f64> = groups.iter().map(|g| sample_variance(g.as_ref())).collect();
    if vars.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Degenerate("a group has zero variance".into()));
    }
    let n: f64 = sizes.iter().sum();
    let pooled = sizes.iter().zip(&vars).map(|(ni, v)| (ni - 1.0) * v).sum::<f64>() / (n - k);
    let numer = (n - k) * pooled.ln()
        - sizes.iter().zip(&vars).map(|(ni, v)| (ni - 1.0) * v.ln()).sum::<f64>();
    let denom = 1.0
        + (sizes.iter().map(|ni| 1.0 / (ni - 1.0)).sum::<f64>() - 1.0 / (n - k)) / (3.0 * (k - 1.0));
    let t = (numer / denom).max(0.0);
    Ok(TestResult::new(Method::Bartlett, t, k - 1.0, chi2_sf(t, k - 1.0)))
}

pub fn variance_homogeneity<G: AsRef<[f64]>>(groups: &[G]) -> Result<(TestResult, TestResult)> {
    Ok((levene(groups)?, bartlett(groups)?))
}
