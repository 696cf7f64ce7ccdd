// SPDX-License-Identifier: MIT OR Apache-2.0

//! Rank statistics, goodness-of-fit, effect sizes and the preliminary
//! normality / variance checks used by the analyses.

use serde::{Deserialize, Serialize};

mod chi2;
mod cosine;
mod dunn;
mod effect;
mod kruskal;
mod normality;
mod quantile;
mod rank;
pub mod special;
mod variance;

pub use chi2::chi2_gof;
pub use cosine::{cosine_similarity, mean_pairwise_cosine, CosineMatrix};
pub use dunn::{dunn_posthoc, PostHocResult};
pub use effect::{cohens_d, mean, risk_ratio, sample_variance};
pub use kruskal::{kruskal_wallis, kruskal_wallis_asymptotic, EXACT_MAX_ASSIGNMENTS};
pub use normality::{
    jarque_bera, ks_normal_statistic, lilliefors, normality_battery, qq_series, LillieforsNull,
    NormalityReport,
};
pub use quantile::{quantile, quantile_sorted};
pub use rank::{rank_with_ties, Ranking};
pub use variance::{bartlett, levene, variance_homogeneity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    KruskalWallis,
    /// Kruskal-Wallis with an exact permutation p-value.
    KruskalWallisExact,
    ChiSquareGof,
    JarqueBera,
    Lilliefors,
    Levene,
    Bartlett,
}

/// Outcome of a single hypothesis test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub method: Method,
    pub statistic: f64,
    pub df: f64,
    /// Denominator degrees of freedom, for F-distributed statistics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df2: Option<f64>,
    pub p_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effect_size: Option<f64>,
}

impl TestResult {
    pub(crate) fn new(method: Method, statistic: f64, df: f64, p_value: f64) -> Self {
        Self {
            method,
            statistic,
            df,
            df2: None,
            p_value: p_value.clamp(0.0, 1.0),
            effect_size: None,
        }
    }

    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

pub(crate) fn check_finite(values: &[f64], what: &str) -> crate::Result<()> {
    if let Some(x) = values.iter().find(|x| !x.is_finite()) {
        return Err(crate::Error::InvalidArgument(format!(
            "{what} contains non-finite value {x}"
        )));
    }
    Ok(())
}
