// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::error::{Error, Result};

use super::special::chi2_sf;
use super::{rank_with_ties, Method, TestResult};

/// Pools the groups, ranks them, and returns (ranks per group, tie sum, N).
pub(crate) fn pooled_ranks<G: AsRef<[f64]>>(groups: &[G]) -> Result<(Vec<Vec<f64>>, f64, usize)> {
    if groups.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 groups, got {}",
            groups.len()
        )));
    }
    if let Some(i) = groups.iter().position(|g| g.as_ref().is_empty()) {
        return Err(Error::Insufficient(format!("group {} is empty", i + 1)));
    }
    let pooled: Vec<f64> = groups.iter().flat_map(|g| g.as_ref().iter().copied()).collect();
    let ranking = rank_with_ties(&pooled)?;
    let mut out = Vec::with_capacity(groups.len());
    let mut offset = 0;
    for g in groups {
        let n = g.as_ref().len();
        out.push(ranking.ranks[offset..offset + n].to_vec());
        offset += n;
    }
    Ok((out, ranking.tie_sum(), pooled.len()))
}

/// Largest number of distinct group assignments for which the exact
/// permutation distribution is enumerated.
pub const EXACT_MAX_ASSIGNMENTS: f64 = 2.0e6;

fn rank_term(ranks: &[Vec<f64>]) -> f64 {
    ranks
        .iter()
        .map(|r| {
            let s: f64 = r.iter().sum();
            s * s / r.len() as f64
        })
        .sum()
}

fn h_statistic(ranks: &[Vec<f64>], n: f64, correction: f64) -> f64 {
    let h = 12.0 / (n * (n + 1.0)) * rank_term(ranks) - 3.0 * (n + 1.0);
    (h / correction).max(0.0)
}

/// Multinomial coefficient N! / prod(n_i!) in floating point.
fn assignment_count(sizes: &[usize]) -> f64 {
    let mut remaining: usize = sizes.iter().sum();
    let mut count = 1.0f64;
    for &s in sizes {
        for i in 0..s {
            count *= (remaining - i) as f64 / (i + 1) as f64;
        }
        remaining -= s;
    }
    count
}

/// Exact permutation p-value: the share of all assignments of the pooled
/// ranks to groups of the observed sizes whose rank term is at least the
/// observed one.
fn exact_p(pooled: &[f64], sizes: &[usize], observed: f64) -> f64 {
    struct Walk<'a> {
        pooled: &'a [f64],
        sizes: &'a [usize],
        left: Vec<usize>,
        sums: Vec<f64>,
        threshold: f64,
        hits: f64,
        total: f64,
    }
    impl Walk<'_> {
        fn go(&mut self, pos: usize) {
            if pos == self.pooled.len() {
                let term: f64 = self
                    .sums
                    .iter()
                    .zip(self.sizes)
                    .map(|(s, &n)| s * s / n as f64)
                    .sum();
                self.total += 1.0;
                if term >= self.threshold {
                    self.hits += 1.0;
                }
                return;
            }
            for g in 0..self.sizes.len() {
                if self.left[g] == 0 {
                    continue;
                }
                self.left[g] -= 1;
                self.sums[g] += self.pooled[pos];
                self.go(pos + 1);
                self.sums[g] -= self.pooled[pos];
                self.left[g] += 1;
            }
        }
    }
    let mut walk = Walk {
        pooled,
        sizes,
        left: sizes.to_vec(),
        sums: vec![0.0; sizes.len()],
        threshold: observed - 1e-9 * observed.abs().max(1.0),
        hits: 0.0,
        total: 0.0,
    };
    walk.go(0);
    walk.hits / walk.total
}

/// Kruskal-Wallis H with the tie correction H / (1 - sum(t^3 - t)/(N^3 - N)),
/// referred to a chi-square with k - 1 degrees of freedom.
pub fn kruskal_wallis_asymptotic<G: AsRef<[f64]>>(groups: &[G]) -> Result<TestResult> {
    let (ranks, tie_sum, n) = pooled_ranks(groups)?;
    let n = n as f64;
    let correction = 1.0 - tie_sum / (n * n * n - n);
    if correction <= 0.0 {
        return Err(Error::DegenerateTies);
    }
    let h = h_statistic(&ranks, n, correction);
    let df = (groups.len() - 1) as f64;
    Ok(TestResult::new(Method::KruskalWallis, h, df, chi2_sf(h, df)))
}

/// Kruskal-Wallis test. H is always the tie-corrected statistic; the
/// p-value is the exact permutation probability when there are at most
/// [`EXACT_MAX_ASSIGNMENTS`] ways to assign the pooled ranks to the groups,
/// and the chi-square approximation otherwise.
pub fn kruskal_wallis<G: AsRef<[f64]>>(groups: &[G]) -> Result<TestResult> {
    let mut result = kruskal_wallis_asymptotic(groups)?;
    let sizes: Vec<usize> = groups.iter().map(|g| g.as_ref().len()).collect();
    if assignment_count(&sizes) <= EXACT_MAX_ASSIGNMENTS {
        let (ranks, _, _) = pooled_ranks(groups)?;
        let pooled: Vec<f64> = ranks.iter().flatten().copied().collect();
        result.p_value = exact_p(&pooled, &sizes, rank_term(&ranks)).clamp(0.0, 1.0);
        result.method = Method::KruskalWallisExact;
    }
    Ok(result)
}
