// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::kruskal::pooled_ranks;
use super::special::normal_sf;

/// One pairwise post-hoc comparison. Group indices are 0-based positions in
/// the input; `pair.0 < pair.1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostHocResult {
    pub pair: (usize, usize),
    pub z: f64,
    pub p_value: f64,
    pub adjusted_alpha: f64,
    pub significant: bool,
}

/// Dunn's rank-difference test for every pair of groups.
///
/// z = (Rbar_j - Rbar_i) / sqrt((N(N+1)/12 - T) (1/n_i + 1/n_j)) with the
/// tie term T = sum(t^3 - t) / (12 (N - 1)); positive z means group j ranks
/// higher. p is two-sided; a pair is significant when p < alpha / (k(k-1)).
pub fn dunn_posthoc<G: AsRef<[f64]>>(groups: &[G], alpha: f64) -> Result<Vec<PostHocResult>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside (0, 1)")));
    }
    let (ranks, tie_sum, n) = pooled_ranks(groups)?;
    let n = n as f64;
    let scale = n * (n + 1.0) / 12.0 - tie_sum / (12.0 * (n - 1.0));
    if scale <= 0.0 {
        return Err(Error::DegenerateTies);
    }
    let mean_ranks: Vec<f64> = ranks
        .iter()
        .map(|r| r.iter().sum::<f64>() / r.len() as f64)
        .collect();
    let k = groups.len();
    let adjusted_alpha = alpha / (k * (k - 1)) as f64;
    let mut out = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            let se = (scale * (1.0 / ranks[i].len() as f64 + 1.0 / ranks[j].len() as f64)).sqrt();
            let z = (mean_ranks[j] - mean_ranks[i]) / se;
            let p_value = (2.0 * normal_sf(z.abs())).min(1.0);
            out.push(PostHocResult {
                pair: (i, j),
                z,
                p_value,
                adjusted_alpha,
                significant: p_value < adjusted_alpha,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_groups_first_vs_last() {
        let res = dunn_posthoc(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]], 0.05).unwrap();
        assert_eq!(res.len(), 3);
        let r = res.iter().find(|r| r.pair == (0, 2)).unwrap();
        assert!((r.z - 6.0 / 5f64.sqrt()).abs() < 1e-12);
        // 2 * (1 - Phi(6 / sqrt 5))
        assert!((r.p_value - 0.007290358091535638).abs() < 1e-9, "{}", r.p_value);
        assert!((r.adjusted_alpha - 0.05 / 6.0).abs() < 1e-15);
        assert!(r.significant);
    }

    #[test]
    fn identical_groups_not_significant() {
        let res = dunn_posthoc(&[vec![1.0, 4.0, 2.0, 3.0], vec![3.0, 2.0, 4.0, 1.0]], 0.05).unwrap();
        assert_eq!(res[0].z, 0.0);
        assert_eq!(res[0].p_value, 1.0);
        assert!(!res[0].significant);
    }

    #[test]
    fn five_groups_ten_pairs() {
        let groups: Vec<Vec<f64>> = (0..5)
            .map(|g| (0..6).map(|i| (g * 6 + i) as f64 * 0.37 % 5.0).collect())
            .collect();
        let res = dunn_posthoc(&groups, 0.05).unwrap();
        assert_eq!(res.len(), 10);
        assert!(res.iter().all(|r| (r.adjusted_alpha - 0.0025).abs() < 1e-15));
        assert!(res.iter().all(|r| r.significant == (r.p_value < r.adjusted_alpha)));
    }

    #[test]
    fn antisymmetric_under_swap() {
        let a = vec![1.0, 5.0, 2.5, 7.0];
        let b = vec![3.0, 9.0, 8.0];
        let ab = dunn_posthoc(&[a.clone(), b.clone()], 0.05).unwrap();
        let ba = dunn_posthoc(&[b, a], 0.05).unwrap();
        assert!((ab[0].z + ba[0].z).abs() < 1e-12);
        assert!((ab[0].p_value - ba[0].p_value).abs() < 1e-15);
    }
}
