// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::error::{Error, Result};

use super::check_finite;

/// 1-based mid-ranks plus the sizes of every tie group with more than one
/// member.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub ranks: Vec<f64>,
    pub tie_sizes: Vec<usize>,
}

impl Ranking {
    /// Sum of t^3 - t over tie groups.
    pub fn tie_sum(&self) -> f64 {
        self.tie_sizes
            .iter()
            .map(|&t| {
                let t = t as f64;
                t * t * t - t
            })
            .sum()
    }
}

pub fn rank_with_ties(values: &[f64]) -> Result<Ranking> {
    if values.is_empty() {
        return Err(Error::Empty("rank_with_ties needs at least one value"));
    }
    check_finite(values, "rank input")?;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));

    let mut ranks = vec![0.0; values.len()];
    let mut tie_sizes = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end share their average
        let mid = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = mid;
        }
        if end - start > 1 {
            tie_sizes.push(end - start);
        }
        start = end;
    }
    Ok(Ranking { ranks, tie_sizes })
}
