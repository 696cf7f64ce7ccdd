// SPDX-License-Identifier: MIT OR Apache-2.0

//! Agglomerative clustering with Ward linkage on Euclidean distance.
//!
//! Inter-cluster costs are squared-distance Lance-Williams values, so the
//! pair with the smallest value is the pair whose merge adds the least
//! within-cluster sum of squares. Ties go to the pair whose smallest
//! original indices are lexicographically first.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Merge {
    /// Cluster ids: 0..n are the input points, n + s is the cluster made at
    /// step s.
    pub a: usize,
    pub b: usize,
    /// Ward distance, sqrt of the Lance-Williams cost.
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dendrogram {
    pub n: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    /// Height of the merge that would reduce `k` clusters to `k - 1`.
    pub fn next_merge_height(&self, k: usize) -> Option<f64> {
        if k < 2 || k > self.n {
            return None;
        }
        self.merges.get(self.n - k).map(|m| m.height)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WardResult {
    /// Point indices per cluster; clusters ordered by smallest member.
    pub groups: Vec<Vec<usize>>,
    pub dendrogram: Dendrogram,
}

pub fn ward_hclust<P: AsRef<[f64]>>(points: &[P], k: usize) -> Result<WardResult> {
    let n = points.len();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if n < k {
        return Err(Error::Insufficient(format!(
            "cannot cut {n} points into {k} clusters"
        )));
    }
    let dim = points[0].as_ref().len();
    for p in points {
        let p = p.as_ref();
        if p.len() != dim {
            return Err(Error::InvalidArgument("points have differing dimensions".into()));
        }
        if p.iter().any(|x| x.is_nan()) {
            return Err(Error::InvalidArgument("NaN coordinate".into()));
        }
    }

    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = points[i]
                .as_ref()
                .iter()
                .zip(points[j].as_ref())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }

    // Slot i holds the cluster whose smallest member is point i.
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut node_id: Vec<usize> = (0..n).collect();
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    let mut groups = if k == n { Some(snapshot(&active, &members)) } else { None };

    for step in 0..n.saturating_sub(1) {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if !active[j] {
                    continue;
                }
                let d = dist[i * n + j];
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        let (dij, i, j) = best.expect("two active clusters remain");
        let (si, sj) = (size[i] as f64, size[j] as f64);
        for l in 0..n {
            if !active[l] || l == i || l == j {
                continue;
            }
            let sl = size[l] as f64;
            let d = ((si + sl) * dist[i * n + l] + (sj + sl) * dist[j * n + l] - sl * dij)
                / (si + sj + sl);
            let d = d.max(0.0);
            dist[i * n + l] = d;
            dist[l * n + i] = d;
        }
        merges.push(Merge {
            a: node_id[i].min(node_id[j]),
            b: node_id[i].max(node_id[j]),
            height: dij.sqrt(),
            size: size[i] + size[j],
        });
        active[j] = false;
        size[i] += size[j];
        node_id[i] = n + step;
        let moved = std::mem::take(&mut members[j]);
        members[i].extend(moved);
        members[i].sort_unstable();

        if n - step - 1 == k {
            groups = Some(snapshot(&active, &members));
        }
    }

    Ok(WardResult {
        groups: groups.expect("cut reached"),
        dendrogram: Dendrogram { n, merges },
    })
}

fn snapshot(active: &[bool], members: &[Vec<usize>]) -> Vec<Vec<usize>> {
    active
        .iter()
        .zip(members)
        .filter(|(a, _)| **a)
        .map(|(_, m)| m.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn simple_1d_cuts() {
        let r = ward_hclust(&pts(&[0.0, 1.0, 10.0]), 2).unwrap();
        assert_eq!(r.groups, vec![vec![0, 1], vec![2]]);
        let r = ward_hclust(&pts(&[0.0, 1.0, 9.0, 10.0]), 2).unwrap();
        assert_eq!(r.groups, vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn dendrogram_shape() {
        let r = ward_hclust(&pts(&[0.0, 1.0, 9.0, 10.0, 4.0]), 1).unwrap();
        assert_eq!(r.groups.len(), 1);
        assert_eq!(r.dendrogram.merges.len(), 4);
        for w in r.dendrogram.merges.windows(2) {
            assert!(w[0].height <= w[1].height);
        }
        assert_eq!(r.dendrogram.merges.last().unwrap().size, 5);
        // first merge joins singletons 0 and 1 (distance 1 ties with 9,10; lexicographic)
        assert_eq!((r.dendrogram.merges[0].a, r.dendrogram.merges[0].b), (0, 1));
        assert_eq!((r.dendrogram.merges[1].a, r.dendrogram.merges[1].b), (2, 3));
    }

    #[test]
    fn k_equals_n_and_errors() {
        let r = ward_hclust(&pts(&[3.0, 1.0]), 2).unwrap();
        assert_eq!(r.groups, vec![vec![0], vec![1]]);
        assert!(ward_hclust(&pts(&[1.0]), 2).is_err());
        assert!(ward_hclust(&pts(&[1.0, f64::NAN]), 1).is_err());
        assert!(ward_hclust(&pts(&[1.0, 2.0]), 0).is_err());
    }

    #[test]
    fn ward_height_for_singletons() {
        // Ward distance between two singletons is their Euclidean distance.
        let r = ward_hclust(&[vec![0.0, 0.0], vec![3.0, 4.0]], 1).unwrap();
        assert!((r.dendrogram.merges[0].height - 5.0).abs() < 1e-12);
    }
}
