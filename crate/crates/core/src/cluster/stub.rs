// SPDX-License-Identifier: MIT OR Apache-2.0

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::EmbeddingTable;
use crate::error::Result;

use super::{ClusterBackend, ClusterRequest, ClusterResponse};

const RESTARTS: u64 = 8;
const MAX_ITER: usize = 50;

/// Offline backend: seeded k-medoids on Euclidean embedding distance with
/// k-medoids++ seeding and a few restarts. Tokens without an embedding are
/// returned unassigned. When fewer than k distinct embeddings exist, the
/// response has fewer groups.
#[derive(Debug, Clone)]
pub struct StubBackend {
    emb: Arc<EmbeddingTable>,
    seed: u64,
}

impl StubBackend {
    pub fn new(emb: Arc<EmbeddingTable>, seed: u64) -> Self {
        Self { emb, seed }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

struct Solution {
    labels: Vec<usize>,
    cost: f64,
}

fn kmedoids(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Solution {
    let n = points.len();
    let d = |i: usize, j: usize| dist(points[i], points[j]);

    let mut medoids = vec![rng.random_range(0..n)];
    while medoids.len() < k {
        let weights: Vec<f64> = (0..n)
            .map(|i| {
                let m = medoids.iter().map(|&c| d(i, c)).fold(f64::INFINITY, f64::min);
                m * m
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = weights.iter().rposition(|&w| w > 0.0).expect("k <= distinct points");
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 && target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        medoids.push(pick);
    }

    let assign = |medoids: &[usize]| -> (Vec<usize>, f64) {
        let mut cost = 0.0;
        let labels = (0..n)
            .map(|i| {
                let (best, bd) = medoids
                    .iter()
                    .enumerate()
                    .map(|(c, &m)| (c, d(i, m)))
                    .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
                cost += bd;
                best
            })
            .collect();
        (labels, cost)
    };

    let (mut labels, mut cost) = assign(&medoids);
    for _ in 0..MAX_ITER {
        let mut next = medoids.clone();
        for (c, slot) in next.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            if let Some(best) = members
                .iter()
                .map(|&i| (i, members.iter().map(|&j| d(i, j)).sum::<f64>()))
                .fold(None, |acc: Option<(usize, f64)>, x| match acc {
                    Some(a) if a.1 <= x.1 => Some(a),
                    _ => Some(x),
                })
            {
                *slot = best.0;
            }
        }
        if next == medoids {
            break;
        }
        let (l, c) = assign(&next);
        if c >= cost {
            break;
        }
        medoids = next;
        labels = l;
        cost = c;
    }
    Solution { labels, cost }
}

impl ClusterBackend for StubBackend {
    fn id(&self) -> String {
        format!("stub-kmedoids(seed={})", self.seed)
    }

    fn cluster(&self, req: &ClusterRequest) -> Result<ClusterResponse> {
        let mut tokens = Vec::new();
        let mut points: Vec<&[f64]> = Vec::new();
        let mut unassigned = Vec::new();
        for t in &req.tokens {
            match self.emb.get(t) {
                Some(v) => {
                    tokens.push(t.clone());
                    points.push(v);
                }
                None => unassigned.push(t.clone()),
            }
        }
        let mut distinct: Vec<&[f64]> = Vec::new();
        for p in &points {
            if !distinct.contains(p) {
                distinct.push(p);
            }
        }
        let k = req.k.min(distinct.len());

        let labels = if k == 0 {
            Vec::new()
        } else {
            let mut best: Option<Solution> = None;
            for r in 0..RESTARTS {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(r);
                let s = kmedoids(&points, k, &mut rng);
                if best.as_ref().is_none_or(|b| s.cost < b.cost) {
                    best = Some(s);
                }
            }
            best.expect("at least one restart").labels
        };

        // group ids ordered by first appearance in request order
        let mut remap = vec![usize::MAX; k];
        let mut next_id = 1;
        let assignments = tokens
            .into_iter()
            .zip(labels)
            .map(|(t, l)| {
                if remap[l] == usize::MAX {
                    remap[l] = next_id;
                    next_id += 1;
                }
                (t, remap[l])
            })
            .collect::<Vec<_>>();
        let resp = ClusterResponse {
            backend: format!("{} groups={}/{}", self.id(), next_id - 1, req.k),
            assignments,
            unassigned,
        };
        resp.validate(req)?;
        Ok(resp)
    }
}
