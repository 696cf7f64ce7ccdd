// SPDX-License-Identifier: MIT OR Apache-2.0

//! Brute-force counterparts of the main kernels and a suite that diffs them
//! on seeded random instances.
//!
//! The oracles share no code with the implementations they check: ranks are
//! counted pairwise, Ward merges are scored from recomputed centroids, and
//! interleaving counts come from a linear scan.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{NeuronRecord, TokenActivation};
use crate::error::Result;
use crate::interleave::{count_in_span_scan, interleave_cells};
use crate::segment::{activation_hclust_partition, ward_hclust, Partition, PartitionKind};
use crate::stats::{chi2_gof, cohens_d, kruskal_wallis, CosineMatrix};

/// Mid-ranks by pairwise counting.
pub fn brute_ranks(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|&x| {
            let below = values.iter().filter(|&&y| y < x).count() as f64;
            let equal = values.iter().filter(|&&y| y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn h_from_ranks(ranks: &[f64], sizes: &[usize], tie_sum: f64) -> f64 {
    let n = ranks.len() as f64;
    let mut start = 0;
    let mut term = 0.0;
    for &s in sizes {
        let r: f64 = ranks[start..start + s].iter().sum();
        term += r * r / s as f64;
        start += s;
    }
    let h = 12.0 / (n * (n + 1.0)) * term - 3.0 * (n + 1.0);
    h / (1.0 - tie_sum / (n * n * n - n))
}

fn tie_sum(values: &[f64]) -> f64 {
    let mut seen: Vec<f64> = Vec::new();
    let mut sum = 0.0;
    for &x in values {
        if !seen.contains(&x) {
            seen.push(x);
            let t = values.iter().filter(|&&y| y == x).count() as f64;
            sum += t * t * t - t;
        }
    }
    sum
}

/// Tie-corrected H from the textbook rank-sum formula.
pub fn hand_kruskal_h(groups: &[Vec<f64>]) -> f64 {
    let pooled: Vec<f64> = groups.concat();
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    h_from_ranks(&brute_ranks(&pooled), &sizes, tie_sum(&pooled))
}

/// Monte Carlo permutation p-value of H: the share of random relabellings
/// whose H reaches the observed one.
pub fn permutation_p_kw(groups: &[Vec<f64>], reps: usize, rng: &mut ChaCha8Rng) -> f64 {
    let pooled: Vec<f64> = groups.concat();
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let ties = tie_sum(&pooled);
    let mut ranks = brute_ranks(&pooled);
    let observed = h_from_ranks(&ranks, &sizes, ties);
    let mut hits = 0usize;
    for _ in 0..reps {
        ranks.shuffle(rng);
        if h_from_ranks(&ranks, &sizes, ties) >= observed - 1e-9 {
            hits += 1;
        }
    }
    hits as f64 / reps as f64
}

fn ess(points: &[Vec<f64>], members: &[usize]) -> f64 {
    let dim = points[0].len();
    let mut centroid = vec![0.0; dim];
    for &i in members {
        for (c, x) in centroid.iter_mut().zip(&points[i]) {
            *c += x;
        }
    }
    for c in &mut centroid {
        *c /= members.len() as f64;
    }
    members
        .iter()
        .map(|&i| points[i].iter().zip(&centroid).map(|(x, c)| (x - c) * (x - c)).sum::<f64>())
        .sum()
}

/// Groups with members sorted, ordered by smallest member.
pub fn canonical(mut groups: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    for g in &mut groups {
        g.sort_unstable();
    }
    groups.sort();
    groups
}

/// Greedy agglomeration that at every step merges the pair of clusters
/// whose union adds the least within-cluster sum of squares, recomputed
/// from the points. Ties go to the lexicographically first pair.
pub fn ward_greedy_oracle(points: &[Vec<f64>], k: usize) -> Vec<Vec<usize>> {
    let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
    while clusters.len() > k {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let union: Vec<usize> = clusters[a].iter().chain(&clusters[b]).copied().collect();
                let cost = ess(points, &union) - ess(points, &clusters[a]) - ess(points, &clusters[b]);
                if cost < best.0 {
                    best = (cost, a, b);
                }
            }
        }
        let (_, a, b) = best;
        let merged = clusters.remove(b);
        clusters[a].extend(merged);
        clusters = canonical(clusters);
    }
    canonical(clusters)
}

/// Partition into exactly `k` non-empty groups with the least total
/// within-cluster sum of squares, by enumerating every assignment in
/// restricted-growth form.
pub fn min_variance_partition(points: &[Vec<f64>], k: usize) -> (Vec<Vec<usize>>, f64) {
    fn walk(
        points: &[Vec<f64>],
        k: usize,
        labels: &mut Vec<usize>,
        used: usize,
        best: &mut (Vec<Vec<usize>>, f64),
    ) {
        let n = points.len();
        if labels.len() == n {
            if used != k {
                return;
            }
            let groups: Vec<Vec<usize>> = (0..k).map(|g| (0..n).filter(|&i| labels[i] == g).collect()).collect();
            let total: f64 = groups.iter().map(|g| ess(points, g)).sum();
            if total < best.1 {
                *best = (canonical(groups), total);
            }
            return;
        }
        if k - used > n - labels.len() {
            return;
        }
        for g in 0..(used + 1).min(k) {
            labels.push(g);
            walk(points, k, labels, used.max(g + 1), best);
            labels.pop();
        }
    }
    let mut best = (Vec::new(), f64::INFINITY);
    walk(points, k, &mut Vec::new(), 0, &mut best);
    best
}

/// Every group covers a contiguous run of the sorted activations: no token
/// of another group lies strictly inside its span.
pub fn is_contiguous(p: &Partition) -> bool {
    (0..p.k()).all(|i| {
        let own = p.activations(i);
        let lo = own.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = own.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (0..p.k()).filter(|&j| j != i).all(|j| p.activations(j).iter().all(|&x| x < lo || x > hi))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheck {
    pub name: String,
    pub instances: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl OracleCheck {
    fn new(name: &str, instances: usize, max_deviation: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            instances,
            max_deviation,
            tolerance,
            passed: max_deviation <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub seed: u64,
    pub checks: Vec<OracleCheck>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{} {:<28} instances={:<5} max_dev={:.3e} tol={:.1e}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.instances,
                c.max_deviation,
                c.tolerance
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleConfig {
    pub seed: u64,
    pub kw_instances: usize,
    pub kw_permutations: usize,
    pub ward_instances: usize,
    pub contiguity_instances: usize,
    pub cosine_instances: usize,
    pub interleave_instances: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            kw_instances: 100,
            kw_permutations: 20_000,
            ward_instances: 200,
            contiguity_instances: 500,
            cosine_instances: 100,
            interleave_instances: 1000,
        }
    }
}

fn instance_rng(seed: u64, check: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (check << 56));
    rng.set_stream(i as u64);
    rng
}

/// Random groups with n_total <= 12 and some ties; never all equal.
pub fn random_kw_instance(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    loop {
        let k = rng.random_range(2..=4);
        let total = rng.random_range(k.max(4)..=12);
        let mut sizes = vec![1; k];
        for _ in k..total {
            sizes[rng.random_range(0..k)] += 1;
        }
        let groups: Vec<Vec<f64>> = sizes
            .iter()
            .map(|&s| (0..s).map(|_| f64::from(rng.random_range(0..8u8))).collect())
            .collect();
        let first = groups[0][0];
        if groups.iter().flatten().any(|&x| x != first) {
            return groups;
        }
    }
}

/// Random point set of n <= 8 points in 1..=3 dimensions.
pub fn random_ward_instance(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, usize) {
    let n = rng.random_range(3..=8);
    let dim = rng.random_range(1..=3);
    let k = rng.random_range(1..=3);
    let points = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
    (points, k)
}

fn random_partition(rng: &mut ChaCha8Rng) -> Partition {
    let k = rng.random_range(1..=6);
    let n = rng.random_range(k..=100);
    let mut groups = vec![Vec::new(); k];
    for i in 0..n {
        let g = if i < k { i } else { rng.random_range(0..k) };
        // coarse grid so that boundary ties occur
        let a = f64::from(rng.random_range(0..40u8)) / 4.0;
        groups[g].push(TokenActivation::new(format!("t{i}"), a));
    }
    Partition::new(PartitionKind::Categorical, groups, vec![])
}

fn max_dev(values: impl ParallelIterator<Item = Result<f64>>) -> Result<f64> {
    values.try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
}

pub fn check_kruskal_h(cfg: &OracleConfig) -> Result<OracleCheck> {
    let dev = max_dev((0..cfg.kw_instances).into_par_iter().map(|i| {
        let g = random_kw_instance(&mut instance_rng(cfg.seed, 1, i));
        Ok((kruskal_wallis(&g)?.statistic - hand_kruskal_h(&g)).abs())
    }))?;
    Ok(OracleCheck::new("kruskal_h_vs_rank_sum", cfg.kw_instances, dev, 1e-9))
}

pub fn check_kruskal_p(cfg: &OracleConfig) -> Result<OracleCheck> {
    let dev = max_dev((0..cfg.kw_instances).into_par_iter().map(|i| {
        let mut rng = instance_rng(cfg.seed, 1, i);
        let g = random_kw_instance(&mut rng);
        let p = permutation_p_kw(&g, cfg.kw_permutations, &mut rng);
        Ok((kruskal_wallis(&g)?.p_value - p).abs())
    }))?;
    Ok(OracleCheck::new("kruskal_p_vs_permutation", cfg.kw_instances, dev, 0.02))
}

/// Chi-square and Cohen's d on fixed fixtures against hand arithmetic.
pub fn check_fixtures() -> Result<OracleCheck> {
    let mut dev: f64 = 0.0;
    let chi = chi2_gof(&[40, 60], &[20.0, 80.0])?;
    dev = dev.max((chi.statistic - (20.0 * 20.0 / 20.0 + 20.0 * 20.0 / 80.0)).abs());
    let chi = chi2_gof(&[12, 18, 30], &[20.0, 20.0, 20.0])?;
    dev = dev.max((chi.statistic - (64.0 + 4.0 + 100.0) / 20.0).abs());
    // means 2 and 5, both sample variances 1
    dev = dev.max((cohens_d(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0])? - 3.0).abs());
    // means 2 and 4; variances 1 and 20/3 on 2 and 3 df: pooled 22/5
    dev = dev.max((cohens_d(&[1.0, 2.0, 3.0], &[1.0, 3.0, 5.0, 7.0])? - 2.0 / 4.4f64.sqrt()).abs());
    Ok(OracleCheck::new("chi2_and_cohens_d_fixtures", 4, dev, 1e-9))
}

/// Fraction of instances whose Ward cut differs from the greedy oracle.
pub fn check_ward(cfg: &OracleConfig) -> Result<OracleCheck> {
    let mismatches = (0..cfg.ward_instances)
        .into_par_iter()
        .map(|i| {
            let (points, k) = random_ward_instance(&mut instance_rng(cfg.seed, 2, i));
            let got = canonical(ward_hclust(&points, k)?.groups);
            Ok(usize::from(got != ward_greedy_oracle(&points, k)))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(OracleCheck::new(
        "ward_vs_greedy_brute_force",
        cfg.ward_instances,
        mismatches as f64 / cfg.ward_instances as f64,
        0.0,
    ))
}

/// Instances of the Ward check whose cut also attains the global minimum
/// within-cluster sum of squares over all k-partitions. Ward is greedy, so
/// this is informational rather than a pass/fail check.
pub fn ward_global_agreement(cfg: &OracleConfig) -> Result<(usize, usize)> {
    let agree = (0..cfg.ward_instances)
        .into_par_iter()
        .map(|i| {
            let (points, k) = random_ward_instance(&mut instance_rng(cfg.seed, 2, i));
            let got = canonical(ward_hclust(&points, k)?.groups);
            let (_, best) = min_variance_partition(&points, k);
            let total: f64 = got.iter().map(|g| ess(&points, g)).sum();
            Ok(usize::from(total <= best + 1e-9 * (1.0 + best)))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok((agree, cfg.ward_instances))
}

/// Fraction of 1-D activation clusterings that are not contiguous.
pub fn check_contiguity(cfg: &OracleConfig) -> Result<OracleCheck> {
    let bad = (0..cfg.contiguity_instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(cfg.seed, 3, i);
            let n = rng.random_range(8..=100);
            let k = rng.random_range(2..=6);
            let tokens = (0..n)
                .map(|j| TokenActivation::new(format!("t{j}"), rng.random_range(-3.0..3.0)))
                .collect();
            let neuron = NeuronRecord::new(0, i as u32, tokens).expect("valid synthetic neuron");
            let p = activation_hclust_partition(&neuron, k)?;
            Ok(usize::from(!is_contiguous(&p)))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(OracleCheck::new(
        "activation_clusters_contiguous",
        cfg.contiguity_instances,
        bad as f64 / cfg.contiguity_instances as f64,
        0.0,
    ))
}

pub fn check_cosine(cfg: &OracleConfig) -> Result<OracleCheck> {
    let dev = max_dev((0..cfg.cosine_instances).into_par_iter().map(|i| {
        let mut rng = instance_rng(cfg.seed, 4, i);
        let n = rng.random_range(2..=100);
        let dim = rng.random_range(1..=32);
        let vs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                v[0] += 2.0;
                v
            })
            .collect();
        let m = CosineMatrix::new(&vs)?;
        let mut worst: f64 = 0.0;
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                let mut dot = 0.0;
                let mut na = 0.0;
                let mut nb = 0.0;
                for c in 0..dim {
                    dot += vs[a][c] * vs[b][c];
                    na += vs[a][c] * vs[a][c];
                    nb += vs[b][c] * vs[b][c];
                }
                worst = worst.max((m.get(a, b) - dot / (na.sqrt() * nb.sqrt())).abs());
            }
        }
        Ok(worst)
    }))?;
    Ok(OracleCheck::new("cosine_vs_double_loop", cfg.cosine_instances, dev, 1e-12))
}

/// Largest |n_impl - n_scan| over all cells (zero means exact equality).
pub fn check_interleaving(cfg: &OracleConfig) -> Result<OracleCheck> {
    let dev = max_dev((0..cfg.interleave_instances).into_par_iter().map(|i| {
        let p = random_partition(&mut instance_rng(cfg.seed, 5, i));
        let all: Vec<f64> = (0..p.k()).flat_map(|g| p.activations(g)).collect();
        let worst = interleave_cells(&p)?
            .iter()
            .map(|c| c.n.abs_diff(count_in_span_scan(&all, c.x_min, c.x_max)))
            .max()
            .unwrap_or(0);
        Ok(worst as f64)
    }))?;
    Ok(OracleCheck::new("interleave_count_vs_scan", cfg.interleave_instances, dev, 0.0))
}

pub fn oracle_suite(cfg: &OracleConfig) -> Result<OracleReport> {
    Ok(OracleReport {
        seed: cfg.seed,
        checks: vec![
            check_kruskal_h(cfg)?,
            check_kruskal_p(cfg)?,
            check_fixtures()?,
            check_ward(cfg)?,
            check_contiguity(cfg)?,
            check_cosine(cfg)?,
            check_interleaving(cfg)?,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ward_global_agreement_counts() {
        let cfg = OracleConfig { ward_instances: 30, ..OracleConfig::default() };
        let (agree, total) = ward_global_agreement(&cfg).unwrap();
        assert_eq!(total, 30);
        assert!(agree <= total && agree > 0);
    }

    #[test]
    fn brute_ranks_average_ties() {
        assert_eq!(brute_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn hand_h_reference() {
        let g = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0]];
        assert!((hand_kruskal_h(&g) - 7.2).abs() < 1e-12);
    }

    #[test]
    fn permutation_p_approaches_exact() {
        let g = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0]];
        let p = permutation_p_kw(&g, 50_000, &mut ChaCha8Rng::seed_from_u64(2));
        assert!((p - 6.0 / 1680.0).abs() < 0.002, "{p}");
    }

    #[test]
    fn global_optimum_on_two_pairs() {
        let pts = vec![vec![0.0], vec![1.0], vec![9.0], vec![10.0]];
        let (groups, cost) = min_variance_partition(&pts, 2);
        assert_eq!(groups, vec![vec![0, 1], vec![2, 3]]);
        assert!((cost - 1.0).abs() < 1e-12);
        assert_eq!(ward_greedy_oracle(&pts, 2), groups);
    }

    #[test]
    fn contiguity_detector() {
        let t = |n: &str, a: f64| TokenActivation::new(n, a);
        let split = Partition::new(
            PartitionKind::Activation,
            vec![vec![t("a", 1.0), t("b", 3.0)], vec![t("c", 2.0)]],
            vec![],
        );
        assert!(!is_contiguous(&split));
        let ok = Partition::new(
            PartitionKind::Activation,
            vec![vec![t("a", 1.0), t("b", 2.0)], vec![t("c", 3.0)]],
            vec![],
        );
        assert!(is_contiguous(&ok));
    }

    #[test]
    fn small_suite_passes() {
        let cfg = OracleConfig {
            seed: 9,
            kw_instances: 20,
            kw_permutations: 20_000,
            ward_instances: 40,
            contiguity_instances: 40,
            cosine_instances: 10,
            interleave_instances: 100,
        };
        let report = oracle_suite(&cfg).unwrap();
        assert!(report.passed(), "{}", report.render());
        assert_eq!(report.checks.len(), 7);
    }
}
