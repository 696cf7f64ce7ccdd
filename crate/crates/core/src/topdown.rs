// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation differentiation of categorical clusters: do the K-groups of a
//! neuron differ in mean activation?

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::cluster::CategoricalSource;
use crate::config::RunConfig;
use crate::data::{NeuronId, NeuronRecord};
use crate::error::{Error, Result};
use crate::segment::Partition;
use crate::stats::{cohens_d, dunn_posthoc, kruskal_wallis, PostHocResult, TestResult};

/// Successive pairs (K1,K2) .. (K(k-1),Kk) followed by (K1,Kk).
pub fn reported_pairs(k: usize) -> Vec<(usize, usize)> {
    let mut pairs: Vec<_> = (1..k).map(|j| (j - 1, j)).collect();
    if k > 2 {
        pairs.push((0, k - 1));
    }
    pairs
}

pub fn pair_label(prefix: char, (i, j): (usize, usize)) -> String {
    format!("{prefix}{}{prefix}{}", i + 1, j + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairStat {
    pub pair: (usize, usize),
    /// Difference of labelled means, mu_j - mu_i.
    pub delta: f64,
    pub d: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronTopDownResult {
    pub neuron: NeuronId,
    pub backend: String,
    pub partition: Partition,
    pub means: Vec<f64>,
    pub eligible: bool,
    pub kw: Option<TestResult>,
    /// All k(k-1)/2 post-hoc comparisons; empty when ineligible.
    pub posthoc: Vec<PostHocResult>,
    /// The reported pairs; empty when ineligible.
    pub pairs: Vec<PairStat>,
}

impl Serialize for NeuronTopDownResult {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(None)?;
        m.serialize_entry("layer", &self.neuron.layer)?;
        m.serialize_entry("neuron", &self.neuron.index)?;
        m.serialize_entry("backend", &self.backend)?;
        m.serialize_entry("eligible", &self.eligible)?;
        m.serialize_entry("sizes", &self.partition.sizes())?;
        for (i, mu) in self.means.iter().enumerate() {
            m.serialize_entry(&format!("mu_{}", self.partition.label(i)), mu)?;
        }
        for p in &self.pairs {
            let label = pair_label('K', p.pair);
            m.serialize_entry(&format!("delta_{label}"), &p.delta)?;
            m.serialize_entry(&format!("d_{label}"), &p.d)?;
            m.serialize_entry(&format!("p_{label}"), &p.p_value)?;
        }
        m.serialize_entry("kw", &self.kw)?;
        m.serialize_entry("posthoc", &self.posthoc)?;
        m.serialize_entry("partition", &self.partition)?;
        m.end()
    }
}

/// Partitions the neuron into `cfg.k_categorical` categorical clusters and,
/// when every cluster has at least `cfg.min_cluster_size` tokens, runs
/// Kruskal-Wallis, Dunn's post-hoc test and Cohen's d on the activations.
pub fn analyze_neuron_topdown(
    neuron: &NeuronRecord,
    source: CategoricalSource<'_>,
    cfg: &RunConfig,
) -> Result<NeuronTopDownResult> {
    let partition = source.partition(neuron, cfg.k_categorical, &cfg.prompt_template)?;
    topdown_from_partition(neuron.id(), source.id(), partition, cfg)
}

/// Tests on an already built partition.
pub fn topdown_from_partition(
    neuron: NeuronId,
    backend: String,
    partition: Partition,
    cfg: &RunConfig,
) -> Result<NeuronTopDownResult> {
    let means = partition.means();
    let eligible = partition.k() == cfg.k_categorical
        && partition.sizes().iter().all(|&s| s >= cfg.min_cluster_size);
    let mut result = NeuronTopDownResult {
        neuron,
        backend,
        partition,
        means,
        eligible,
        kw: None,
        posthoc: Vec::new(),
        pairs: Vec::new(),
    };
    if !eligible {
        return Ok(result);
    }

    let groups: Vec<Vec<f64>> = (0..result.partition.k()).map(|i| result.partition.activations(i)).collect();
    result.kw = Some(kruskal_wallis(&groups)?);
    result.posthoc = dunn_posthoc(&groups, cfg.alpha)?;
    for pair in reported_pairs(groups.len()) {
        let ph = result
            .posthoc
            .iter()
            .find(|p| p.pair == pair)
            .expect("post-hoc covers every pair");
        result.pairs.push(PairStat {
            pair,
            delta: result.means[pair.1] - result.means[pair.0],
            d: cohens_d(&groups[pair.0], &groups[pair.1])?,
            p_value: ph.p_value,
            significant: ph.significant,
        });
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairAggregate {
    pub label: String,
    pub mean_delta: f64,
    pub mean_d: f64,
    /// Percentage of eligible neurons whose post-hoc p is below alpha'.
    pub pct_significant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopDownAggregate {
    pub layer: Option<u32>,
    pub n_neuron: usize,
    pub mean_mu: Vec<f64>,
    pub pairs: Vec<PairAggregate>,
    /// Percentage of eligible neurons with p_KW < alpha.
    pub pct_kw: f64,
}

impl TopDownAggregate {
    pub fn k(&self) -> usize {
        self.mean_mu.len()
    }

    pub fn csv_header(k: usize) -> Vec<String> {
        let pairs: Vec<String> = reported_pairs(k).into_iter().map(|p| pair_label('K', p)).collect();
        let mut h = vec!["layer".to_string(), "n_neuron".to_string()];
        h.extend((1..=k).map(|i| format!("mu_K{i}")));
        h.extend(pairs.iter().map(|p| format!("delta_{p}")));
        h.extend(pairs.iter().map(|p| format!("d_{p}")));
        h.push("pi_pKW".into());
        h.extend(pairs.iter().map(|p| format!("pi_p{p}")));
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let mut r = vec![layer_cell(self.layer), self.n_neuron.to_string()];
        r.extend(self.mean_mu.iter().map(f64::to_string));
        r.extend(self.pairs.iter().map(|p| p.mean_delta.to_string()));
        r.extend(self.pairs.iter().map(|p| p.mean_d.to_string()));
        r.push(self.pct_kw.to_string());
        r.extend(self.pairs.iter().map(|p| p.pct_significant.to_string()));
        r
    }
}

pub(crate) fn layer_cell(layer: Option<u32>) -> String {
    layer.map_or_else(|| "all".to_string(), |l| l.to_string())
}

pub(crate) fn percent(count: usize, total: usize) -> f64 {
    100.0 * count as f64 / total as f64
}

/// Means over eligible neurons and significance percentages. `layer` only
/// labels the output.
pub fn aggregate_topdown(
    results: &[NeuronTopDownResult],
    alpha: f64,
    layer: Option<u32>,
) -> Result<TopDownAggregate> {
    let eligible: Vec<&NeuronTopDownResult> = results.iter().filter(|r| r.eligible).collect();
    let Some(first) = eligible.first() else {
        return Err(Error::Insufficient("no eligible neurons to aggregate".into()));
    };
    let k = first.means.len();
    if eligible.iter().any(|r| r.means.len() != k) {
        return Err(Error::InvalidArgument("eligible neurons have different k".into()));
    }
    let n = eligible.len();
    let avg = |f: &dyn Fn(&NeuronTopDownResult) -> f64| eligible.iter().map(|r| f(r)).sum::<f64>() / n as f64;
    let mean_mu = (0..k).map(|i| avg(&|r| r.means[i])).collect();
    let pairs = reported_pairs(k)
        .into_iter()
        .enumerate()
        .map(|(slot, pair)| PairAggregate {
            label: pair_label('K', pair),
            mean_delta: avg(&|r| r.pairs[slot].delta),
            mean_d: avg(&|r| r.pairs[slot].d),
            pct_significant: percent(eligible.iter().filter(|r| r.pairs[slot].significant).count(), n),
        })
        .collect();
    let kw_hits = eligible
        .iter()
        .filter(|r| r.kw.as_ref().is_some_and(|t| t.significant(alpha)))
        .count();
    Ok(TopDownAggregate {
        layer,
        n_neuron: n,
        mean_mu,
        pairs,
        pct_kw: percent(kw_hits, n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EmbeddingTable, TokenActivation};
    use crate::segment::PartitionKind;

    fn planted(shift: f64) -> (NeuronRecord, EmbeddingTable) {
        // five well separated blobs of 12 tokens, activations 0..1 inside each
        // blob, blob 4 shifted up
        let mut emb = EmbeddingTable::new(5);
        let mut tokens = Vec::new();
        for b in 0..5 {
            for j in 0..12 {
                let t = format!("b{b}t{j}");
                let mut v = vec![0.1 * j as f64 / 12.0; 5];
                v[b] += 20.0;
                emb.insert(t.clone(), v).unwrap();
                let base = ((j * 7 + b * 3) % 12) as f64 / 12.0;
                let a = base + if b == 4 { shift } else { 0.0 };
                tokens.push(TokenActivation::new(t, a));
            }
        }
        (NeuronRecord::new(0, 1, tokens).unwrap(), emb)
    }

    #[test]
    fn reported_pairs_for_five() {
        assert_eq!(reported_pairs(5), vec![(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)]);
        assert_eq!(pair_label('K', (0, 4)), "K1K5");
        assert_eq!(reported_pairs(2), vec![(0, 1)]);
    }

    #[test]
    fn planted_shift_is_detected() {
        let (n, emb) = planted(2.0);
        let cfg = RunConfig::default();
        let r = analyze_neuron_topdown(&n, CategoricalSource::Embedding(&emb), &cfg).unwrap();
        assert!(r.eligible);
        assert!(r.kw.as_ref().unwrap().p_value < 0.05);
        let delta = |i: usize| r.pairs[i].delta;
        assert!(delta(3) > delta(0));
        assert!(r.pairs[4].d > 2.0);
        let telescoped: f64 = (0..4).map(delta).sum();
        assert!((telescoped - delta(4)).abs() < 1e-9);
        assert!(r.means.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(r.posthoc.len(), 10);
        assert!(r.posthoc.iter().all(|p| (p.adjusted_alpha - 0.0025).abs() < 1e-15));
    }

    #[test]
    fn small_cluster_is_ineligible() {
        let tokens: Vec<TokenActivation> = (0..30).map(|i| TokenActivation::new(format!("t{i}"), i as f64)).collect();
        let groups = vec![
            tokens[..5].to_vec(),
            tokens[5..11].to_vec(),
            tokens[11..17].to_vec(),
            tokens[17..23].to_vec(),
            tokens[23..].to_vec(),
        ];
        let p = Partition::new(PartitionKind::Categorical, groups, vec![]);
        let r = topdown_from_partition(NeuronId { layer: 0, index: 0 }, "t".into(), p, &RunConfig::default()).unwrap();
        assert!(!r.eligible);
        assert!(r.kw.is_none() && r.pairs.is_empty() && r.posthoc.is_empty());
    }

    fn fixture(means: [f64; 5], kw_p: f64, sig: [bool; 5], d: [f64; 5]) -> NeuronTopDownResult {
        let pairs = reported_pairs(5)
            .into_iter()
            .enumerate()
            .map(|(s, pair)| PairStat {
                pair,
                delta: means[pair.1] - means[pair.0],
                d: d[s],
                p_value: if sig[s] { 0.001 } else { 0.5 },
                significant: sig[s],
            })
            .collect();
        let mut kw = kruskal_wallis(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        kw.p_value = kw_p;
        NeuronTopDownResult {
            neuron: NeuronId { layer: 0, index: 0 },
            backend: "fixture".into(),
            partition: Partition::new(PartitionKind::Categorical, vec![], vec![]),
            means: means.to_vec(),
            eligible: true,
            kw: Some(kw),
            posthoc: vec![],
            pairs,
        }
    }

    #[test]
    fn aggregate_hand_fixture() {
        let rs = vec![
            fixture([1.0, 2.0, 3.0, 4.0, 5.0], 0.01, [true, false, false, false, true], [0.5, 0.1, 0.2, 0.3, 1.5]),
            fixture([0.0, 0.5, 1.0, 1.5, 4.0], 0.20, [false, false, false, true, true], [0.1, 0.1, 0.1, 0.9, 2.0]),
            fixture([2.0, 2.0, 2.0, 2.0, 2.0], 0.90, [false; 5], [0.0; 5]),
        ];
        let a = aggregate_topdown(&rs, 0.05, Some(0)).unwrap();
        assert_eq!(a.n_neuron, 3);
        assert!((a.mean_mu[0] - 1.0).abs() < 1e-12);
        assert!((a.mean_mu[4] - 11.0 / 3.0).abs() < 1e-12);
        // delta(K4,K5): 1, 2.5, 0
        assert!((a.pairs[3].mean_delta - 3.5 / 3.0).abs() < 1e-12);
        // delta(K1,K5): 4, 4, 0
        assert!((a.pairs[4].mean_delta - 8.0 / 3.0).abs() < 1e-12);
        assert!((a.pairs[4].mean_d - 3.5 / 3.0).abs() < 1e-12);
        assert!((a.pct_kw - 100.0 / 3.0).abs() < 1e-12);
        assert!((a.pairs[4].pct_significant - 200.0 / 3.0).abs() < 1e-12);

        let single = aggregate_topdown(&rs[..1], 0.05, None).unwrap();
        assert_eq!(single.mean_mu, rs[0].means);
        assert_eq!(single.pairs[0].mean_d, 0.5);

        let mut reversed = rs.clone();
        reversed.reverse();
        let b = aggregate_topdown(&reversed, 0.05, Some(0)).unwrap();
        for (x, y) in a.csv_row().iter().zip(b.csv_row()) {
            let (x, y): (f64, f64) = (x.parse().unwrap_or(0.0), y.parse().unwrap_or(0.0));
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_requires_eligible() {
        let mut r = fixture([0.0; 5], 0.5, [false; 5], [0.0; 5]);
        r.eligible = false;
        assert!(aggregate_topdown(&[r], 0.05, None).is_err());
    }

    #[test]
    fn csv_header_layout() {
        let h = TopDownAggregate::csv_header(5).join(",");
        assert!(h.starts_with("layer,n_neuron,mu_K1,mu_K2,mu_K3,mu_K4,mu_K5,delta_K1K2,"));
        assert!(h.contains("delta_K4K5,delta_K1K5,d_K1K2"));
        assert!(h.ends_with("d_K1K5,pi_pKW,pi_pK1K2,pi_pK2K3,pi_pK3K4,pi_pK4K5,pi_pK1K5"));
    }
}
