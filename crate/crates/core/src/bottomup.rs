// SPDX-License-Identifier: MIT OR Apache-2.0

//! Categorical homogeneity of activation segments: mean pairwise cosine of
//! each G-group against the upper quartile of all pairwise cosines.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::config::{RunConfig, Segmentation};
use crate::data::{EmbeddingTable, NeuronId, NeuronRecord};
use crate::error::{Error, Result};
use crate::segment::{activation_hclust_partition, equal_count_partition, Partition};
use crate::stats::{chi2_gof, quantile, quantile_sorted, CosineMatrix, TestResult};
use crate::topdown::{layer_cell, percent};

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronBottomUpResult {
    pub neuron: NeuronId,
    pub segmentation: Segmentation,
    pub partition: Partition,
    /// Mean pairwise cosine per group; `None` below two resolvable tokens.
    pub cos: Vec<Option<f64>>,
    /// Upper quartile of all pairwise cosines among resolvable tokens.
    pub q3_cos100: f64,
    pub d: Vec<Option<f64>>,
    pub n_resolvable: usize,
    pub n_dropped: usize,
}

impl NeuronBottomUpResult {
    /// Some group could not be scored.
    pub fn partial(&self) -> bool {
        self.cos.iter().any(Option::is_none)
    }
}

impl Serialize for NeuronBottomUpResult {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(None)?;
        m.serialize_entry("layer", &self.neuron.layer)?;
        m.serialize_entry("neuron", &self.neuron.index)?;
        m.serialize_entry("segmentation", &self.segmentation)?;
        m.serialize_entry("k", &self.partition.k())?;
        m.serialize_entry("q3_cos100", &self.q3_cos100)?;
        for (i, c) in self.cos.iter().enumerate() {
            m.serialize_entry(&format!("cos_{}", self.partition.label(i)), c)?;
        }
        for (i, d) in self.d.iter().enumerate() {
            m.serialize_entry(&format!("d_{}", self.partition.label(i)), d)?;
        }
        for (i, d) in self.d.iter().enumerate() {
            m.serialize_entry(&format!("negative_{}", self.partition.label(i)), &d.map(|d| d < 0.0))?;
        }
        m.serialize_entry("sizes", &self.partition.sizes())?;
        m.serialize_entry("n_resolvable", &self.n_resolvable)?;
        m.serialize_entry("n_dropped", &self.n_dropped)?;
        m.serialize_entry("partial", &self.partial())?;
        m.serialize_entry("partition", &self.partition)?;
        m.end()
    }
}

pub fn activation_partition(neuron: &NeuronRecord, segmentation: Segmentation, k: usize) -> Result<Partition> {
    match segmentation {
        Segmentation::Quartile => equal_count_partition(neuron, k),
        Segmentation::Hclust => activation_hclust_partition(neuron, k),
    }
}

/// Segments the neuron's activations into `cfg.k_activation` groups and
/// scores each group's semantic homogeneity. One cosine matrix over the
/// resolvable tokens serves both the quartile and the group means.
pub fn analyze_neuron_bottomup(
    neuron: &NeuronRecord,
    emb: &EmbeddingTable,
    segmentation: Segmentation,
    cfg: &RunConfig,
) -> Result<NeuronBottomUpResult> {
    let partition = activation_partition(neuron, segmentation, cfg.k_activation)?;
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut vectors = Vec::new();
    for t in &neuron.core_tokens {
        if let Some(v) = emb.get(&t.token) {
            index.insert(t.token.as_str(), vectors.len());
            vectors.push(v);
        }
    }
    if vectors.len() < 2 {
        return Err(Error::Insufficient(format!(
            "{} resolvable tokens, need 2 for pairwise cosines",
            vectors.len()
        )));
    }
    let matrix = CosineMatrix::new(&vectors)?;
    let q3 = quantile(matrix.pair_values(), 0.75)?;
    let cos: Vec<Option<f64>> = partition
        .groups()
        .iter()
        .map(|g| {
            let members: Vec<usize> = g.iter().filter_map(|t| index.get(t.token.as_str()).copied()).collect();
            matrix.mean_within(&members)
        })
        .collect();
    let d = cos.iter().map(|c| c.map(|c| c - q3)).collect();
    Ok(NeuronBottomUpResult {
        neuron: neuron.id(),
        segmentation,
        partition,
        cos,
        q3_cos100: q3,
        d,
        n_resolvable: vectors.len(),
        n_dropped: neuron.len() - vectors.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BottomUpGroupAggregate {
    pub label: String,
    pub n_neuron: usize,
    pub mean_cos: f64,
    pub mean_d: f64,
    /// Percentage of neurons with d < 0.
    pub pct_negative: f64,
    /// [count(d < 0), count(d >= 0)] against [N/2, N/2].
    pub chi2: TestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BottomUpAggregate {
    pub layer: Option<u32>,
    pub n_neuron: usize,
    pub groups: Vec<BottomUpGroupAggregate>,
}

impl BottomUpAggregate {
    pub fn csv_header() -> Vec<String> {
        ["layer", "group", "n_neuron", "mu_cos", "mu_d", "pi_dneg", "chi2", "p_chi2"]
            .map(String::from)
            .to_vec()
    }

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.groups
            .iter()
            .map(|g| {
                vec![
                    layer_cell(self.layer),
                    g.label.clone(),
                    g.n_neuron.to_string(),
                    g.mean_cos.to_string(),
                    g.mean_d.to_string(),
                    g.pct_negative.to_string(),
                    g.chi2.statistic.to_string(),
                    g.chi2.p_value.to_string(),
                ]
            })
            .collect()
    }
}

fn common_k(results: &[NeuronBottomUpResult]) -> Result<usize> {
    let k = results
        .first()
        .map(|r| r.cos.len())
        .ok_or_else(|| Error::Empty("bottom-up results"))?;
    if results.iter().any(|r| r.cos.len() != k) {
        return Err(Error::InvalidArgument("bottom-up results have different k".into()));
    }
    Ok(k)
}

/// Per group: mean cosine, mean d, negativity percentage and the 50/50
/// chi-square on negativity counts. Groups a neuron could not score are
/// left out of that group's cell only.
pub fn aggregate_bottomup(results: &[NeuronBottomUpResult], layer: Option<u32>) -> Result<BottomUpAggregate> {
    let k = common_k(results)?;
    let mut groups = Vec::with_capacity(k);
    for i in 0..k {
        let scored: Vec<(f64, f64)> = results
            .iter()
            .filter_map(|r| Some((r.cos[i]?, r.d[i]?)))
            .collect();
        let label = results[0].partition.label(i);
        if scored.is_empty() {
            return Err(Error::Insufficient(format!("no neuron scored {label}")));
        }
        let n = scored.len();
        let neg = scored.iter().filter(|(_, d)| *d < 0.0).count();
        let half = n as f64 / 2.0;
        groups.push(BottomUpGroupAggregate {
            label,
            n_neuron: n,
            mean_cos: scored.iter().map(|p| p.0).sum::<f64>() / n as f64,
            mean_d: scored.iter().map(|p| p.1).sum::<f64>() / n as f64,
            pct_negative: percent(neg, n),
            chi2: chi2_gof(&[neg as u64, (n - neg) as u64], &[half, half])?,
        });
    }
    Ok(BottomUpAggregate {
        layer,
        n_neuron: results.len(),
        groups,
    })
}

/// Planned check that homogeneity rises with activation: the group means of
/// cos must increase strictly from G1 to Gk, and the mean per-neuron
/// difference cos_Gk - cos_G1 must lie above the 95% sign-flip null band.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiseTest {
    pub layer: Option<u32>,
    pub n_neuron: usize,
    pub mean_cos: Vec<f64>,
    pub monotone: bool,
    pub mean_diff: f64,
    pub band_low: f64,
    pub band_high: f64,
    pub permutations: usize,
    pub passed: bool,
}

impl RiseTest {
    pub fn csv_header() -> Vec<String> {
        [
            "layer", "n_neuron", "mean_diff", "band_low", "band_high", "permutations", "monotone", "passed",
        ]
        .map(String::from)
        .to_vec()
    }

    pub fn csv_row(&self) -> Vec<String> {
        vec![
            layer_cell(self.layer),
            self.n_neuron.to_string(),
            self.mean_diff.to_string(),
            self.band_low.to_string(),
            self.band_high.to_string(),
            self.permutations.to_string(),
            self.monotone.to_string(),
            self.passed.to_string(),
        ]
    }
}

/// Uses neurons that scored every group.
pub fn rise_test(
    results: &[NeuronBottomUpResult],
    permutations: usize,
    seed: u64,
    layer: Option<u32>,
) -> Result<RiseTest> {
    let k = common_k(results)?;
    if k < 2 || permutations == 0 {
        return Err(Error::InvalidArgument("rise test needs k >= 2 and permutations > 0".into()));
    }
    let full: Vec<Vec<f64>> = results
        .iter()
        .filter_map(|r| r.cos.iter().copied().collect::<Option<Vec<f64>>>())
        .collect();
    if full.len() < 2 {
        return Err(Error::Insufficient(format!("{} fully scored neurons", full.len())));
    }
    let n = full.len() as f64;
    let mean_cos: Vec<f64> = (0..k).map(|i| full.iter().map(|c| c[i]).sum::<f64>() / n).collect();
    let monotone = mean_cos.windows(2).all(|w| w[0] < w[1]);
    let diffs: Vec<f64> = full.iter().map(|c| c[k - 1] - c[0]).collect();
    let mean_diff = diffs.iter().sum::<f64>() / n;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut null: Vec<f64> = (0..permutations)
        .map(|_| {
            diffs
                .iter()
                .map(|&d| if rng.random::<bool>() { d } else { -d })
                .sum::<f64>()
                / n
        })
        .collect();
    null.sort_by(f64::total_cmp);
    let band_low = quantile_sorted(&null, 0.025)?;
    let band_high = quantile_sorted(&null, 0.975)?;
    Ok(RiseTest {
        layer,
        n_neuron: full.len(),
        mean_cos,
        monotone,
        mean_diff,
        band_low,
        band_high,
        permutations,
        passed: monotone && mean_diff > band_high,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TokenActivation;

    fn neuron_with(emb_of: impl Fn(usize) -> Vec<f64>, n: usize) -> (NeuronRecord, EmbeddingTable) {
        let mut emb = EmbeddingTable::new(0);
        let mut tokens = Vec::new();
        for i in 0..n {
            let t = format!("t{i}");
            emb.insert(t.clone(), emb_of(i)).unwrap();
            tokens.push(TokenActivation::new(t, i as f64));
        }
        (NeuronRecord::new(2, 9, tokens).unwrap(), emb)
    }

    #[test]
    fn identical_embeddings() {
        let (n, emb) = neuron_with(|_| vec![1.0, 2.0, 3.0], 20);
        let r = analyze_neuron_bottomup(&n, &emb, Segmentation::Quartile, &RunConfig::default()).unwrap();
        assert!(r.cos.iter().all(|c| (c.unwrap() - 1.0).abs() < 1e-12));
        assert!(r.d.iter().all(|d| d.unwrap().abs() < 1e-12));
    }

    #[test]
    fn tight_top_group_scores_higher() {
        // tokens 15..20 (top activations) share one direction, others spread
        let (n, emb) = neuron_with(
            |i| {
                if i >= 15 {
                    vec![1.0, 0.0, 0.01 * i as f64]
                } else {
                    let a = i as f64 * 0.7;
                    vec![a.cos(), a.sin(), 0.3]
                }
            },
            20,
        );
        let r = analyze_neuron_bottomup(&n, &emb, Segmentation::Quartile, &RunConfig::default()).unwrap();
        assert!(r.cos[3].unwrap() > r.cos[0].unwrap());
        assert!(r.d[3].unwrap() > r.d[0].unwrap());
        for (c, d) in r.cos.iter().zip(&r.d) {
            assert_eq!(c.unwrap() - r.q3_cos100, d.unwrap());
        }
    }

    #[test]
    fn q3_matches_brute_force_pairs() {
        let (n, emb) = neuron_with(|i| vec![(i as f64).sin(), (i as f64 * 1.3).cos(), 0.5], 13);
        let r = analyze_neuron_bottomup(&n, &emb, Segmentation::Hclust, &RunConfig::default()).unwrap();
        let mut pairs = Vec::new();
        for i in 0..13 {
            for j in i + 1..13 {
                let (u, v) = (emb.get(&format!("t{i}")).unwrap(), emb.get(&format!("t{j}")).unwrap());
                let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
                let nu: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nv: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                pairs.push(dot / (nu * nv));
            }
        }
        assert_eq!(pairs.len(), 78);
        pairs.sort_by(f64::total_cmp);
        // h = 0.75 * 77 = 57.75
        let brute = pairs[57] + 0.75 * (pairs[58] - pairs[57]);
        assert!((r.q3_cos100 - brute).abs() < 1e-12);
        // labels follow mean activation
        assert!(r.partition.means().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn missing_embeddings_make_group_partial() {
        let (n, full) = neuron_with(|i| vec![1.0, i as f64], 8);
        let mut emb = EmbeddingTable::new(2);
        for (t, v) in full.iter().skip(1) {
            emb.insert(t, v.to_vec()).unwrap();
        }
        // quartiles of 8 are pairs; t0 is missing so G1 has one resolvable token
        let r = analyze_neuron_bottomup(&n, &emb, Segmentation::Quartile, &RunConfig::default()).unwrap();
        assert!(r.partial());
        assert_eq!(r.cos[0], None);
        assert_eq!((r.n_resolvable, r.n_dropped), (7, 1));
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["cos_G1"].is_null());
        assert!(json["cos_G4"].is_number());
    }

    fn fixture(cos: [f64; 4], q3: f64) -> NeuronBottomUpResult {
        let (n, _) = neuron_with(|_| vec![1.0], 8);
        NeuronBottomUpResult {
            neuron: n.id(),
            segmentation: Segmentation::Quartile,
            partition: equal_count_partition(&n, 4).unwrap(),
            cos: cos.iter().map(|&c| Some(c)).collect(),
            q3_cos100: q3,
            d: cos.iter().map(|&c| Some(c - q3)).collect(),
            n_resolvable: 8,
            n_dropped: 0,
        }
    }

    #[test]
    fn aggregate_hand_fixture() {
        let rs = vec![
            fixture([0.1, 0.2, 0.3, 0.6], 0.5),
            fixture([0.2, 0.2, 0.4, 0.4], 0.3),
            fixture([0.0, 0.1, 0.1, 0.2], 0.1),
            fixture([0.3, 0.3, 0.3, 0.9], 0.4),
        ];
        let a = aggregate_bottomup(&rs, Some(1)).unwrap();
        assert_eq!(a.n_neuron, 4);
        assert!((a.groups[0].mean_cos - 0.15).abs() < 1e-12);
        assert!((a.groups[3].mean_cos - 0.525).abs() < 1e-12);
        // d_G1: -0.4, -0.1, -0.1, -0.1
        assert!((a.groups[0].mean_d + 0.175).abs() < 1e-12);
        assert_eq!(a.groups[0].pct_negative, 100.0);
        // chi2 of [4, 0] against [2, 2]
        assert!((a.groups[0].chi2.statistic - 4.0).abs() < 1e-12);
        // d_G4: 0.1, 0.1, 0.1, 0.5 -> none negative
        assert_eq!(a.groups[3].pct_negative, 0.0);
        // d_G3: -0.2, 0.1, 0.0, -0.1 -> two negative, exactly half
        assert_eq!(a.groups[2].pct_negative, 50.0);
        assert!((a.groups[2].chi2.p_value - 1.0).abs() < 1e-12);
        assert!(aggregate_bottomup(&[], None).is_err());
    }

    #[test]
    fn rise_test_detects_and_rejects() {
        let rising: Vec<_> = (0..40)
            .map(|i| {
                let e = 0.01 * ((i * 7) % 5) as f64;
                fixture([0.1 + e, 0.2, 0.3 - e, 0.5 + e], 0.3)
            })
            .collect();
        let t = rise_test(&rising, 500, 3, None).unwrap();
        assert!(t.monotone && t.passed);
        assert!(t.mean_diff > t.band_high);

        let flat: Vec<_> = (0..40)
            .map(|i| {
                let s = if i % 2 == 0 { 0.05 } else { -0.05 };
                fixture([0.3, 0.3, 0.3, 0.3 + s], 0.3)
            })
            .collect();
        let t = rise_test(&flat, 500, 3, None).unwrap();
        assert!(!t.passed);
        assert!(t.band_low <= t.mean_diff && t.mean_diff <= t.band_high);
        assert_eq!(t, rise_test(&flat, 500, 3, None).unwrap());
    }
}
