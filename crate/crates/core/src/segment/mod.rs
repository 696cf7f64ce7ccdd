// SPDX-License-Identifier: MIT OR Apache-2.0

//! Partitions of a neuron's core-tokens: categorical clusters (K1..Kk) from
//! embedding clustering, and activation segments (G1..Gk) from quantile
//! splits or 1-D clustering of activations.

use std::collections::HashSet;

use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::data::{EmbeddingTable, NeuronRecord, TokenActivation};
use crate::error::{Error, Result};
use crate::stats::mean;

mod ward;

pub use ward::{ward_hclust, Dendrogram, Merge, WardResult};

/// Column-wise z-scores with the sample (n - 1) standard deviation. Columns
/// whose values are all equal map to zero.
pub fn standardize<R: AsRef<[f64]>>(rows: &[R]) -> Vec<Vec<f64>> {
    let n = rows.len();
    if n == 0 {
        return Vec::new();
    }
    let dim = rows[0].as_ref().len();
    let mut out = vec![vec![0.0; dim]; n];
    for c in 0..dim {
        let col: Vec<f64> = rows.iter().map(|r| r.as_ref()[c]).collect();
        let first = col[0];
        if n < 2 || col.iter().all(|&x| x == first) {
            continue;
        }
        let m = mean(&col);
        let sd = (col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        if sd > 0.0 {
            for (r, x) in out.iter_mut().zip(&col) {
                r[c] = (x - m) / sd;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    Categorical,
    Activation,
}

impl PartitionKind {
    pub fn prefix(self) -> char {
        match self {
            PartitionKind::Categorical => 'K',
            PartitionKind::Activation => 'G',
        }
    }
}

/// Disjoint groups of a neuron's tokens, labelled so that group 1 has the
/// lowest mean activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    kind: PartitionKind,
    groups: Vec<Vec<TokenActivation>>,
    unassigned: Vec<String>,
}

impl Partition {
    /// Drops empty groups and orders the rest by ascending mean activation.
    /// The sort is stable, so groups with equal means keep their input order.
    pub fn new(
        kind: PartitionKind,
        groups: Vec<Vec<TokenActivation>>,
        unassigned: Vec<String>,
    ) -> Self {
        let mut groups: Vec<_> = groups.into_iter().filter(|g| !g.is_empty()).collect();
        groups.sort_by(|a, b| group_mean(a).total_cmp(&group_mean(b)));
        Self {
            kind,
            groups,
            unassigned,
        }
    }

    pub fn kind(&self) -> PartitionKind {
        self.kind
    }

    pub fn groups(&self) -> &[Vec<TokenActivation>] {
        &self.groups
    }

    pub fn unassigned(&self) -> &[String] {
        &self.unassigned
    }

    pub fn k(&self) -> usize {
        self.groups.len()
    }

    pub fn label(&self, i: usize) -> String {
        format!("{}{}", self.kind.prefix(), i + 1)
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.k()).map(|i| self.label(i)).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    /// Total number of grouped tokens.
    pub fn n_tokens(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn activations(&self, i: usize) -> Vec<f64> {
        self.groups[i].iter().map(|t| t.activation).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.groups.iter().map(|g| group_mean(g)).collect()
    }

    /// Checks that groups are disjoint and, together with the unassigned
    /// tokens, cover exactly the neuron's core-tokens.
    pub fn check_cover(&self, neuron: &NeuronRecord) -> Result<()> {
        let mut seen = HashSet::new();
        let placed = self
            .groups
            .iter()
            .flatten()
            .map(|t| t.token.as_str())
            .chain(self.unassigned.iter().map(String::as_str));
        for t in placed {
            if !seen.insert(t) {
                return Err(Error::Degenerate(format!("token {t:?} placed twice")));
            }
        }
        let expected: HashSet<&str> = neuron.core_tokens.iter().map(|t| t.token.as_str()).collect();
        if seen != expected {
            return Err(Error::Degenerate(
                "partition does not cover the neuron's tokens".into(),
            ));
        }
        Ok(())
    }
}

fn group_mean(g: &[TokenActivation]) -> f64 {
    g.iter().map(|t| t.activation).sum::<f64>() / g.len() as f64
}

impl Serialize for Partition {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("Partition", 5)?;
        st.serialize_field("kind", &self.kind)?;
        st.serialize_field("labels", &self.labels())?;
        st.serialize_field("means", &self.means())?;
        st.serialize_field("groups", &self.groups)?;
        st.serialize_field("unassigned", &self.unassigned)?;
        st.end()
    }
}

fn groups_from_indices(tokens: &[&TokenActivation], groups: &[Vec<usize>]) -> Vec<Vec<TokenActivation>> {
    groups
        .iter()
        .map(|g| g.iter().map(|&i| tokens[i].clone()).collect())
        .collect()
}

fn check_cut(result: &WardResult, k: usize) -> Result<()> {
    if let Some(h) = result.dendrogram.next_merge_height(k) {
        if h <= 0.0 {
            return Err(Error::Degenerate(format!(
                "{k} clusters are not separated at a positive merge height"
            )));
        }
    }
    Ok(())
}

/// Ward clustering of standardized embeddings of the neuron's resolvable
/// core-tokens, cut at `k`. Tokens without an embedding are left unassigned.
pub fn categorical_partition(neuron: &NeuronRecord, emb: &EmbeddingTable, k: usize) -> Result<Partition> {
    let mut tokens = Vec::new();
    let mut vectors = Vec::new();
    let mut unassigned = Vec::new();
    for t in &neuron.core_tokens {
        match emb.get(&t.token) {
            Some(v) => {
                tokens.push(t);
                vectors.push(v);
            }
            None => unassigned.push(t.token.clone()),
        }
    }
    if tokens.len() < k {
        return Err(Error::Insufficient(format!(
            "{} resolvable tokens for {k} clusters",
            tokens.len()
        )));
    }
    let result = ward_hclust(&standardize(&vectors), k)?;
    check_cut(&result, k)?;
    Ok(Partition::new(
        PartitionKind::Categorical,
        groups_from_indices(&tokens, &result.groups),
        unassigned,
    ))
}

/// Tokens sorted by ascending activation, split into `k` contiguous groups
/// whose sizes differ by at most one; the first `n mod k` groups take the
/// extra token.
pub fn equal_count_partition(neuron: &NeuronRecord, k: usize) -> Result<Partition> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if neuron.len() < k {
        return Err(Error::Insufficient(format!(
            "{} tokens for {k} activation segments",
            neuron.len()
        )));
    }
    let mut sorted = neuron.core_tokens.clone();
    sorted.sort_by(|a, b| a.activation.total_cmp(&b.activation));
    let (base, extra) = (sorted.len() / k, sorted.len() % k);
    let mut groups = Vec::with_capacity(k);
    let mut rest = sorted.as_slice();
    for g in 0..k {
        let take = base + usize::from(g < extra);
        let (head, tail) = rest.split_at(take);
        groups.push(head.to_vec());
        rest = tail;
    }
    Ok(Partition::new(PartitionKind::Activation, groups, Vec::new()))
}

/// Quartile segmentation: G1 holds the lowest-activation quarter.
pub fn quartile_partition(neuron: &NeuronRecord) -> Result<Partition> {
    equal_count_partition(neuron, 4)
}

/// Ward clustering of the standardized 1-D activation values, cut at `k`.
pub fn activation_hclust_partition(neuron: &NeuronRecord, k: usize) -> Result<Partition> {
    if neuron.len() < k {
        return Err(Error::Insufficient(format!(
            "{} tokens for {k} activation clusters",
            neuron.len()
        )));
    }
    let points: Vec<[f64; 1]> = neuron.core_tokens.iter().map(|t| [t.activation]).collect();
    let result = ward_hclust(&standardize(&points), k)?;
    check_cut(&result, k)?;
    let tokens: Vec<&TokenActivation> = neuron.core_tokens.iter().collect();
    Ok(Partition::new(
        PartitionKind::Activation,
        groups_from_indices(&tokens, &result.groups),
        Vec::new(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn neuron(acts: &[f64]) -> NeuronRecord {
        NeuronRecord::new(
            0,
            0,
            acts.iter()
                .enumerate()
                .map(|(i, &a)| TokenActivation::new(format!("t{i}"), a))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn standardize_examples() {
        let z = standardize(&[[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]]);
        let col: Vec<f64> = z.iter().map(|r| r[0]).collect();
        assert_eq!(col, vec![-1.0, 0.0, 1.0]);
        assert!(z.iter().all(|r| r[1] == 0.0));
    }

    proptest! {
        #[test]
        fn standardized_columns_are_centred(
            rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..20)
        ) {
            let z = standardize(&rows);
            for c in 0..3 {
                let m = z.iter().map(|r| r[c]).sum::<f64>() / z.len() as f64;
                prop_assert!(m.abs() < 1e-12);
            }
        }

        #[test]
        fn quartile_groups_are_ordered_intervals(acts in prop::collection::vec(-10.0f64..10.0, 4..60)) {
            let p = quartile_partition(&neuron(&acts)).unwrap();
            prop_assert_eq!(p.k(), 4);
            for i in 0..3 {
                let hi = p.activations(i).into_iter().fold(f64::NEG_INFINITY, f64::max);
                let lo = p.activations(i + 1).into_iter().fold(f64::INFINITY, f64::min);
                prop_assert!(hi <= lo);
            }
        }
    }

    #[test]
    fn quartile_sizes() {
        let acts: Vec<f64> = (0..100).map(|i| (i * 37 % 100) as f64).collect();
        assert_eq!(quartile_partition(&neuron(&acts)).unwrap().sizes(), vec![25; 4]);
        let acts: Vec<f64> = (0..10).map(f64::from).collect();
        assert_eq!(quartile_partition(&neuron(&acts)).unwrap().sizes(), vec![3, 3, 2, 2]);
        assert!(quartile_partition(&neuron(&[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn activation_hclust_pairs() {
        let acts = [1.0, 1.1, 5.0, 5.1, 9.0, 9.1, 20.0, 20.1];
        let p = activation_hclust_partition(&neuron(&acts), 4).unwrap();
        let groups: Vec<Vec<f64>> = (0..4)
            .map(|i| {
                let mut a = p.activations(i);
                a.sort_by(f64::total_cmp);
                a
            })
            .collect();
        assert_eq!(
            groups,
            vec![vec![1.0, 1.1], vec![5.0, 5.1], vec![9.0, 9.1], vec![20.0, 20.1]]
        );
        assert_eq!(p.labels(), vec!["G1", "G2", "G3", "G4"]);
    }

    #[test]
    fn activation_hclust_all_equal_is_degenerate() {
        assert!(matches!(
            activation_hclust_partition(&neuron(&[2.0; 10]), 4),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn categorical_identical_embeddings_is_degenerate() {
        let n = neuron(&(0..10).map(f64::from).collect::<Vec<_>>());
        let mut emb = EmbeddingTable::new(2);
        for t in &n.core_tokens {
            emb.insert(t.token.clone(), vec![0.3, 0.7]).unwrap();
        }
        assert!(matches!(categorical_partition(&n, &emb, 5), Err(Error::Degenerate(_))));
    }

    #[test]
    fn categorical_labels_follow_mean_activation() {
        // three obvious embedding blobs with known activation levels
        let mut toks = Vec::new();
        let mut emb = EmbeddingTable::new(2);
        for (b, (cx, act)) in [(0.0, 5.0), (10.0, 1.0), (20.0, 3.0)].iter().enumerate() {
            for j in 0..4 {
                let name = format!("b{b}_{j}");
                emb.insert(name.clone(), vec![cx + j as f64 * 0.01, 1.0]).unwrap();
                toks.push(TokenActivation::new(name, act + j as f64 * 0.001));
            }
        }
        toks.push(TokenActivation::new("orphan", 0.0));
        let n = NeuronRecord::new(0, 0, toks).unwrap();
        let p = categorical_partition(&n, &emb, 3).unwrap();
        let m = p.means();
        assert!(m[0] < m[1] && m[1] < m[2]);
        assert!(p.groups()[0].iter().all(|t| t.token.starts_with("b1")));
        assert!(p.groups()[2].iter().all(|t| t.token.starts_with("b0")));
        assert_eq!(p.unassigned(), ["orphan"]);
        p.check_cover(&n).unwrap();
    }

    #[test]
    fn cover_check_catches_duplicates() {
        let n = neuron(&[1.0, 2.0]);
        let bad = Partition::new(
            PartitionKind::Activation,
            vec![vec![n.core_tokens[0].clone()], vec![n.core_tokens[0].clone()]],
            vec![],
        );
        assert!(bad.check_cover(&n).is_err());
    }
}
