// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation interleaving of categorical clusters: how many tokens of the
//! whole neuron fall inside each cluster's activation span.

use serde::{Serialize, Serializer};

use crate::cluster::CategoricalSource;
use crate::config::RunConfig;
use crate::data::{NeuronId, NeuronRecord};
use crate::error::{Error, Result};
use crate::segment::Partition;
use crate::stats::{chi2_gof, risk_ratio, TestResult};
use crate::topdown::{layer_cell, percent};

/// Cells need more than this many expected and observed tokens.
pub const MIN_CELL_COUNT: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterleaveCell {
    pub label: String,
    pub x_min: f64,
    pub x_max: f64,
    /// Clustered tokens, from any cluster, inside [x_min, x_max].
    pub n: usize,
    /// Tokens in this cluster.
    pub m: usize,
    /// All clustered tokens.
    #[serde(rename = "N")]
    pub total: usize,
    /// Observed [n, N - n] against expected [m, N - m]; `None` when the
    /// cluster holds every token.
    pub chi2: Option<TestResult>,
    pub rho: f64,
    pub eligible: bool,
}

/// Brute-force count of values in the closed interval [lo, hi].
pub fn count_in_span_scan(values: &[f64], lo: f64, hi: f64) -> usize {
    values.iter().filter(|&&x| lo <= x && x <= hi).count()
}

/// Same count on ascending `sorted` values by binary search.
pub fn count_in_span_sorted(sorted: &[f64], lo: f64, hi: f64) -> usize {
    let start = sorted.partition_point(|&x| x < lo);
    let end = sorted.partition_point(|&x| x <= hi);
    end.saturating_sub(start)
}

fn cell(partition: &Partition, i: usize, sorted_all: &[f64]) -> Result<InterleaveCell> {
    let members = partition.activations(i);
    if members.is_empty() {
        return Err(Error::Empty("interleaving cluster"));
    }
    let x_min = members.iter().copied().fold(f64::INFINITY, f64::min);
    let x_max = members.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = count_in_span_sorted(sorted_all, x_min, x_max);
    let m = members.len();
    let total = sorted_all.len();
    let chi2 = if total > m {
        Some(chi2_gof(
            &[n as u64, (total - n) as u64],
            &[m as f64, (total - m) as f64],
        )?)
    } else {
        None
    };
    Ok(InterleaveCell {
        label: partition.label(i),
        x_min,
        x_max,
        n,
        m,
        total,
        eligible: chi2.is_some() && m > MIN_CELL_COUNT && n > MIN_CELL_COUNT,
        chi2,
        rho: risk_ratio(n as u64, m as u64)?,
    })
}

fn sorted_activations(partition: &Partition) -> Vec<f64> {
    let mut all: Vec<f64> = (0..partition.k()).flat_map(|i| partition.activations(i)).collect();
    all.sort_by(f64::total_cmp);
    all
}

/// The interleaving cell of group `i` of `partition`.
pub fn interleave_cell(partition: &Partition, i: usize) -> Result<InterleaveCell> {
    if i >= partition.k() {
        return Err(Error::InvalidArgument(format!(
            "cluster {} of a {}-cluster partition",
            i + 1,
            partition.k()
        )));
    }
    cell(partition, i, &sorted_activations(partition))
}

/// One cell per group of `partition`.
pub fn interleave_cells(partition: &Partition) -> Result<Vec<InterleaveCell>> {
    let sorted = sorted_activations(partition);
    (0..partition.k()).map(|i| cell(partition, i, &sorted)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronInterleaving {
    pub neuron: NeuronId,
    pub backend: String,
    /// The partition has exactly the configured number of clusters, so its
    /// labels are comparable across neurons.
    pub complete: bool,
    pub cells: Vec<InterleaveCell>,
}

impl Serialize for NeuronInterleaving {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("NeuronInterleaving", 5)?;
        st.serialize_field("layer", &self.neuron.layer)?;
        st.serialize_field("neuron", &self.neuron.index)?;
        st.serialize_field("backend", &self.backend)?;
        st.serialize_field("complete", &self.complete)?;
        st.serialize_field("cells", &self.cells)?;
        st.end()
    }
}

pub fn analyze_neuron_interleaving(
    neuron: &NeuronRecord,
    source: CategoricalSource<'_>,
    cfg: &RunConfig,
) -> Result<NeuronInterleaving> {
    let partition = source.partition(neuron, cfg.k_categorical, &cfg.prompt_template)?;
    Ok(NeuronInterleaving {
        neuron: neuron.id(),
        backend: source.id(),
        complete: partition.k() == cfg.k_categorical,
        cells: interleave_cells(&partition)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterleaveAggregateRow {
    pub label: String,
    pub n_cells: usize,
    pub mean_rho: f64,
    /// Percentage of eligible cells with p(chi2) < alpha.
    pub pct_significant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterleaveAggregate {
    pub layer: Option<u32>,
    /// Neurons contributing at least one eligible cell.
    pub n_neuron: usize,
    pub rows: Vec<InterleaveAggregateRow>,
}

impl InterleaveAggregate {
    pub fn csv_header() -> Vec<String> {
        ["layer", "cluster", "n_neuron", "n_cells", "mu_rho", "pi_pchi2"]
            .map(String::from)
            .to_vec()
    }

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    layer_cell(self.layer),
                    r.label.clone(),
                    self.n_neuron.to_string(),
                    r.n_cells.to_string(),
                    r.mean_rho.to_string(),
                    r.pct_significant.to_string(),
                ]
            })
            .collect()
    }
}

/// Per cluster label: mean risk ratio and share of significant cells over
/// eligible cells of complete neurons. Labels without any eligible cell are
/// an error.
pub fn aggregate_interleaving(
    results: &[NeuronInterleaving],
    alpha: f64,
    layer: Option<u32>,
) -> Result<InterleaveAggregate> {
    let complete: Vec<&NeuronInterleaving> = results.iter().filter(|r| r.complete).collect();
    let k = complete.first().map_or(0, |r| r.cells.len());
    if k == 0 {
        return Err(Error::Insufficient("no complete neurons to aggregate".into()));
    }
    let mut rows = Vec::with_capacity(k);
    for i in 0..k {
        let cells: Vec<&InterleaveCell> = complete.iter().map(|r| &r.cells[i]).filter(|c| c.eligible).collect();
        let label = complete[0].cells[i].label.clone();
        if cells.is_empty() {
            return Err(Error::Insufficient(format!("no eligible cells for {label}")));
        }
        let sig = cells
            .iter()
            .filter(|c| c.chi2.as_ref().is_some_and(|t| t.significant(alpha)))
            .count();
        rows.push(InterleaveAggregateRow {
            label,
            n_cells: cells.len(),
            mean_rho: cells.iter().map(|c| c.rho).sum::<f64>() / cells.len() as f64,
            pct_significant: percent(sig, cells.len()),
        });
    }
    let n_neuron = complete.iter().filter(|r| r.cells.iter().any(|c| c.eligible)).count();
    Ok(InterleaveAggregate { layer, n_neuron, rows })
}
