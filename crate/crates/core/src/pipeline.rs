// SPDX-License-Identifier: MIT OR Apache-2.0

//! Corpus-level driver: maps a per-neuron analysis over a worker pool and
//! groups results by layer, keeping input order throughout.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::bottomup::{analyze_neuron_bottomup, NeuronBottomUpResult};
use crate::cluster::CategoricalSource;
use crate::config::{RunConfig, Segmentation};
use crate::data::{EmbeddingTable, NeuronId, NeuronRecord};
use crate::error::{Error, Result};
use crate::interleave::{analyze_neuron_interleaving, NeuronInterleaving};
use crate::topdown::{analyze_neuron_topdown, NeuronTopDownResult};

/// Result of one neuron's analysis. Failures are kept, not fatal, so a
/// corpus run reports them and carries on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeuronOutcome<T> {
    pub neuron: NeuronId,
    pub result: std::result::Result<T, String>,
}

/// Runs `f` on every neuron using `jobs` worker threads (`None` = available
/// parallelism). Output order matches `neurons`.
pub fn run_pool<T, F>(neurons: &[NeuronRecord], jobs: Option<usize>, f: F) -> Result<Vec<NeuronOutcome<T>>>
where
    T: Send,
    F: Fn(&NeuronRecord) -> Result<T> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    Ok(pool.install(|| {
        neurons
            .par_iter()
            .map(|n| {
                let result = f(n).map_err(|e| {
                    log::warn!("neuron {}: {e}", n.id());
                    e.to_string()
                });
                NeuronOutcome { neuron: n.id(), result }
            })
            .collect()
    }))
}

pub fn run_topdown(
    neurons: &[NeuronRecord],
    source: CategoricalSource<'_>,
    cfg: &RunConfig,
    jobs: Option<usize>,
) -> Result<Vec<NeuronOutcome<NeuronTopDownResult>>> {
    run_pool(neurons, jobs, |n| analyze_neuron_topdown(n, source, cfg))
}

pub fn run_interleaving(
    neurons: &[NeuronRecord],
    source: CategoricalSource<'_>,
    cfg: &RunConfig,
    jobs: Option<usize>,
) -> Result<Vec<NeuronOutcome<NeuronInterleaving>>> {
    run_pool(neurons, jobs, |n| analyze_neuron_interleaving(n, source, cfg))
}

pub fn run_bottomup(
    neurons: &[NeuronRecord],
    emb: &EmbeddingTable,
    segmentation: Segmentation,
    cfg: &RunConfig,
    jobs: Option<usize>,
) -> Result<Vec<NeuronOutcome<NeuronBottomUpResult>>> {
    run_pool(neurons, jobs, |n| analyze_neuron_bottomup(n, emb, segmentation, cfg))
}

/// Successful results grouped by layer, in input order within a layer.
pub fn by_layer<T: Clone>(outcomes: &[NeuronOutcome<T>]) -> BTreeMap<u32, Vec<T>> {
    let mut map: BTreeMap<u32, Vec<T>> = BTreeMap::new();
    for o in outcomes {
        if let Ok(r) = &o.result {
            map.entry(o.neuron.layer).or_default().push(r.clone());
        }
    }
    map
}

/// Successful results, dropping failures.
pub fn successes<T: Clone>(outcomes: &[NeuronOutcome<T>]) -> Vec<T> {
    outcomes.iter().filter_map(|o| o.result.as_ref().ok().cloned()).collect()
}

pub fn failures<T>(outcomes: &[NeuronOutcome<T>]) -> Vec<(NeuronId, &str)> {
    outcomes
        .iter()
        .filter_map(|o| o.result.as_ref().err().map(|e| (o.neuron, e.as_str())))
        .collect()
}

/// Only neurons whose layer is in `layers` (all when empty).
pub fn filter_layers(neurons: Vec<NeuronRecord>, layers: &[u32]) -> Vec<NeuronRecord> {
    if layers.is_empty() {
        return neurons;
    }
    neurons.into_iter().filter(|n| layers.contains(&n.layer)).collect()
}
