// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! gated criterion fails. Run with `cargo test -p neurocat-cli --test acceptance`.
//!
//! The optional full-scale comparison runs only when `NEUROCAT_FULL_NEURONS`
//! and `NEUROCAT_FULL_EMBEDDINGS` point at real layer-0 data; it is reported
//! but never gated.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use neurocat::bottomup::{aggregate_bottomup, rise_test};
use neurocat::cluster::CategoricalSource;
use neurocat::config::{RunConfig, Segmentation};
use neurocat::data::{load_embeddings, load_neurons};
use neurocat::interleave::{aggregate_interleaving, InterleaveAggregate};
use neurocat::oracle::{
    check_contiguity, check_fixtures, check_interleaving, check_kruskal_h, check_kruskal_p, check_ward,
    ward_global_agreement, OracleCheck, OracleConfig,
};
use neurocat::pipeline::{filter_layers, run_bottomup, run_interleaving, run_topdown, successes};
use neurocat::synth::{generate, Corpus, SynthMode, SynthSpec};
use neurocat::topdown::{aggregate_topdown, TopDownAggregate};

const SEED: u64 = 20_240_501;
const N_NEURONS: usize = 2000;

struct Outcome {
    passed: bool,
    detail: String,
}

struct Suite {
    results: Vec<(String, bool)>,
}

impl Suite {
    fn run(&mut self, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let out = f();
        let elapsed = start.elapsed();
        let in_time = elapsed <= limit;
        let passed = out.passed && in_time;
        println!(
            "{} {name}: {} [{:.1}s, limit {}s{}]",
            if passed { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64(),
            limit.as_secs(),
            if in_time { "" } else { ", over time" }
        );
        self.results.push((name.to_string(), passed));
    }
}

fn checks(list: &[OracleCheck]) -> Outcome {
    Outcome {
        passed: list.iter().all(|c| c.passed),
        detail: list
            .iter()
            .map(|c| format!("{} n={} max_dev={:.2e} tol={:.0e}", c.name, c.instances, c.max_deviation, c.tolerance))
            .collect::<Vec<_>>()
            .join("; "),
    }
}

fn corpus(mode: SynthMode, separation: f64, spread: f64) -> Corpus {
    generate(&SynthSpec {
        n_neurons: N_NEURONS,
        mode,
        blob_separation: separation,
        blob_spread: spread,
        seed: SEED,
        ..SynthSpec::default()
    })
    .expect("synthetic corpus")
}

fn interleave_aggregate(c: &Corpus) -> InterleaveAggregate {
    let cfg = RunConfig::default();
    let out = run_interleaving(&c.neurons, CategoricalSource::Embedding(&c.embeddings), &cfg, None).unwrap();
    aggregate_interleaving(&successes(&out), cfg.alpha, None).unwrap()
}

fn topdown_aggregate(c: &Corpus) -> TopDownAggregate {
    let cfg = RunConfig::default();
    let out = run_topdown(&c.neurons, CategoricalSource::Embedding(&c.embeddings), &cfg, None).unwrap();
    aggregate_topdown(&successes(&out), cfg.alpha, None).unwrap()
}

fn pair<'a>(a: &'a TopDownAggregate, label: &str) -> &'a neurocat::topdown::PairAggregate {
    a.pairs.iter().find(|p| p.label == label).expect("reported pair")
}

fn bottomup_results(c: &Corpus) -> Vec<neurocat::bottomup::NeuronBottomUpResult> {
    let cfg = RunConfig::default();
    let out = run_bottomup(&c.neurons, &c.embeddings, Segmentation::Quartile, &cfg, None).unwrap();
    successes(&out)
}

fn statistics() -> Outcome {
    let cfg = OracleConfig {
        seed: SEED,
        kw_instances: 200,
        ..OracleConfig::default()
    };
    checks(&[check_kruskal_h(&cfg).unwrap(), check_kruskal_p(&cfg).unwrap(), check_fixtures().unwrap()])
}

fn clustering() -> Outcome {
    let cfg = OracleConfig {
        seed: SEED,
        ward_instances: 300,
        contiguity_instances: 500,
        ..OracleConfig::default()
    };
    let mut out = checks(&[check_ward(&cfg).unwrap(), check_contiguity(&cfg).unwrap()]);
    let (agree, total) = ward_global_agreement(&cfg).unwrap();
    out.detail.push_str(&format!(
        "; info: Ward cut is also the global minimum-SSE k-partition on {agree}/{total} instances"
    ));
    out
}

fn interleaving_scan() -> Outcome {
    let cfg = OracleConfig {
        seed: SEED,
        interleave_instances: 1000,
        ..OracleConfig::default()
    };
    checks(&[check_interleaving(&cfg).unwrap()])
}

fn interleaving_banded() -> Outcome {
    let agg = interleave_aggregate(&corpus(SynthMode::Banded, 12.0, 0.5));
    let passed = agg.rows.iter().all(|r| r.mean_rho == 1.0 && r.pct_significant == 0.0);
    Outcome {
        passed,
        detail: format!(
            "{} neurons; mu_rho per cluster {:?}; pct significant {:?}",
            agg.n_neuron,
            agg.rows.iter().map(|r| r.mean_rho).collect::<Vec<_>>(),
            agg.rows.iter().map(|r| r.pct_significant).collect::<Vec<_>>()
        ),
    }
}

fn interleaving_full() -> Outcome {
    let agg = interleave_aggregate(&corpus(SynthMode::Null, 12.0, 0.5));
    let rhos: Vec<f64> = agg.rows.iter().map(|r| r.mean_rho).collect();
    Outcome {
        passed: rhos.iter().all(|r| (4.5..=5.5).contains(r)),
        detail: format!("{} neurons; mu_rho per cluster {rhos:.4?} (want all in [4.5, 5.5])", agg.n_neuron),
    }
}

fn dual_trend() -> Outcome {
    let c = corpus(SynthMode::Attentive, 4.0, 1.0);
    let td = topdown_aggregate(&c);
    let (d12, d45) = (pair(&td, "K1K2"), pair(&td, "K4K5"));
    let d15 = pair(&td, "K1K5");
    let bu = aggregate_bottomup(&bottomup_results(&c), None).unwrap();
    let cos: Vec<f64> = bu.groups.iter().map(|g| g.mean_cos).collect();
    let neg: Vec<f64> = bu.groups.iter().map(|g| g.pct_negative).collect();
    let conds = [
        d45.mean_delta > d12.mean_delta,
        d15.mean_d > d12.mean_d,
        cos.windows(2).all(|w| w[0] < w[1]),
        neg[neg.len() - 1] < neg[0],
    ];
    Outcome {
        passed: conds.iter().all(|&c| c),
        detail: format!(
            "{} eligible; mu(delta K4K5)={:.4} > mu(delta K1K2)={:.4}: {}; mu(d K1K5)={:.4} > mu(d K1K2)={:.4}: {}; \
             mu(cos G1..G4)={cos:.4?} increasing: {}; pi(d_G4<0)={:.2} < pi(d_G1<0)={:.2}: {}",
            td.n_neuron, d45.mean_delta, d12.mean_delta, conds[0], d15.mean_d, d12.mean_d, conds[1], conds[2],
            neg[neg.len() - 1], neg[0], conds[3]
        ),
    }
}

fn null_calibration() -> Outcome {
    let c = corpus(SynthMode::Null, 4.0, 1.0);
    let td = topdown_aggregate(&c);
    let cfg = RunConfig::default();
    let rise = rise_test(&bottomup_results(&c), cfg.rise_permutations, cfg.seed, None).unwrap();
    let kw_ok = (3.0..=7.0).contains(&td.pct_kw);
    Outcome {
        passed: kw_ok && !rise.passed,
        detail: format!(
            "{} eligible; pi(p_KW<.05)={:.2}% in [3, 7]: {kw_ok}; rise check fails: {} \
             (monotone={}, mean diff {:.4} vs null band [{:.4}, {:.4}])",
            td.n_neuron,
            td.pct_kw,
            !rise.passed,
            rise.monotone,
            rise.mean_diff,
            rise.band_low,
            rise.band_high
        ),
    }
}

fn cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_neurocat"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn cli_run(dir: &Path, jobs: &str) -> bool {
    let d = dir.to_str().unwrap();
    let common = ["--out-dir", d, "--deterministic", "--jobs", jobs];
    cli(&["synth", "--mode", "attentive", "--seed", "7", "--neurons", "150", "--layers", "2", "--out-dir", d, "--deterministic"])
        && cli(&[&["topdown", "--backend", "embedding"][..], &common].concat())
        && cli(&[&["interleave"][..], &common].concat())
        && cli(&[&["bottomup", "--segmentation", "quartile"][..], &common].concat())
        && cli(&[&["bottomup", "--segmentation", "hclust"][..], &common].concat())
        && cli(&["report", "--out-dir", d, "--deterministic"])
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    if !(cli_run(a.path(), "1") && cli_run(b.path(), "4")) {
        return Outcome {
            passed: false,
            detail: "a CLI step failed".into(),
        };
    }
    let mut names: Vec<String> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv") || n.ends_with(".json") || n.ends_with(".svg") || n.ends_with(".md"))
        .collect();
    names.sort();
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| std::fs::read(a.path().join(n)).ok() != std::fs::read(b.path().join(n)).ok())
        .collect();
    Outcome {
        passed: differing.is_empty() && names.iter().any(|n| n == "manifest.json"),
        detail: format!(
            "{} files compared across two runs (jobs 1 vs 4); differing: {differing:?}",
            names.len()
        ),
    }
}

/// Layer-0 reference cells for the embedding-clustering top-down table.
const FULL_SCALE_REFERENCE: [(&str, f64); 12] = [
    ("pi_pKW", 21.4612),
    ("mu_K1", 1.7117),
    ("mu_K5", 1.9485),
    ("delta_K1K2", 0.0512),
    ("delta_K4K5", 0.0955),
    ("delta_K1K5", 0.2368),
    ("d_K1K2", 0.2404),
    ("d_K4K5", 0.2785),
    ("d_K1K5", 0.8202),
    ("pi_pK1K5", 14.0183),
    ("pi_pK4K5", 1.3242),
    ("mu_K3", 1.8045),
];

fn full_scale() {
    let (Ok(n), Ok(e)) = (std::env::var("NEUROCAT_FULL_NEURONS"), std::env::var("NEUROCAT_FULL_EMBEDDINGS")) else {
        println!("SKIP full-scale layer-0 comparison: set NEUROCAT_FULL_NEURONS and NEUROCAT_FULL_EMBEDDINGS (not gated)");
        return;
    };
    let neurons = filter_layers(load_neurons(n).expect("neurons"), &[0]);
    let emb = load_embeddings(e).expect("embeddings");
    let cfg = RunConfig::default();
    let out = run_topdown(&neurons, CategoricalSource::Embedding(&emb), &cfg, None).expect("topdown");
    let agg = aggregate_topdown(&successes(&out), cfg.alpha, Some(0)).expect("aggregate");
    let header = TopDownAggregate::csv_header(agg.k());
    let row = agg.csv_row();
    for (name, reference) in FULL_SCALE_REFERENCE {
        let got: f64 = header.iter().position(|h| h == name).map_or(f64::NAN, |i| row[i].parse().unwrap());
        let rel = (got - reference).abs() / reference.abs();
        println!(
            "{} full-scale {name}: {got:.4} vs {reference} (relative deviation {:.1}%, within 15%: {}) [not gated]",
            if rel <= 0.15 { "INFO-PASS" } else { "INFO-FAIL" },
            100.0 * rel,
            rel <= 0.15
        );
    }
}

fn main() {
    // `cargo test -- <filter>` style arguments are accepted and ignored, as
    // is `--list` (reported as a single test so tooling stays happy).
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut suite = Suite { results: Vec::new() };
    let secs = Duration::from_secs;
    suite.run("statistical oracle equivalence", secs(10), statistics);
    suite.run("clustering oracle", secs(30), clustering);
    suite.run("interleaving scan oracle", secs(60), interleaving_scan);
    suite.run("interleaving banded corpus (2000 neurons)", secs(60), interleaving_banded);
    suite.run("interleaving fully interleaved corpus (2000 neurons)", secs(60), interleaving_full);
    suite.run("dual trend on attentive corpus (2000 neurons)", secs(300), dual_trend);
    suite.run("null calibration (2000 neurons)", secs(300), null_calibration);
    suite.run("determinism via CLI", secs(300), determinism);
    full_scale();

    let failed: Vec<&String> = suite.results.iter().filter(|(_, ok)| !ok).map(|(n, _)| n).collect();
    println!(
        "acceptance: {} passed, {} failed",
        suite.results.len() - failed.len(),
        failed.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
