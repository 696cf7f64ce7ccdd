// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::Path;
use std::process::{Command, Output};

fn neurocat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neurocat")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn synth(dir: &Path, mode: &str) {
    let o = neurocat(&["synth", "--mode", mode, "--seed", "7", "--neurons", "40", "--out-dir", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn topdown_aggregate_header_contract() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "attentive");
    let o = neurocat(&["topdown", "--backend", "embedding", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("topdown_embedding_aggregate.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("layer,n_neuron,mu_K1,"), "{header}");
    assert!(header.ends_with(",pi_pK1K5"), "{header}");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    let stage = &manifest["stages"]["topdown_embedding"];
    assert_eq!(stage["counts"]["neurons"], 40);
    assert!(stage["elapsed_ms"].is_u64());
    assert!(stage["params"]["backend"].as_str().unwrap().starts_with("embedding_hclust"));
    let outputs: Vec<&str> = stage["outputs"].as_array().unwrap().iter().map(|o| o["path"].as_str().unwrap()).collect();
    assert!(outputs.contains(&"topdown_embedding_aggregate.csv"));
}

#[test]
fn validate_reports_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let good = r#"{"layer":0,"neuron":0,"core_tokens":[{"t":"a","a":1.0},{"t":"b","a":0.5}]}"#;
    let nan = r#"{"layer":0,"neuron":1,"core_tokens":[{"t":"a","a":NaN}]}"#;
    let path = dir.path().join("n.jsonl");
    std::fs::write(&path, format!("{good}\n{nan}\n")).unwrap();
    let o = neurocat(&["validate", "--neurons", path.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    std::fs::write(&path, format!("{good}\n")).unwrap();
    let o = neurocat(&["validate", "--neurons", path.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
}

#[test]
fn exit_codes() {
    assert_eq!(code(&neurocat(&["topdown", "--bogus"])), 64);
    assert_eq!(code(&neurocat(&["frobnicate"])), 64);
    assert_eq!(code(&neurocat(&["bottomup", "--segmentation", "deciles"])), 64);
    assert_eq!(code(&neurocat(&["--help"])), 0);
    let dir = tempfile::tempdir().unwrap();
    // Missing input file: runtime error.
    assert_eq!(code(&neurocat(&["topdown", "--out-dir", dir.path().to_str().unwrap()])), 2);
    // Bad config override: validation failure.
    synth(dir.path(), "null");
    let d = dir.path().to_str().unwrap();
    assert_eq!(code(&neurocat(&["topdown", "--out-dir", d, "--set", "alpha=2"])), 1);
    assert_eq!(code(&neurocat(&["topdown", "--out-dir", d, "--set", "colour=red"])), 1);
    // Report before any analysis.
    assert_eq!(code(&neurocat(&["report", "--out-dir", d])), 1);
}

#[test]
fn config_file_and_layer_filter() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = neurocat(&["synth", "--mode", "attentive", "--neurons", "30", "--layers", "3", "--out-dir", d]);
    assert_eq!(code(&o), 0);
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# test\nk_activation = 3\nrise_permutations=200\n").unwrap();
    let o = neurocat(&["bottomup", "--out-dir", d, "--config", cfg.to_str().unwrap(), "--layer", "0,2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("bottomup_quartile_aggregate.csv")).unwrap();
    let layers: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(layers, ["0", "0", "0", "2", "2", "2", "all", "all", "all"]);
    assert!(!csv.contains("G4"));
}

#[test]
fn stub_backend_and_report() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "attentive");
    let d = dir.path().to_str().unwrap();
    assert_eq!(code(&neurocat(&["interleave", "--backend", "stub", "--out-dir", d])), 0);
    let o = neurocat(&["report", "--out-dir", d]);
    assert_eq!(code(&o), 0);
    let svg = std::fs::read_to_string(dir.path().join("interleave_stub_aggregate_rho.svg")).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert!(svg.contains(manifest["digest"].as_str().unwrap()));
    assert!(svg.contains("generated"), "non-deterministic SVGs carry a timestamp");
    let roles: Vec<&str> = manifest["stages"]["report"]["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o["role"].as_str().unwrap())
        .collect();
    assert!(roles.contains(&"svg") && roles.contains(&"markdown"));
}

#[test]
fn oracle_quick_passes() {
    let o = neurocat(&["oracle", "--quick"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 7);
}
