// SPDX-License-Identifier: MIT OR Apache-2.0

//! `neurocat`: validate neuron corpora, run the categorical and activation
//! analyses, render reports and serve results over HTTP.
//!
//! Exit status: 0 success, 1 validation failure, 2 runtime error, 64 usage
//! error (unknown flag or bad value).

mod commands;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use neurocat::config::Segmentation;
use neurocat::synth::SynthMode;

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;
pub const EXIT_USAGE: u8 = 64;

const AFTER_HELP: &str = "\
Configuration files hold `key=value` lines (alpha, k_categorical, k_activation,
min_cluster_size, quantile_method, seed, clustering_backend,
activation_segmentation, lilliefors_replicates, rise_permutations,
prompt_template). `--set key=value` overrides single keys.

The prompt backend posts to `$NEUROCAT_PROMPT_URL/chat/completions`
(default https://api.openai.com/v1) with model `$NEUROCAT_PROMPT_MODEL`.
The bearer token is read from `$NEUROCAT_API_KEY`, or from the variable
named by `$NEUROCAT_PROMPT_KEY_ENV`.

Exit status: 0 success, 1 validation failure, 2 runtime error, 64 usage error.";

#[derive(Parser, Debug)]
#[command(name = "neurocat", version, about = "Neuron activation analyses: categorical clusters, interleaving and activation-segment semantics", after_help = AFTER_HELP)]
pub struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn", env = "NEUROCAT_LOG")]
    pub log: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check neuron and embedding files and report embedding coverage.
    Validate(ValidateArgs),
    /// Categorical clusters: Kruskal-Wallis, Dunn post-hoc and effect sizes.
    Topdown(CategoricalArgs),
    /// Activation-span overlap between categorical clusters.
    Interleave(CategoricalArgs),
    /// Activation segments: within-group semantic similarity.
    Bottomup(BottomUpArgs),
    /// Generate a seeded synthetic corpus with planted structure.
    Synth(SynthArgs),
    /// Run the statistical and clustering oracle suite.
    Oracle(OracleArgs),
    /// Render Markdown tables and SVG charts from the aggregate CSVs.
    Report(ReportArgs),
    /// Serve the corpus and on-demand analyses as a read-only JSON API.
    Serve(ServeArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Inputs {
    /// Neuron records, one JSON object per line [default: <out-dir>/neurons.jsonl].
    #[arg(long)]
    pub neurons: Option<PathBuf>,
    /// Token embeddings, one JSON object per line [default: <out-dir>/embeddings.jsonl].
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Run configuration file (key=value lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory; also where default inputs are looked up.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Restrict to these layers (repeatable or comma separated).
    #[arg(long, value_delimiter = ',')]
    pub layer: Vec<u32>,
    /// Worker threads [default: available parallelism].
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Seed for stochastic steps; overrides the config value.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Omit wall-clock timings and timestamps from outputs.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub inputs: Inputs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum BackendArg {
    /// Ward clustering of standardized token embeddings.
    Embedding,
    /// Remote chat-completions model.
    Prompt,
    /// Offline k-medoids stand-in for the prompt backend.
    Stub,
}

impl BackendArg {
    pub fn name(self) -> &'static str {
        match self {
            BackendArg::Embedding => "embedding",
            BackendArg::Prompt => "prompt",
            BackendArg::Stub => "stub",
        }
    }
}

#[derive(Args, Debug)]
pub struct CategoricalArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    /// Categorical clustering backend.
    #[arg(long, value_enum, default_value = "embedding")]
    pub backend: BackendArg,
}

#[derive(Args, Debug)]
pub struct BottomUpArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    /// Activation segmentation [default: from config, quartile].
    #[arg(long, value_parser = parse_segmentation)]
    pub segmentation: Option<Segmentation>,
}

fn parse_segmentation(s: &str) -> Result<Segmentation, String> {
    s.parse().map_err(|e: neurocat::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<SynthMode, String> {
    s.parse().map_err(|e: neurocat::Error| e.to_string())
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory for neurons.jsonl, embeddings.jsonl and truth.jsonl.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// null, attentive or banded.
    #[arg(long, value_parser = parse_mode, default_value = "null")]
    pub mode: SynthMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Neurons per layer.
    #[arg(long, default_value_t = 100)]
    pub neurons: usize,
    #[arg(long, default_value_t = 1)]
    pub layers: u32,
    #[arg(long, default_value_t = 100)]
    pub tokens: usize,
    #[arg(long, default_value_t = 16)]
    pub emb_dim: usize,
    #[arg(long, default_value_t = 5)]
    pub blobs: usize,
    #[arg(long, default_value_t = 1.0)]
    pub blob_spread: f64,
    #[arg(long, default_value_t = 4.0)]
    pub blob_separation: f64,
    #[arg(long, default_value_t = 2.0)]
    pub activation_base: f64,
    #[arg(long, default_value_t = 1.0)]
    pub activation_sd: f64,
    #[arg(long, default_value_t = 3.0)]
    pub activation_offset: f64,
    #[arg(long, default_value_t = 0.6)]
    pub attentive_pull: f64,
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fewer instances per check, for a fast smoke run.
    #[arg(long)]
    pub quick: bool,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Directory holding the aggregate CSVs and manifest.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Omit the timestamp comment from SVGs and timings from the manifest.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Allow on-demand calls to the remote prompt backend.
    #[arg(long)]
    pub allow_prompt_backend: bool,
    /// Answer backend=prompt with the offline stub instead of a remote model.
    #[arg(long, requires = "allow_prompt_backend")]
    pub prompt_stub: bool,
    /// Only this origin may read responses cross-origin [default: any].
    #[arg(long)]
    pub cors_origin: Option<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).init();
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
