// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use neurocat::bottomup::{aggregate_bottomup, rise_test, BottomUpAggregate, RiseTest};
use neurocat::cluster::{CategoricalSource, ClusterBackend, StubBackend};
use neurocat::config::RunConfig;
use neurocat::data::{join_coverage, load_embeddings, load_neurons, EmbeddingTable, NeuronRecord};
use neurocat::interleave::{aggregate_interleaving, InterleaveAggregate};
use neurocat::manifest::{sha256_hex, FileDigest, RunManifest, Stage};
use neurocat::oracle::{oracle_suite, OracleConfig};
use neurocat::pipeline::{by_layer, failures, filter_layers, run_bottomup, run_interleaving, run_topdown, successes, NeuronOutcome};
use neurocat::report::Table;
use neurocat::synth::{generate, SynthSpec, EMBEDDINGS_FILE, NEURONS_FILE, TRUTH_FILE};
use neurocat::topdown::{aggregate_topdown, TopDownAggregate};
use neurocat_prompt::{EndpointConfig, RemoteBackend};
use neurocat_service::{Service, ServiceCorpus};
use serde_json::json;

use crate::{
    render, BackendArg, BottomUpArgs, CategoricalArgs, Command, Inputs, OracleArgs, ReportArgs, ServeArgs,
    SynthArgs, ValidateArgs, EXIT_RUNTIME, EXIT_VALIDATION,
};

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<neurocat::Error> for CliError {
    fn from(e: neurocat::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::Validate(a) => validate(a),
        Command::Topdown(a) => topdown(a),
        Command::Interleave(a) => interleave(a),
        Command::Bottomup(a) => bottomup(a),
        Command::Synth(a) => synth(a),
        Command::Oracle(a) => oracle(a),
        Command::Report(a) => report(a),
        Command::Serve(a) => serve(a),
    }
}

fn load_config(inputs: &Inputs) -> CliResult<RunConfig> {
    let mut cfg = match &inputs.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for kv in &inputs.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())
            .map_err(|e| CliError::Validation(format!("--set {kv}: {e}")))?;
    }
    if let Some(seed) = inputs.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(cfg)
}

fn neurons_path(inputs: &Inputs) -> PathBuf {
    inputs.neurons.clone().unwrap_or_else(|| inputs.out_dir.join(NEURONS_FILE))
}

fn embeddings_path(inputs: &Inputs) -> PathBuf {
    inputs.embeddings.clone().unwrap_or_else(|| inputs.out_dir.join(EMBEDDINGS_FILE))
}

/// Input digest recorded by file name only, so runs from different
/// directories over the same files agree.
fn input_digest(role: &str, path: &Path) -> CliResult<FileDigest> {
    let mut d = FileDigest::of(role, path)?;
    d.path = file_name(path);
    Ok(d)
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// Loaded corpus and the context shared by the analysis subcommands.
struct Context {
    cfg: RunConfig,
    neurons: Vec<NeuronRecord>,
    embeddings: Option<Arc<EmbeddingTable>>,
    inputs: Vec<FileDigest>,
    out_dir: PathBuf,
    jobs: Option<usize>,
    layers: Vec<u32>,
    deterministic: bool,
}

impl Context {
    fn load(inputs: &Inputs, need_embeddings: bool) -> CliResult<Self> {
        let cfg = load_config(inputs)?;
        let npath = neurons_path(inputs);
        let all = load_neurons(&npath)?;
        let neurons = filter_layers(all, &inputs.layer);
        if neurons.is_empty() {
            return Err(CliError::Validation(format!("no neurons in {} for the selected layers", npath.display())));
        }
        let mut digests = vec![input_digest("neurons", &npath)?];
        let embeddings = if need_embeddings {
            let epath = embeddings_path(inputs);
            let table = load_embeddings(&epath)?;
            digests.push(input_digest("embeddings", &epath)?);
            Some(Arc::new(table))
        } else {
            None
        };
        if let Some(c) = &inputs.config {
            digests.push(input_digest("config", c)?);
        }
        std::fs::create_dir_all(&inputs.out_dir)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", inputs.out_dir.display())))?;
        Ok(Self {
            cfg,
            neurons,
            embeddings,
            inputs: digests,
            out_dir: inputs.out_dir.clone(),
            jobs: inputs.jobs,
            layers: inputs.layer.clone(),
            deterministic: inputs.deterministic,
        })
    }

    fn embeddings(&self) -> &EmbeddingTable {
        self.embeddings.as_deref().expect("embeddings loaded")
    }

    fn layer_param(&self) -> String {
        if self.layers.is_empty() {
            "all".into()
        } else {
            self.layers.iter().map(u32::to_string).collect::<Vec<_>>().join(",")
        }
    }

    fn stage(&self, params: BTreeMap<String, String>, counts: BTreeMap<String, usize>, start: Instant) -> Stage {
        Stage {
            config: Some(self.cfg.clone()),
            params,
            inputs: self.inputs.clone(),
            outputs: Vec::new(),
            counts,
            elapsed_ms: (!self.deterministic).then(|| start.elapsed().as_millis() as u64),
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    std::fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn jsonl<T: serde::Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("result serializes");
        out.push(b'\n');
    }
    out
}

fn errors_jsonl<T>(outcomes: &[NeuronOutcome<T>]) -> Vec<u8> {
    let rows: Vec<_> = failures(outcomes)
        .into_iter()
        .map(|(id, e)| json!({"layer": id.layer, "neuron": id.index, "error": e}))
        .collect();
    jsonl(&rows)
}

/// Writes `{stage}_<suffix>` files, then upserts the stage in the manifest
/// with their digests.
fn finish_stage(ctx: &Context, name: &str, mut stage: Stage, files: Vec<(&str, Vec<u8>)>) -> CliResult {
    for (suffix, bytes) in files {
        let fname = format!("{name}_{suffix}");
        let path = ctx.out_dir.join(&fname);
        write_file(&path, &bytes)?;
        stage.outputs.push(FileDigest {
            role: suffix.trim_end_matches(".csv").trim_end_matches(".jsonl").to_string(),
            path: fname,
            sha256: sha256_hex(&bytes),
        });
    }
    let mut manifest = RunManifest::load_or_new(&ctx.out_dir)?;
    manifest.set_stage(name, stage);
    manifest.write(&ctx.out_dir)?;
    info!("{name}: manifest digest {}", manifest.digest);
    Ok(())
}

fn outcome_counts<T>(outcomes: &[NeuronOutcome<T>]) -> BTreeMap<String, usize> {
    let failed = outcomes.iter().filter(|o| o.result.is_err()).count();
    for (id, e) in failures(outcomes).into_iter().take(5) {
        warn!("{id}: {e}");
    }
    BTreeMap::from([
        ("neurons".to_string(), outcomes.len()),
        ("succeeded".to_string(), outcomes.len() - failed),
        ("failed".to_string(), failed),
    ])
}

/// Per-layer rows, then an `all` row when several layers are present.
fn aggregate_rows<T: Clone, A>(
    outcomes: &[NeuronOutcome<T>],
    aggregate: impl Fn(&[T], Option<u32>) -> neurocat::Result<A>,
    rows: impl Fn(&A) -> Vec<Vec<String>>,
) -> Vec<Vec<String>> {
    let layers = by_layer(outcomes);
    let mut out = Vec::new();
    let mut push = |results: &[T], layer: Option<u32>| match aggregate(results, layer) {
        Ok(a) => out.extend(rows(&a)),
        Err(e) => warn!("layer {}: not aggregated: {e}", layer.map_or("all".to_string(), |l| l.to_string())),
    };
    for (l, results) in &layers {
        push(results, Some(*l));
    }
    if layers.len() > 1 {
        push(&successes(outcomes), None);
    }
    out
}

fn table_bytes(header: Vec<String>, rows: Vec<Vec<String>>) -> Vec<u8> {
    let mut t = Table::new(header);
    for r in rows {
        t.push(r);
    }
    t.to_csv().into_bytes()
}

enum Backend {
    None,
    Owned(Box<dyn ClusterBackend>),
}

fn make_backend(kind: BackendArg, ctx: &Context) -> Backend {
    match kind {
        BackendArg::Embedding => Backend::None,
        BackendArg::Stub => Backend::Owned(Box::new(StubBackend::new(
            ctx.embeddings.clone().expect("embeddings loaded"),
            ctx.cfg.seed,
        ))),
        BackendArg::Prompt => Backend::Owned(Box::new(RemoteBackend::new(EndpointConfig::from_env()))),
    }
}

fn source<'a>(backend: &'a Backend, ctx: &'a Context) -> CategoricalSource<'a> {
    match backend {
        Backend::None => CategoricalSource::Embedding(ctx.embeddings()),
        Backend::Owned(b) => CategoricalSource::Backend(b.as_ref()),
    }
}

fn categorical_params(ctx: &Context, src: &CategoricalSource<'_>, kind: BackendArg) -> BTreeMap<String, String> {
    let mut p = BTreeMap::from([
        ("backend".to_string(), src.id()),
        ("layers".to_string(), ctx.layer_param()),
    ]);
    if kind != BackendArg::Embedding {
        p.insert("prompt_template".into(), ctx.cfg.prompt_template.clone());
    }
    p
}

fn topdown(args: CategoricalArgs) -> CliResult {
    let ctx = Context::load(&args.inputs, args.backend != BackendArg::Prompt)?;
    let backend = make_backend(args.backend, &ctx);
    let src = source(&backend, &ctx);
    let start = Instant::now();
    let outcomes = run_topdown(&ctx.neurons, src, &ctx.cfg, ctx.jobs)?;
    let alpha = ctx.cfg.alpha;
    let rows = aggregate_rows(&outcomes, |r, l| aggregate_topdown(r, alpha, l), |a| vec![a.csv_row()]);
    let ok = successes(&outcomes);
    let mut counts = outcome_counts(&outcomes);
    counts.insert("eligible".into(), ok.iter().filter(|r| r.eligible).count());
    let name = format!("topdown_{}", args.backend.name());
    let stage = ctx.stage(categorical_params(&ctx, &src, args.backend), counts, start);
    let empty = rows.is_empty();
    finish_stage(
        &ctx,
        &name,
        stage,
        vec![
            ("neurons.jsonl", jsonl(&ok)),
            ("errors.jsonl", errors_jsonl(&outcomes)),
            ("aggregate.csv", table_bytes(TopDownAggregate::csv_header(ctx.cfg.k_categorical), rows)),
        ],
    )?;
    if empty {
        return Err(CliError::Runtime("no layer had eligible neurons to aggregate".into()));
    }
    println!("{}", ctx.out_dir.join(format!("{name}_aggregate.csv")).display());
    Ok(())
}

fn interleave(args: CategoricalArgs) -> CliResult {
    let ctx = Context::load(&args.inputs, args.backend != BackendArg::Prompt)?;
    let backend = make_backend(args.backend, &ctx);
    let src = source(&backend, &ctx);
    let start = Instant::now();
    let outcomes = run_interleaving(&ctx.neurons, src, &ctx.cfg, ctx.jobs)?;
    let alpha = ctx.cfg.alpha;
    let rows = aggregate_rows(&outcomes, |r, l| aggregate_interleaving(r, alpha, l), InterleaveAggregate::csv_rows);
    let ok = successes(&outcomes);
    let mut counts = outcome_counts(&outcomes);
    counts.insert("complete".into(), ok.iter().filter(|r| r.complete).count());
    let name = format!("interleave_{}", args.backend.name());
    let stage = ctx.stage(categorical_params(&ctx, &src, args.backend), counts, start);
    let empty = rows.is_empty();
    finish_stage(
        &ctx,
        &name,
        stage,
        vec![
            ("neurons.jsonl", jsonl(&ok)),
            ("errors.jsonl", errors_jsonl(&outcomes)),
            ("aggregate.csv", table_bytes(InterleaveAggregate::csv_header(), rows)),
        ],
    )?;
    if empty {
        return Err(CliError::Runtime("no layer had complete neurons to aggregate".into()));
    }
    println!("{}", ctx.out_dir.join(format!("{name}_aggregate.csv")).display());
    Ok(())
}

fn bottomup(args: BottomUpArgs) -> CliResult {
    let ctx = Context::load(&args.inputs, true)?;
    let seg = args.segmentation.unwrap_or(ctx.cfg.activation_segmentation);
    let start = Instant::now();
    let outcomes = run_bottomup(&ctx.neurons, ctx.embeddings(), seg, &ctx.cfg, ctx.jobs)?;
    let rows = aggregate_rows(&outcomes, aggregate_bottomup, BottomUpAggregate::csv_rows);
    let (perms, seed) = (ctx.cfg.rise_permutations, ctx.cfg.seed);
    let rise_rows = aggregate_rows(&outcomes, |r, l| rise_test(r, perms, seed, l), |t| vec![t.csv_row()]);
    let ok = successes(&outcomes);
    let mut counts = outcome_counts(&outcomes);
    counts.insert("partial".into(), ok.iter().filter(|r| r.partial()).count());
    let params = BTreeMap::from([
        ("segmentation".to_string(), seg.to_string()),
        ("layers".to_string(), ctx.layer_param()),
    ]);
    let name = format!("bottomup_{seg}");
    let stage = ctx.stage(params, counts, start);
    let empty = rows.is_empty();
    finish_stage(
        &ctx,
        &name,
        stage,
        vec![
            ("neurons.jsonl", jsonl(&ok)),
            ("errors.jsonl", errors_jsonl(&outcomes)),
            ("aggregate.csv", table_bytes(BottomUpAggregate::csv_header(), rows)),
            ("rise.csv", table_bytes(RiseTest::csv_header(), rise_rows)),
        ],
    )?;
    if empty {
        return Err(CliError::Runtime("no layer had scored neurons to aggregate".into()));
    }
    println!("{}", ctx.out_dir.join(format!("{name}_aggregate.csv")).display());
    Ok(())
}

fn validate(args: ValidateArgs) -> CliResult {
    let inputs = &args.inputs;
    if inputs.config.is_some() || !inputs.overrides.is_empty() {
        load_config(inputs)?;
    }
    let npath = neurons_path(inputs);
    let neurons = load_neurons(&npath)?;
    let layers = by_layer_counts(&neurons);
    println!("{}: {} neurons in {} layers", npath.display(), neurons.len(), layers.len());
    for (l, n) in &layers {
        println!("  layer {l}: {n} neurons");
    }
    let epath = embeddings_path(inputs);
    if inputs.embeddings.is_none() && !epath.exists() {
        println!("no embeddings file checked");
        return Ok(());
    }
    let emb = load_embeddings(&epath)?;
    println!("{}: {} tokens, dimension {}", epath.display(), emb.len(), emb.dim());
    let coverage = join_coverage(&neurons, &emb);
    let incomplete = coverage.neurons.iter().filter(|c| !c.missing.is_empty()).count();
    println!(
        "coverage: {} core-tokens without embedding across {incomplete} neurons",
        coverage.total_missing()
    );
    for c in coverage.neurons.iter().filter(|c| !c.missing.is_empty()).take(10) {
        println!("  {}: {}/{} present, missing {:?}", c.neuron, c.present, c.total, c.missing.iter().take(5).collect::<Vec<_>>());
    }
    Ok(())
}

fn by_layer_counts(neurons: &[NeuronRecord]) -> BTreeMap<u32, usize> {
    let mut m = BTreeMap::new();
    for n in neurons {
        *m.entry(n.layer).or_insert(0) += 1;
    }
    m
}

fn synth(args: SynthArgs) -> CliResult {
    let spec = SynthSpec {
        n_neurons: args.neurons,
        n_layers: args.layers,
        tokens_per_neuron: args.tokens,
        emb_dim: args.emb_dim,
        n_blobs: args.blobs,
        blob_spread: args.blob_spread,
        blob_separation: args.blob_separation,
        mode: args.mode,
        activation_base: args.activation_base,
        activation_sd: args.activation_sd,
        activation_offset: args.activation_offset,
        attentive_pull: args.attentive_pull,
        seed: args.seed,
    };
    spec.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    let start = Instant::now();
    let corpus = generate(&spec)?;
    corpus.write_to(&args.out_dir)?;
    let params = match serde_json::to_value(&spec).expect("spec serializes") {
        serde_json::Value::Object(m) => m
            .into_iter()
            .map(|(k, v)| (k, v.as_str().map_or_else(|| v.to_string(), String::from)))
            .collect(),
        _ => BTreeMap::new(),
    };
    let mut outputs = Vec::new();
    for (role, f) in [("neurons", NEURONS_FILE), ("embeddings", EMBEDDINGS_FILE), ("truth", TRUTH_FILE)] {
        outputs.push(input_digest(role, &args.out_dir.join(f))?);
    }
    let stage = Stage {
        config: None,
        params,
        inputs: Vec::new(),
        outputs,
        counts: BTreeMap::from([
            ("neurons".to_string(), corpus.neurons.len()),
            ("embeddings".to_string(), corpus.embeddings.len()),
        ]),
        elapsed_ms: (!args.deterministic).then(|| start.elapsed().as_millis() as u64),
    };
    let mut manifest = RunManifest::load_or_new(&args.out_dir)?;
    manifest.set_stage("synth", stage);
    manifest.write(&args.out_dir)?;
    println!(
        "{}: {} neurons, {} embeddings ({} mode, seed {})",
        args.out_dir.display(),
        corpus.neurons.len(),
        corpus.embeddings.len(),
        spec.mode,
        spec.seed
    );
    Ok(())
}

fn oracle(args: OracleArgs) -> CliResult {
    let mut cfg = OracleConfig {
        seed: args.seed,
        ..OracleConfig::default()
    };
    if args.quick {
        cfg.kw_instances = 20;
        cfg.kw_permutations = 5_000;
        cfg.ward_instances = 40;
        cfg.contiguity_instances = 100;
        cfg.cosine_instances = 20;
        cfg.interleave_instances = 200;
    }
    let report = oracle_suite(&cfg)?;
    print!("{}", report.render());
    std::io::stdout().flush().ok();
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Validation("oracle checks failed".into()))
    }
}

fn report(args: ReportArgs) -> CliResult {
    let start = Instant::now();
    let manifest = RunManifest::load_or_new(&args.out_dir)?;
    if manifest.stages.keys().all(|k| k == "report" || k == "synth") {
        return Err(CliError::Validation(format!(
            "{} has no analysis stages in its manifest; run topdown, interleave or bottomup first",
            args.out_dir.display()
        )));
    }
    let written = render::render_dir(&args.out_dir, &manifest.digest, args.deterministic)?;
    let mut stage = Stage {
        elapsed_ms: (!args.deterministic).then(|| start.elapsed().as_millis() as u64),
        ..Stage::default()
    };
    for (role, path) in &written {
        let mut d = FileDigest::of(role, path)?;
        d.path = file_name(path);
        stage.outputs.push(d);
        println!("{}", path.display());
    }
    let mut manifest = manifest;
    manifest.set_stage("report", stage);
    manifest.write(&args.out_dir)?;
    Ok(())
}

fn serve(args: ServeArgs) -> CliResult {
    let ctx = Context::load(&args.inputs, true)?;
    let addr: SocketAddr = format!("{}:{}", args.bind, args.port)
        .parse()
        .map_err(|e| CliError::Validation(format!("bad --bind/--port: {e}")))?;
    let manifest = RunManifest::load_or_new(&ctx.out_dir)?;
    let digest = if manifest.digest.is_empty() {
        let joined: Vec<String> = ctx.inputs.iter().map(|d| d.sha256.clone()).collect();
        sha256_hex(joined.join("\n").as_bytes())
    } else {
        manifest.digest.clone()
    };
    let prompt: Option<Arc<dyn ClusterBackend>> = match (args.allow_prompt_backend, args.prompt_stub) {
        (false, _) => None,
        (true, true) => Some(Arc::new(StubBackend::new(ctx.embeddings.clone().expect("loaded"), ctx.cfg.seed))),
        (true, false) => Some(Arc::new(RemoteBackend::new(EndpointConfig::from_env()))),
    };
    let embeddings = Arc::try_unwrap(ctx.embeddings.clone().expect("loaded")).unwrap_or_else(|a| (*a).clone());
    let corpus = ServiceCorpus {
        neurons: ctx.neurons.clone(),
        embeddings,
        digest,
    };
    let mut service = Service::new(corpus, ctx.cfg.clone())?;
    if let Some(jobs) = ctx.jobs {
        service = service.with_workers(jobs);
    }
    if let Some(b) = prompt {
        service = service.with_prompt_backend(b);
    }
    if let Some(origin) = &args.cors_origin {
        service = service.with_cors_origin(origin).map_err(|e| CliError::Validation(e.to_string()))?;
    }
    let router = service.router();
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    eprintln!("serving {} neurons on http://{addr}/api", ctx.neurons.len());
    runtime
        .block_on(neurocat_service::serve(router, addr))
        .map_err(|e| CliError::Runtime(format!("serve on {addr}: {e}")))
}
