// SPDX-License-Identifier: MIT OR Apache-2.0

//! Read-only HTTP JSON API over a loaded corpus.
//!
//! Per-neuron analyses run on demand and are memoized by
//! `(neuron, analysis, params)`. Every 200 response carries a strong `ETag`
//! derived from the corpus digest, the normalized request and the body, so
//! identical requests against the same corpus produce identical bytes and
//! validators. The prompt backend is only reachable when one was supplied
//! with [`Service::with_prompt_backend`].

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::{PathRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::header::{CACHE_CONTROL, CONTENT_TYPE, ETAG, IF_NONE_MATCH};
use axum::http::{HeaderMap, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use neurocat::bottomup::{aggregate_bottomup, analyze_neuron_bottomup, rise_test, BottomUpAggregate};
use neurocat::cluster::{CategoricalSource, ClusterBackend};
use neurocat::config::{ClusteringBackend, RunConfig, Segmentation};
use neurocat::data::{EmbeddingTable, NeuronRecord};
use neurocat::interleave::{aggregate_interleaving, analyze_neuron_interleaving, InterleaveAggregate};
use neurocat::manifest::sha256_hex;
use neurocat::pipeline::{run_bottomup, run_interleaving, run_topdown, successes};
use neurocat::topdown::{aggregate_topdown, analyze_neuron_topdown, TopDownAggregate};
use neurocat::Error;
use serde::Serialize;
use serde_json::{json, Value};
use tokio::sync::Semaphore;
use tower_http::cors::{AllowOrigin, CorsLayer};

/// Version of the response schemas served under `/api`.
pub const SCHEMA_VERSION: &str = "1";
const MAX_K: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            code: code.to_string(),
            message: message.into(),
        }
    }

    fn bad_param(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_parameter", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::BackendTransport(_) | Error::BackendFormat(_) | Error::BackendValidation(_) => {
                Self::new(StatusCode::BAD_GATEWAY, "backend_failure", message)
            }
            Error::InvalidArgument(_) => Self::bad_param(message),
            Error::Io { .. } => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message),
            _ => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "analysis_unavailable", message),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let body = serde_json::to_vec(&self).expect("error serializes");
        (status, [(CONTENT_TYPE, HeaderValue::from_static("application/json"))], body).into_response()
    }
}

impl From<PathRejection> for ApiError {
    fn from(r: PathRejection) -> Self {
        Self::bad_param(r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        Self::bad_param(r.body_text())
    }
}

/// Immutable data the service answers from.
pub struct ServiceCorpus {
    pub neurons: Vec<NeuronRecord>,
    pub embeddings: EmbeddingTable,
    /// Identity of the corpus and its precomputed results, typically the run
    /// manifest digest. Part of every validator.
    pub digest: String,
}

#[derive(Clone)]
struct Cached {
    body: Arc<Vec<u8>>,
    etag: HeaderValue,
}

struct Inner {
    neurons: Vec<NeuronRecord>,
    index: HashMap<(u32, u32), usize>,
    layers: BTreeMap<u32, usize>,
    embeddings: EmbeddingTable,
    digest: String,
    cfg: RunConfig,
    prompt: Option<Arc<dyn ClusterBackend>>,
    workers: usize,
    cache: Mutex<HashMap<String, Cached>>,
    permits: Semaphore,
}

pub struct Service {
    inner: Inner,
    cors_origin: Option<HeaderValue>,
}

impl Service {
    pub fn new(corpus: ServiceCorpus, cfg: RunConfig) -> neurocat::Result<Self> {
        cfg.validate()?;
        let mut index = HashMap::new();
        let mut layers = BTreeMap::new();
        for (i, n) in corpus.neurons.iter().enumerate() {
            index.insert((n.layer, n.index), i);
            *layers.entry(n.layer).or_insert(0) += 1;
        }
        let workers = std::thread::available_parallelism().map_or(4, |n| n.get());
        Ok(Self {
            inner: Inner {
                neurons: corpus.neurons,
                index,
                layers,
                embeddings: corpus.embeddings,
                digest: corpus.digest,
                cfg,
                prompt: None,
                workers,
                cache: Mutex::new(HashMap::new()),
                permits: Semaphore::new(workers),
            },
            cors_origin: None,
        })
    }

    /// Enables `backend=prompt`. Without this call such requests get 400.
    pub fn with_prompt_backend(mut self, backend: Arc<dyn ClusterBackend>) -> Self {
        self.inner.prompt = Some(backend);
        self
    }

    /// Bounds concurrent analysis work (and the pool used for aggregates).
    pub fn with_workers(mut self, workers: usize) -> Self {
        let workers = workers.max(1);
        self.inner.workers = workers;
        self.inner.permits = Semaphore::new(workers);
        self
    }

    /// Restricts CORS to one origin; any origin is allowed otherwise.
    pub fn with_cors_origin(mut self, origin: &str) -> neurocat::Result<Self> {
        let value = HeaderValue::from_str(origin)
            .map_err(|_| Error::InvalidArgument(format!("invalid CORS origin {origin:?}")))?;
        self.cors_origin = Some(value);
        Ok(self)
    }

    pub fn router(self) -> Router {
        let origin = match self.cors_origin {
            Some(o) => AllowOrigin::exact(o),
            None => AllowOrigin::any(),
        };
        let cors = CorsLayer::new()
            .allow_origin(origin)
            .allow_methods([Method::GET, Method::HEAD, Method::OPTIONS])
            .allow_headers([IF_NONE_MATCH])
            .expose_headers([ETAG]);
        Router::new()
            .route("/api/layers", get(layers))
            .route("/api/neurons/{layer}/{index}", get(neuron))
            .route("/api/neurons/{layer}/{index}/topdown", get(topdown))
            .route("/api/neurons/{layer}/{index}/interleaving", get(interleaving))
            .route("/api/neurons/{layer}/{index}/bottomup", get(bottomup))
            .route("/api/aggregate/{analysis}", get(aggregate))
            .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
            .layer(cors)
            .with_state(Arc::new(self.inner))
    }
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(router: Router, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router).await
}

type Shared = Arc<Inner>;
type ApiResult = Result<Response, ApiError>;

/// Query parameters consumed one by one; leftovers are rejected.
struct Params(BTreeMap<String, String>);

impl Params {
    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, ApiError> {
        match self.0.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| ApiError::bad_param(format!("invalid value {v:?} for {key}"))),
        }
    }

    fn k(&mut self, default: usize) -> Result<usize, ApiError> {
        let k = self.take("k")?.unwrap_or(default);
        if !(2..=MAX_K).contains(&k) {
            return Err(ApiError::bad_param(format!("k must be in 2..={MAX_K}, got {k}")));
        }
        Ok(k)
    }

    fn finish(self) -> Result<(), ApiError> {
        match self.0.keys().next() {
            Some(key) => Err(ApiError::bad_param(format!("unknown parameter {key:?}"))),
            None => Ok(()),
        }
    }
}

fn params(q: Result<Query<BTreeMap<String, String>>, QueryRejection>) -> Result<Params, ApiError> {
    Ok(Params(q?.0))
}

impl Inner {
    fn neuron(&self, path: Result<Path<(String, String)>, PathRejection>) -> Result<usize, ApiError> {
        let Path((layer, index)) = path?;
        let parse = |s: &str, what: &str| {
            s.parse::<u32>()
                .map_err(|_| ApiError::bad_param(format!("{what} must be a non-negative integer, got {s:?}")))
        };
        let key = (parse(&layer, "layer")?, parse(&index, "index")?);
        self.index.get(&key).copied().ok_or_else(|| {
            ApiError::new(
                StatusCode::NOT_FOUND,
                "neuron_not_found",
                format!("no neuron L{}N{} in the corpus", key.0, key.1),
            )
        })
    }

    fn source(&self, backend: ClusteringBackend) -> Result<CategoricalSource<'_>, ApiError> {
        match backend {
            ClusteringBackend::EmbeddingHclust => Ok(CategoricalSource::Embedding(&self.embeddings)),
            ClusteringBackend::Prompt => match &self.prompt {
                Some(b) => Ok(CategoricalSource::Backend(b.as_ref())),
                None => Err(ApiError::bad_param(
                    "the prompt backend is disabled; start the service with --allow-prompt-backend",
                )),
            },
        }
    }

    fn check_backend(&self, backend: ClusteringBackend) -> Result<(), ApiError> {
        self.source(backend).map(|_| ())
    }

    fn etag(&self, key: &str, body: &[u8]) -> HeaderValue {
        let mut bytes = Vec::with_capacity(self.digest.len() + key.len() + body.len() + 2);
        bytes.extend_from_slice(self.digest.as_bytes());
        bytes.push(b'\n');
        bytes.extend_from_slice(key.as_bytes());
        bytes.push(b'\n');
        bytes.extend_from_slice(body);
        HeaderValue::from_str(&format!("\"{}\"", sha256_hex(&bytes))).expect("hex is a valid header")
    }
}

fn render(entry: &Cached, headers: &HeaderMap) -> Response {
    let matches = headers
        .get_all(IF_NONE_MATCH)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(','))
        .any(|t| {
            let t = t.trim();
            t == "*" || t.as_bytes() == entry.etag.as_bytes()
        });
    let common = [
        (ETAG, entry.etag.clone()),
        (CACHE_CONTROL, HeaderValue::from_static("no-cache")),
    ];
    let schema = [("x-schema-version", HeaderValue::from_static(SCHEMA_VERSION))];
    if matches {
        return (StatusCode::NOT_MODIFIED, common, schema).into_response();
    }
    let ctype = [(CONTENT_TYPE, HeaderValue::from_static("application/json"))];
    (StatusCode::OK, common, schema, ctype, entry.body.as_ref().clone()).into_response()
}

/// Serves `key` from the cache, computing it on a blocking worker when
/// absent. Failures are not cached.
async fn respond<F>(state: Shared, key: String, headers: HeaderMap, compute: F) -> ApiResult
where
    F: FnOnce(&Inner) -> Result<Value, ApiError> + Send + 'static,
{
    let hit = state.cache.lock().unwrap_or_else(|p| p.into_inner()).get(&key).cloned();
    if let Some(entry) = hit {
        return Ok(render(&entry, &headers));
    }
    let _permit = state
        .permits
        .acquire()
        .await
        .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "shutting_down", "service is stopping"))?;
    let worker = state.clone();
    let value = tokio::task::spawn_blocking(move || compute(&worker))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let body = serde_json::to_vec(&value).expect("json value serializes");
    let entry = Cached {
        etag: state.etag(&key, &body),
        body: Arc::new(body),
    };
    state
        .cache
        .lock()
        .unwrap_or_else(|p| p.into_inner())
        .insert(key, entry.clone());
    Ok(render(&entry, &headers))
}

fn to_value<T: Serialize>(v: &T) -> Result<Value, ApiError> {
    serde_json::to_value(v).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))
}

async fn layers(State(state): State<Shared>, q: Result<Query<BTreeMap<String, String>>, QueryRejection>, headers: HeaderMap) -> ApiResult {
    params(q)?.finish()?;
    respond(state, "layers".into(), headers, |s| {
        let list: Vec<Value> = s
            .layers
            .iter()
            .map(|(l, n)| json!({"layer": l, "n_neurons": n}))
            .collect();
        Ok(Value::Array(list))
    })
    .await
}

async fn neuron(
    State(state): State<Shared>,
    path: Result<Path<(String, String)>, PathRejection>,
    q: Result<Query<BTreeMap<String, String>>, QueryRejection>,
    headers: HeaderMap,
) -> ApiResult {
    let i = state.neuron(path)?;
    params(q)?.finish()?;
    let key = format!("neuron/{}", state.neurons[i].id());
    respond(state, key, headers, move |s| to_value(&s.neurons[i])).await
}

async fn topdown(
    State(state): State<Shared>,
    path: Result<Path<(String, String)>, PathRejection>,
    q: Result<Query<BTreeMap<String, String>>, QueryRejection>,
    headers: HeaderMap,
) -> ApiResult {
    let i = state.neuron(path)?;
    let mut p = params(q)?;
    let backend = p.take("backend")?.unwrap_or(state.cfg.clustering_backend);
    let k = p.k(state.cfg.k_categorical)?;
    p.finish()?;
    state.check_backend(backend)?;
    let key = format!("topdown/{}?backend={backend}&k={k}", state.neurons[i].id());
    respond(state, key, headers, move |s| {
        let cfg = RunConfig { k_categorical: k, ..s.cfg.clone() };
        to_value(&analyze_neuron_topdown(&s.neurons[i], s.source(backend)?, &cfg)?)
    })
    .await
}

async fn interleaving(
    State(state): State<Shared>,
    path: Result<Path<(String, String)>, PathRejection>,
    q: Result<Query<BTreeMap<String, String>>, QueryRejection>,
    headers: HeaderMap,
) -> ApiResult {
    let i = state.neuron(path)?;
    let mut p = params(q)?;
    let backend = p.take("backend")?.unwrap_or(state.cfg.clustering_backend);
    let k = p.k(state.cfg.k_categorical)?;
    p.finish()?;
    state.check_backend(backend)?;
    let key = format!("interleaving/{}?backend={backend}&k={k}", state.neurons[i].id());
    respond(state, key, headers, move |s| {
        let cfg = RunConfig { k_categorical: k, ..s.cfg.clone() };
        to_value(&analyze_neuron_interleaving(&s.neurons[i], s.source(backend)?, &cfg)?)
    })
    .await
}

async fn bottomup(
    State(state): State<Shared>,
    path: Result<Path<(String, String)>, PathRejection>,
    q: Result<Query<BTreeMap<String, String>>, QueryRejection>,
    headers: HeaderMap,
) -> ApiResult {
    let i = state.neuron(path)?;
    let mut p = params(q)?;
    let seg: Segmentation = p.take("segmentation")?.unwrap_or(state.cfg.activation_segmentation);
    let k = p.k(state.cfg.k_activation)?;
    p.finish()?;
    let key = format!("bottomup/{}?segmentation={seg}&k={k}", state.neurons[i].id());
    respond(state, key, headers, move |s| {
        let cfg = RunConfig { k_activation: k, ..s.cfg.clone() };
        to_value(&analyze_neuron_bottomup(&s.neurons[i], &s.embeddings, seg, &cfg)?)
    })
    .await
}

#[derive(Serialize)]
struct AggregateBody<A: Serialize> {
    analysis: &'static str,
    layer: Option<u32>,
    params: BTreeMap<&'static str, String>,
    n_failed: usize,
    aggregate: A,
    table: Table,
    #[serde(skip_serializing_if = "Option::is_none")]
    rise: Option<Value>,
}

#[derive(Serialize)]
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

async fn aggregate(
    State(state): State<Shared>,
    Path(analysis): Path<String>,
    q: Result<Query<BTreeMap<String, String>>, QueryRejection>,
    headers: HeaderMap,
) -> ApiResult {
    let mut p = params(q)?;
    let layer: Option<u32> = p.take("layer")?;
    if let Some(l) = layer {
        if !state.layers.contains_key(&l) {
            return Err(ApiError::new(StatusCode::NOT_FOUND, "layer_not_found", format!("no layer {l} in the corpus")));
        }
    }
    let layer_key = layer.map_or_else(|| "all".to_string(), |l| l.to_string());
    match analysis.as_str() {
        "topdown" | "interleaving" => {
            let backend: ClusteringBackend = p.take("backend")?.unwrap_or(state.cfg.clustering_backend);
            let k = p.k(state.cfg.k_categorical)?;
            p.finish()?;
            state.check_backend(backend)?;
            let key = format!("aggregate/{analysis}?layer={layer_key}&backend={backend}&k={k}");
            let topdown = analysis == "topdown";
            respond(state, key, headers, move |s| {
                let cfg = RunConfig { k_categorical: k, ..s.cfg.clone() };
                let neurons = s.layer_neurons(layer);
                let source = s.source(backend)?;
                let params = BTreeMap::from([("backend", source.id()), ("k", k.to_string())]);
                if topdown {
                    let out = run_topdown(&neurons, source, &cfg, Some(s.workers))?;
                    let n_failed = out.len() - successes(&out).len();
                    let agg = aggregate_topdown(&successes(&out), cfg.alpha, layer)?;
                    let table = Table {
                        header: TopDownAggregate::csv_header(agg.k()),
                        rows: vec![agg.csv_row()],
                    };
                    to_value(&AggregateBody { analysis: "topdown", layer, params, n_failed, aggregate: agg, table, rise: None })
                } else {
                    let out = run_interleaving(&neurons, source, &cfg, Some(s.workers))?;
                    let n_failed = out.len() - successes(&out).len();
                    let agg = aggregate_interleaving(&successes(&out), cfg.alpha, layer)?;
                    let table = Table {
                        header: InterleaveAggregate::csv_header(),
                        rows: agg.csv_rows(),
                    };
                    to_value(&AggregateBody { analysis: "interleaving", layer, params, n_failed, aggregate: agg, table, rise: None })
                }
            })
            .await
        }
        "bottomup" => {
            let seg: Segmentation = p.take("segmentation")?.unwrap_or(state.cfg.activation_segmentation);
            let k = p.k(state.cfg.k_activation)?;
            p.finish()?;
            let key = format!("aggregate/bottomup?layer={layer_key}&segmentation={seg}&k={k}");
            respond(state, key, headers, move |s| {
                let cfg = RunConfig { k_activation: k, ..s.cfg.clone() };
                let neurons = s.layer_neurons(layer);
                let out = run_bottomup(&neurons, &s.embeddings, seg, &cfg, Some(s.workers))?;
                let ok = successes(&out);
                let agg = aggregate_bottomup(&ok, layer)?;
                let rise = rise_test(&ok, cfg.rise_permutations, cfg.seed, layer).ok();
                let table = Table {
                    header: BottomUpAggregate::csv_header(),
                    rows: agg.csv_rows(),
                };
                let params = BTreeMap::from([("segmentation", seg.to_string()), ("k", k.to_string())]);
                to_value(&AggregateBody {
                    analysis: "bottomup",
                    layer,
                    params,
                    n_failed: out.len() - ok.len(),
                    aggregate: agg,
                    table,
                    rise: rise.as_ref().map(to_value).transpose()?,
                })
            })
            .await
        }
        other => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_analysis",
            format!("unknown analysis {other:?}; expected topdown, interleaving or bottomup"),
        )),
    }
}

impl Inner {
    fn layer_neurons(&self, layer: Option<u32>) -> Vec<NeuronRecord> {
        self.neurons
            .iter()
            .filter(|n| layer.is_none_or(|l| n.layer == l))
            .cloned()
            .collect()
    }
}
