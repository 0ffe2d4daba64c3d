//! HTTP search service over loaded artifacts.
//!
//! Routes: `POST /search`, `GET /conditions`, `GET /health`, `GET /models`
//! and, when enabled, `POST /reload`. Every error body is
//! `{"error": {"code": ..., "message": ...}}`.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use echo_cohort::catalog::ConditionCatalog;
use echo_cohort::cohort::{relevant_for, resolve_query};
use echo_cohort::corpus::{Corpus, PassageId};
use echo_cohort::dense::{DenseEncoder, DenseIndex};
use echo_cohort::quantity::{grammar_source, mention_pattern, parse_quantity_query, MatchSemantics};
use echo_cohort::store::{load_index, load_params, IndexArtifact};
use echo_cohort::train::trainer::Variant;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Semaphore;

use crate::home::Home;

pub const MAX_K: usize = 1000;

/// A dense retriever indexed over the whole corpus.
pub struct DenseModel {
    pub encoder: DenseEncoder,
    pub index: DenseIndex,
}

/// Immutable artifacts behind one generation of the service.
pub struct Loaded {
    pub catalog: ConditionCatalog,
    pub corpus: Corpus,
    pub artifact: IndexArtifact,
    pub dense: BTreeMap<String, DenseModel>,
    universe: BTreeSet<PassageId>,
}

impl Loaded {
    pub fn new(catalog: ConditionCatalog, corpus: Corpus, artifact: IndexArtifact, encoders: BTreeMap<String, DenseEncoder>) -> anyhow::Result<Self> {
        artifact.check_against(&catalog, &corpus)?;
        let dense = encoders
            .into_iter()
            .map(|(name, encoder)| {
                let index = encoder.index(corpus.passages());
                (name, DenseModel { encoder, index })
            })
            .collect();
        let universe = corpus.passage_ids();
        Ok(Self {
            catalog,
            corpus,
            artifact,
            dense,
            universe,
        })
    }

    /// Reads corpus, index and whichever trained params exist under `home`.
    pub fn from_home(home: &Home) -> anyhow::Result<Self> {
        let catalog = home.load_catalog(None)?;
        let corpus = Corpus::load(home.corpus())?;
        let artifact = load_index(home.index())?;
        let mut encoders = BTreeMap::new();
        for v in Variant::ALL {
            let path = home.params(v);
            if path.exists() {
                let p = load_params(&path)?;
                encoders.insert(format!("dense:{v}"), DenseEncoder::new(p.vocab, p.params, p.config)?);
            }
        }
        Self::new(catalog, corpus, artifact, encoders)
    }

    pub fn retrievers(&self) -> Vec<String> {
        let mut out = vec!["bm25".to_string(), "quantity".to_string()];
        out.extend(self.dense.keys().cloned());
        out
    }
}

pub struct AppState {
    current: RwLock<Arc<Loaded>>,
    permits: Semaphore,
    reload_from: Option<Home>,
}

pub type SharedState = Arc<AppState>;

impl AppState {
    pub fn new(loaded: Loaded, max_concurrent: usize, reload_from: Option<Home>) -> SharedState {
        Arc::new(Self {
            current: RwLock::new(Arc::new(loaded)),
            permits: Semaphore::new(max_concurrent.max(1)),
            reload_from,
        })
    }

    pub fn snapshot(&self) -> Arc<Loaded> {
        self.current.read().expect("state lock").clone()
    }

    /// Takes one search slot, or `None` when the service is saturated.
    pub fn try_reserve(&self) -> Option<tokio::sync::SemaphorePermit<'_>> {
        self.permits.try_acquire().ok()
    }

    fn swap(&self, next: Loaded) {
        *self.current.write().expect("state lock") = Arc::new(next);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRequest {
    pub query: String,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_retriever")]
    pub retriever: String,
    #[serde(default)]
    pub include_judgments: bool,
}

fn default_k() -> usize {
    10
}

fn default_retriever() -> String {
    "bm25".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LvefMentionOut {
    pub lo: f64,
    pub hi: f64,
    pub raw_span: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub passage_id: PassageId,
    pub score: f64,
    pub text: String,
    pub matched_subcategories: Vec<String>,
    pub lvef_mentions: Vec<LvefMentionOut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub results: Vec<SearchResult>,
    pub timing_ms: f64,
    pub retriever: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Json(json!({"error": {"code": self.code, "message": self.message}}));
        let mut resp = (self.status, body).into_response();
        if self.status == StatusCode::SERVICE_UNAVAILABLE {
            resp.headers_mut().insert(header::RETRY_AFTER, HeaderValue::from_static("1"));
        }
        resp
    }
}

/// Runs one search against a snapshot. Pure apart from timing.
pub fn search(loaded: &Loaded, req: &SearchRequest) -> Result<SearchResponse, ApiError> {
    let started = Instant::now();
    if req.query.trim().is_empty() {
        return Err(ApiError::bad_request("empty_query", "query must not be empty"));
    }
    if req.k == 0 || req.k > MAX_K {
        return Err(ApiError::bad_request("invalid_k", format!("k must be in 1..={MAX_K}")));
    }
    let ranked: Vec<(PassageId, f64)> = match req.retriever.as_str() {
        "bm25" => loaded.artifact.bm25.search(&req.query, req.k),
        "quantity" => {
            let q = parse_quantity_query(&req.query).ok_or_else(|| {
                ApiError::bad_request("not_a_quantity_query", format!("`{}` is not an LVEF query", req.query))
            })?;
            loaded
                .artifact
                .lvef
                .matching(&q, MatchSemantics::Strict)
                .into_iter()
                .take(req.k)
                .map(|p| (p, 1.0))
                .collect()
        }
        name => {
            let m = loaded.dense.get(name).ok_or_else(|| {
                ApiError::bad_request(
                    "unknown_retriever",
                    format!("`{name}` is not loaded; available: {}", loaded.retrievers().join(", ")),
                )
            })?;
            m.index.search(&m.encoder.encode(&req.query), req.k)
        }
    };

    let judged = if req.include_judgments {
        resolve_query(&req.query, &loaded.artifact.index)
            .ok()
            .and_then(|t| relevant_for(&t, &loaded.artifact.index, Some(&loaded.artifact.lvef), &loaded.universe).ok())
    } else {
        None
    };

    let results = ranked
        .into_iter()
        .map(|(id, score)| {
            let report = loaded.corpus.report(id);
            SearchResult {
                passage_id: id,
                score,
                text: loaded.corpus.passage(id).unwrap_or_default().to_string(),
                matched_subcategories: report
                    .map(|r| r.labels.iter().map(|l| l.to_string()).collect())
                    .unwrap_or_default(),
                lvef_mentions: loaded
                    .artifact
                    .lvef
                    .mentions
                    .get(&id)
                    .map(|ms| {
                        ms.iter()
                            .map(|m| LvefMentionOut {
                                lo: m.lo,
                                hi: m.hi,
                                raw_span: m.raw_span.clone(),
                            })
                            .collect()
                    })
                    .unwrap_or_default(),
                judged: judged.as_ref().map(|j| j.contains(&id)),
            }
        })
        .collect();
    Ok(SearchResponse {
        results,
        timing_ms: started.elapsed().as_secs_f64() * 1e3,
        retriever: req.retriever.clone(),
    })
}

async fn search_handler(State(state): State<SharedState>, body: Bytes) -> Result<Json<SearchResponse>, ApiError> {
    let Some(_permit) = state.try_reserve() else {
        return Err(ApiError {
            status: StatusCode::SERVICE_UNAVAILABLE,
            code: "overloaded",
            message: "too many concurrent searches; retry shortly".into(),
        });
    };
    let req: SearchRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request("malformed_request", e.to_string()))?;
    let loaded = state.snapshot();
    search(&loaded, &req).map(Json)
}

async fn conditions_handler(State(state): State<SharedState>) -> Json<serde_json::Value> {
    let loaded = state.snapshot();
    let conditions: Vec<_> = loaded
        .catalog
        .conditions
        .iter()
        .map(|c| {
            json!({
                "name": c.name,
                "ood": c.is_ood,
                "subcategories": c.subcategories.iter().map(|s| json!({
                    "id": s.id,
                    "label": s.label,
                    "variants": s.variants,
                    "quantity": s.is_quantity(),
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    Json(json!({
        "catalog_version": loaded.catalog.version,
        "conditions": conditions,
        "lvef_grammar": {
            "mention_pattern": mention_pattern(),
            "source": grammar_source(),
        },
    }))
}

async fn health_handler(State(state): State<SharedState>) -> Json<serde_json::Value> {
    let loaded = state.snapshot();
    Json(json!({
        "status": "ok",
        "passages": loaded.corpus.len(),
        "catalog_hash": loaded.artifact.catalog_hash,
        "corpus_hash": loaded.artifact.corpus_hash,
    }))
}

async fn models_handler(State(state): State<SharedState>) -> Json<serde_json::Value> {
    let loaded = state.snapshot();
    let models: Vec<_> = loaded
        .retrievers()
        .into_iter()
        .map(|name| {
            let kind = match name.as_str() {
                "bm25" => "lexical",
                "quantity" => "quantity",
                _ => "dense",
            };
            json!({"name": name, "kind": kind})
        })
        .collect();
    Json(json!({ "retrievers": models }))
}

async fn reload_handler(State(state): State<SharedState>) -> Result<Json<serde_json::Value>, ApiError> {
    let Some(home) = state.reload_from.clone() else {
        return Err(ApiError {
            status: StatusCode::FORBIDDEN,
            code: "reload_disabled",
            message: "start the service with --reload to enable reloading".into(),
        });
    };
    let next = tokio::task::spawn_blocking(move || Loaded::from_home(&home))
        .await
        .map_err(|e| internal(e.to_string()))?
        .map_err(|e| internal(format!("{e:#}")))?;
    let retrievers = next.retrievers();
    state.swap(next);
    Ok(Json(json!({"status": "reloaded", "retrievers": retrievers})))
}

fn internal(message: String) -> ApiError {
    ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        code: "reload_failed",
        message,
    }
}

async fn not_found() -> ApiError {
    ApiError {
        status: StatusCode::NOT_FOUND,
        code: "not_found",
        message: "no such route".into(),
    }
}

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/search", post(search_handler))
        .route("/conditions", get(conditions_handler))
        .route("/health", get(health_handler))
        .route("/models", get(models_handler))
        .route("/reload", post(reload_handler))
        .fallback(not_found)
        .with_state(state)
}

/// Binds, prints the bound address and serves until the process ends.
pub async fn serve(state: SharedState, host: &str, port: u16) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    let addr = listener.local_addr()?;
    println!("listening on http://{addr}");
    use std::io::Write as _;
    std::io::stdout().flush()?;
    axum::serve(listener, router(state)).await?;
    Ok(())
}
