//! HTTP chat service: single-turn question answering over the shared engine,
//! plus static hosting for the web client.
//!
//! | route            | method | body                                   |
//! |------------------|--------|----------------------------------------|
//! | `/api/ask`       | POST   | [`AskRequest`] → [`AskResponse`]        |
//! | `/api/modes`     | GET    | `{"modes": [..], "cutoffs": [..]}`     |
//! | `/api/health`    | GET    | `{"ready", "degraded", "components"}`  |
//! | `/`              | GET    | static files                           |

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use faqrag_core::generation::Pipeline;
use faqrag_core::harness::{Engine, RunConfig, StageTimings};
use faqrag_core::remote::probe_endpoint;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

const REACHABILITY_TTL: Duration = Duration::from_secs(30);
const PROBE_TIMEOUT: Duration = Duration::from_millis(500);
/// Question id attached to interactive questions.
const ADHOC_QUESTION_ID: &str = "ask";

fn default_cutoff() -> usize {
    3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AskRequest {
    pub question: String,
    pub mode: String,
    #[serde(default = "default_cutoff")]
    pub cutoff: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageView {
    pub id: String,
    pub text: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskResponse {
    pub answer: String,
    pub answered: bool,
    pub passages: Vec<PassageView>,
    pub mode: String,
    pub cutoff: usize,
    pub timings: StageTimings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModesResponse {
    pub modes: Vec<String>,
    pub cutoffs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub ready: bool,
    pub degraded: bool,
    pub components: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize)]
struct ErrorBody {
    error: String,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (
        status,
        Json(ErrorBody {
            error: message.into(),
        }),
    )
        .into_response()
}

/// Shared service state. The engine is installed once it has been built, so
/// the server can answer health checks while indexing is still running.
pub struct AppState {
    config: RunConfig,
    engine: OnceLock<Arc<Engine>>,
    build_error: Mutex<Option<String>>,
    reachability: Mutex<Option<(Instant, BTreeMap<String, bool>)>>,
}

impl AppState {
    pub fn new(config: RunConfig) -> Arc<Self> {
        Arc::new(Self {
            config,
            engine: OnceLock::new(),
            build_error: Mutex::new(None),
            reachability: Mutex::new(None),
        })
    }

    pub fn with_engine(engine: Engine) -> Arc<Self> {
        let state = Self::new(engine.config().clone());
        state.install(engine);
        state
    }

    pub fn install(&self, engine: Engine) {
        let _ = self.engine.set(Arc::new(engine));
    }

    pub fn fail(&self, message: String) {
        *self.build_error.lock().expect("state lock poisoned") = Some(message);
    }

    pub fn engine(&self) -> Option<&Arc<Engine>> {
        self.engine.get()
    }

    /// Reachability of each remote endpoint, probed at most once per TTL.
    fn reachability(&self, engine: &Engine) -> BTreeMap<String, bool> {
        let mut cache = self.reachability.lock().expect("state lock poisoned");
        if let Some((at, map)) = cache.as_ref() {
            if at.elapsed() < REACHABILITY_TTL {
                return map.clone();
            }
        }
        let map: BTreeMap<String, bool> = engine
            .remote_components()
            .into_iter()
            .map(|c| (c.name, probe_endpoint(&c.endpoint, PROBE_TIMEOUT)))
            .collect();
        *cache = Some((Instant::now(), map.clone()));
        map
    }
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/ask", post(handle_ask))
        .route("/api/modes", get(handle_modes))
        .route("/api/health", get(handle_health))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

async fn handle_modes(State(state): State<Arc<AppState>>) -> Json<ModesResponse> {
    Json(ModesResponse {
        modes: state.config.pipelines.iter().map(|p| p.as_str().to_string()).collect(),
        cutoffs: state.config.cutoff_set(),
    })
}

async fn handle_health(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    let mut components = BTreeMap::new();
    let Some(engine) = state.engine().cloned() else {
        let status = match state.build_error.lock().expect("state lock poisoned").as_ref() {
            Some(e) => format!("failed: {e}"),
            None => "building".to_string(),
        };
        components.insert("engine".into(), status);
        return Json(HealthResponse {
            ready: false,
            degraded: false,
            components,
        });
    };
    let enabled = |p: Pipeline| if engine.pipelines().contains(&p) { "ready" } else { "disabled" };
    components.insert("intent_model".into(), enabled(Pipeline::Ib).into());
    components.insert("index".into(), enabled(Pipeline::RagBm25).into());
    components.insert("vector_store".into(), enabled(Pipeline::RagDense).into());
    let probe_state = state.clone();
    let reach = tokio::task::spawn_blocking(move || probe_state.reachability(&engine))
        .await
        .unwrap_or_default();
    let mut degraded = false;
    for (name, ok) in reach {
        degraded |= !ok;
        components.insert(name, if ok { "reachable" } else { "unreachable" }.into());
    }
    Json(HealthResponse {
        ready: true,
        degraded,
        components,
    })
}

async fn handle_ask(
    State(state): State<Arc<AppState>>,
    body: Result<Json<AskRequest>, JsonRejection>,
) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
    };
    let question = req.question.trim().to_string();
    if question.is_empty() {
        return error(StatusCode::BAD_REQUEST, "question is empty");
    }
    let pipeline: Pipeline = match req.mode.parse() {
        Ok(p) => p,
        Err(_) => return error(StatusCode::BAD_REQUEST, format!("unknown mode `{}`", req.mode)),
    };
    if !state.config.pipelines.contains(&pipeline) {
        return error(StatusCode::BAD_REQUEST, format!("mode `{pipeline}` is not enabled"));
    }
    if !state.config.cutoff_set().contains(&req.cutoff) {
        return error(
            StatusCode::BAD_REQUEST,
            format!("cutoff {} is not one of {:?}", req.cutoff, state.config.cutoff_set()),
        );
    }
    let Some(engine) = state.engine().cloned() else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "engine is still being built");
    };
    let cutoff = req.cutoff;
    let outcome = tokio::task::spawn_blocking(move || {
        engine
            .answer_timed(pipeline, ADHOC_QUESTION_ID, &question, cutoff)
            .map(|(answer, ranking, timings)| {
                let passages = ranking
                    .entries
                    .iter()
                    .enumerate()
                    .filter_map(|(i, e)| {
                        engine.collection().passages().get(&e.passage_id).map(|p| PassageView {
                            id: p.id.clone(),
                            text: p.text.clone(),
                            score: e.score,
                            rank: i + 1,
                        })
                    })
                    .collect();
                AskResponse {
                    answer: answer.text,
                    answered: answer.answered,
                    passages,
                    mode: pipeline.as_str().to_string(),
                    cutoff: answer.cutoff,
                    timings,
                }
            })
    })
    .await;
    match outcome {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e)) => error(StatusCode::BAD_GATEWAY, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

/// Binds `addr`, builds the engine in the background and serves until shutdown.
pub async fn serve(config: RunConfig, addr: SocketAddr, static_dir: Option<PathBuf>) -> anyhow::Result<()> {
    let state = AppState::new(config.clone());
    let builder = state.clone();
    tokio::task::spawn_blocking(move || match Engine::build(config) {
        Ok(engine) => {
            tracing::info!("engine ready");
            builder.install(engine);
        }
        Err(e) => {
            tracing::error!(error = %e, "engine build failed");
            builder.fail(e.to_string());
        }
    });
    let result = async {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        tracing::info!(%addr, "listening");
        axum::serve(listener, router(state.clone(), static_dir)).await
    }
    .await;
    // Remote clients hold blocking runtimes that cannot be dropped on an async thread.
    let _ = tokio::task::spawn_blocking(move || drop(state)).await;
    Ok(result?)
}

/// [`serve`] on a fresh multi-threaded runtime.
pub fn serve_blocking(config: RunConfig, addr: SocketAddr, static_dir: Option<PathBuf>) -> anyhow::Result<()> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(serve(config, addr, static_dir))
}
