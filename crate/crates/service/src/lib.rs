//! Loopback JSON API over the question-answering pipeline.
//!
//! Endpoints:
//! - `POST /api/sessions` with `{"subject_id"}`
//! - `POST /api/sessions/{id}/message` with `{"text"}`
//! - `GET  /api/subjects/{id}/trend?dates=&bin=&window=&svg=`
//! - `GET  /api/health`
//!
//! Every JSON body goes through the structural privacy scan before it is sent.

pub mod session;
pub mod store;

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Json;
use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tower_http::services::ServeDir;

use cgmqa_core::aggregation::{daily_trend_profile, render_trend_svg, validate_bin};
use cgmqa_core::agent::{
    ClarificationTurn, LlmBackend, Pipeline, PipelineConfig, PipelineOutcome, PromptSet, UserQuery,
};
use cgmqa_core::data::{ClockWindow, DateSelection};
use cgmqa_core::privacy::{scan_payload, DEFAULT_RAW_CAP};
use cgmqa_core::sandbox::{parse_dates, LocalData, ToolRegistry};

pub use session::{MessageReply, PendingQuery, Session, ToolSummary, TraceSummary, Turn, TurnRole};
pub use axum::Router;
pub use store::{IngestSummary, StoreError, SubjectStore};

pub const DEFAULT_ADDR: &str = "127.0.0.1:8000";
const TREND_CACHE_CAP: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("static directory `{0}` does not exist")]
    MissingUiDir(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An error response: status plus `{"error", "layer"?}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    layer: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            layer: None,
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({"error": self.message});
        if let Some(layer) = self.layer {
            body["layer"] = Value::String(layer);
        }
        (self.status, Json(body)).into_response()
    }
}

/// Serializes `body` and refuses to send it if it looks like raw readings.
fn guarded<T: Serialize>(status: StatusCode, body: &T, cap: usize) -> Result<Response, ApiError> {
    let value = serde_json::to_value(body)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    if let Err(v) = scan_payload(&value, cap) {
        tracing::error!(violation = %v, "response blocked by privacy scan");
        return Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "response blocked by privacy filter"));
    }
    Ok((status, Json(value)).into_response())
}

/// Reference time for new questions.
#[derive(Debug, Clone, Copy, Default)]
pub enum Clock {
    #[default]
    Local,
    Fixed(NaiveDateTime),
}

impl Clock {
    pub fn now(self) -> NaiveDateTime {
        match self {
            Clock::Local => chrono::Local::now().naive_local(),
            Clock::Fixed(t) => t,
        }
    }
}

pub struct AppState {
    subjects: BTreeMap<String, Arc<LocalData>>,
    registry: Arc<ToolRegistry>,
    backend: Arc<dyn LlmBackend>,
    prompts: PromptSet,
    config: PipelineConfig,
    clock: Clock,
    raw_cap: usize,
    sessions: RwLock<HashMap<String, Arc<tokio::sync::Mutex<Session>>>>,
    trend_cache: Mutex<HashMap<String, Value>>,
}

impl AppState {
    pub fn new(
        subjects: BTreeMap<String, Arc<LocalData>>,
        registry: Arc<ToolRegistry>,
        backend: Arc<dyn LlmBackend>,
    ) -> Self {
        Self {
            subjects,
            registry,
            backend,
            prompts: PromptSet::default(),
            config: PipelineConfig {
                interactive: true,
                ..Default::default()
            },
            clock: Clock::Local,
            raw_cap: DEFAULT_RAW_CAP,
            sessions: RwLock::new(HashMap::new()),
            trend_cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_prompts(mut self, prompts: PromptSet) -> Self {
        self.prompts = prompts;
        self
    }

    /// Sessions always run with clarification turns enabled.
    pub fn with_config(mut self, config: PipelineConfig) -> Self {
        self.config = PipelineConfig {
            interactive: true,
            ..config
        };
        self
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn subject_ids(&self) -> Vec<String> {
        self.subjects.keys().cloned().collect()
    }

    /// A copy of one session's history.
    pub fn history(&self, session_id: &str) -> Option<Vec<Turn>> {
        let s = self.sessions.read().unwrap().get(session_id).cloned()?;
        let guard = s.try_lock().ok()?;
        Some(guard.history().to_vec())
    }

    fn session(&self, id: &str) -> Option<Arc<tokio::sync::Mutex<Session>>> {
        self.sessions.read().unwrap().get(id).cloned()
    }

    fn pipeline(&self, data: Arc<LocalData>) -> Pipeline {
        Pipeline::new(self.backend.clone(), self.registry.clone(), data)
            .with_config(self.config.clone())
            .with_prompts(self.prompts.clone())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/message", post(post_message))
        .route("/api/subjects/{id}/trend", get(trend))
        .with_state(state)
}

/// The API plus a static single-page client served from `ui_dir`.
pub fn router_with_ui(state: Arc<AppState>, ui_dir: PathBuf) -> Result<Router, ServiceError> {
    if !ui_dir.is_dir() {
        return Err(ServiceError::MissingUiDir(ui_dir.display().to_string()));
    }
    Ok(router(state).fallback_service(ServeDir::new(ui_dir)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub subjects: Vec<String>,
    pub tools: usize,
    pub backend: String,
}

async fn health(State(state): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let body = Health {
        status: "ok".into(),
        subjects: state.subject_ids(),
        tools: state.registry.catalog().len(),
        backend: state.backend.name().to_string(),
    };
    guarded(StatusCode::OK, &body, state.raw_cap)
}

#[derive(Debug, Deserialize)]
struct CreateSession {
    subject_id: String,
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(req): Json<CreateSession>,
) -> Result<Response, ApiError> {
    if !state.subjects.contains_key(&req.subject_id) {
        return Err(ApiError::not_found(format!("unknown subject `{}`", req.subject_id)));
    }
    let id = uuid::Uuid::new_v4().to_string();
    let session = Session::new(id.clone(), req.subject_id.clone(), state.clock.now());
    state
        .sessions
        .write()
        .unwrap()
        .insert(id.clone(), Arc::new(tokio::sync::Mutex::new(session)));
    guarded(
        StatusCode::CREATED,
        &json!({"session_id": id, "subject_id": req.subject_id}),
        state.raw_cap,
    )
}

#[derive(Debug, Deserialize)]
struct PostMessage {
    text: String,
    /// Treat the text as a new question even if a clarification is pending.
    #[serde(default)]
    new_query: bool,
    #[serde(default)]
    reference_datetime: Option<NaiveDateTime>,
}

async fn post_message(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<PostMessage>,
) -> Result<Response, ApiError> {
    let text = req.text.trim().to_string();
    if text.is_empty() {
        return Err(ApiError::bad_request("empty message"));
    }
    let handle = state
        .session(&id)
        .ok_or_else(|| ApiError::not_found(format!("unknown session `{id}`")))?;
    // one pipeline run per session at a time
    let mut session = handle.lock().await;
    let data = state
        .subjects
        .get(&session.subject_id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("unknown subject `{}`", session.subject_id)))?;
    let now = req.reference_datetime.unwrap_or_else(|| state.clock.now());

    let pending = session.pending.take().filter(|_| !req.new_query);
    session.push(Turn {
        role: TurnRole::User,
        text: text.clone(),
        at: now,
        cited_period: None,
        is_refusal: false,
    });
    let (mut query, turns) = match pending {
        Some(p) => {
            let turn = ClarificationTurn {
                agent_question: p.agent_question,
                user_answer: text,
            };
            (p.query, vec![turn])
        }
        None => (UserQuery::new(text, now), Vec::new()),
    };
    query.session_id = Some(session.session_id.clone());

    let pipeline = state.pipeline(data);
    let run_query = query.clone();
    let outcome = tokio::task::spawn_blocking(move || pipeline.step(&run_query, &turns))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;

    let reply = match outcome {
        Ok(PipelineOutcome::Clarify { question }) => {
            session.push(Turn {
                role: TurnRole::Clarification,
                text: question.clone(),
                at: state.clock.now(),
                cited_period: None,
                is_refusal: false,
            });
            session.pending = Some(PendingQuery {
                query,
                agent_question: question.clone(),
            });
            MessageReply::Clarification { question }
        }
        Ok(PipelineOutcome::Answer(bundle)) => {
            session.push(Turn {
                role: TurnRole::Agent,
                text: bundle.response.text.clone(),
                at: state.clock.now(),
                cited_period: bundle.response.cited_period.clone(),
                is_refusal: bundle.response.is_refusal,
            });
            MessageReply::Answer {
                trace: TraceSummary::from_trace(&bundle.trace),
                response: bundle.response,
            }
        }
        Err(failure) => {
            tracing::warn!(layer = %failure.layer, error = %failure.message, "pipeline failed");
            return Err(ApiError {
                status: StatusCode::BAD_GATEWAY,
                message: failure.message,
                layer: Some(failure.layer.as_str().to_string()),
            });
        }
    };
    guarded(StatusCode::OK, &reply, state.raw_cap)
}

#[derive(Debug, Default, Deserialize)]
struct TrendParams {
    dates: Option<String>,
    bin: Option<u32>,
    window: Option<String>,
    #[serde(default)]
    svg: bool,
}

/// Digest of the normalized request, used as the cache key and ETag.
fn trend_digest(subject: &str, selection: &DateSelection, bin: u32, svg: bool) -> String {
    let mut h = Sha256::new();
    h.update(format!("{subject}|{}|{bin}|{svg}", selection.key()));
    hex::encode(h.finalize())
}

async fn trend(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(params): Query<TrendParams>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let data = state
        .subjects
        .get(&id)
        .ok_or_else(|| ApiError::not_found(format!("unknown subject `{id}`")))?;
    let bin = params.bin.unwrap_or(state.registry.config().default_trend_bin);
    validate_bin(bin).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let mut selection = match params.dates.as_deref().map(str::trim).filter(|s| !s.is_empty()) {
        Some(d) => parse_dates("dates", &Value::String(d.to_string())).map_err(|e| ApiError::bad_request(e.to_string()))?,
        None => match (data.cgm.first_date(), data.cgm.last_date()) {
            (Some(a), Some(b)) => DateSelection::range(a, b),
            _ => DateSelection::of_dates(Vec::new()),
        },
    };
    if let Some(w) = params.window.as_deref() {
        let window = ClockWindow::parse(w).map_err(|e| ApiError::bad_request(e.to_string()))?;
        selection = selection.with_window(window);
    }

    let digest = trend_digest(&id, &selection, bin, params.svg);
    let etag = format!("\"{digest}\"");
    if headers
        .get(header::IF_NONE_MATCH)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v == etag)
    {
        return Ok((StatusCode::NOT_MODIFIED, [(header::ETAG, etag)]).into_response());
    }

    let cached = state.trend_cache.lock().unwrap().get(&digest).cloned();
    let body = match cached {
        Some(v) => v,
        None => {
            let profile =
                daily_trend_profile(&data.cgm, &selection, bin).map_err(|e| ApiError::bad_request(e.to_string()))?;
            let mut body = json!({
                "subject_id": id,
                "dates": selection.key(),
                "profile": profile,
            });
            if params.svg {
                body["svg"] = Value::String(render_trend_svg(&profile, &state.registry.config().thresholds));
            }
            let mut cache = state.trend_cache.lock().unwrap();
            if cache.len() >= TREND_CACHE_CAP {
                cache.clear();
            }
            cache.insert(digest, body.clone());
            body
        }
    };
    let mut resp = guarded(StatusCode::OK, &body, state.raw_cap)?;
    resp.headers_mut().insert(header::ETAG, etag.parse().expect("hex etag"));
    resp.headers_mut()
        .insert(header::CACHE_CONTROL, "private, max-age=300".parse().expect("static header"));
    Ok(resp)
}

/// Binds `addr` and serves until `shutdown` resolves.
pub async fn serve(
    router: Router,
    addr: SocketAddr,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServiceError::Bind { addr, source })?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router).with_graceful_shutdown(shutdown).await?;
    Ok(())
}

/// Resolves on Ctrl-C.
pub async fn ctrl_c() {
    let _ = tokio::signal::ctrl_c().await;
}
