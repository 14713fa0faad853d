//! HTTP/JSON API over exploration sessions.
//!
//! Each session owns an inverted problem with its cached metrics. Requests
//! on one session take its lock (shared for reads, exclusive for mutation);
//! distinct sessions proceed independently.

mod error;
mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, Method};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use eglass_core::bench::{ExperimentConfig, Preset};
use eglass_core::metrics::SpectraReport;
use serde::Deserialize;
use tokio::sync::RwLock;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub use error::{ApiError, ApiResult, ErrorBody};
pub use session::{
    BaseView, DirectionRequest, DirectionView, Gallery, Grid, Session, SessionCreated, StepRefusal, StepView, ETA_CAP_FACTOR,
};

/// Largest tolerated `‖CᵀC − I‖∞` before spectra are refused.
pub const COUPLING_TOLERANCE: f64 = 1e-8;

type SessionRef = Arc<RwLock<Session>>;

#[derive(Clone)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<String, SessionRef>>>,
    default_config: Arc<ExperimentConfig>,
}

impl AppState {
    /// `default_config` is used when a create request names neither a
    /// config nor a preset.
    pub fn new(default_config: ExperimentConfig) -> Self {
        Self {
            sessions: Arc::new(RwLock::new(HashMap::new())),
            default_config: Arc::new(default_config),
        }
    }

    pub async fn insert(&self, session: Session) -> String {
        let id = session.id.clone();
        self.sessions.write().await.insert(id.clone(), Arc::new(RwLock::new(session)));
        id
    }

    async fn get(&self, id: &str) -> ApiResult<SessionRef> {
        self.sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id}")))
    }

    pub async fn len(&self) -> usize {
        self.sessions.read().await.len()
    }

    pub async fn is_empty(&self) -> bool {
        self.len().await == 0
    }
}

/// Allowed browser origins; `None` allows any.
pub fn cors(origin: Option<&str>) -> CorsLayer {
    let layer = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    match origin.and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(v) => layer.allow_origin(AllowOrigin::exact(v)),
        None => layer.allow_origin(Any),
    }
}

pub fn router(state: AppState, cors_origin: Option<&str>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/spectra", get(spectra))
        .route("/sessions/{id}/direction", post(direction))
        .route("/sessions/{id}/step", get(step))
        .route("/sessions/{id}/pin", post(pin))
        .route("/sessions/{id}/solutions", get(solutions))
        .route("/sessions/{id}/export", get(export))
        .with_state(state)
        .layer(cors(cors_origin))
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(addr: SocketAddr, default_config: ExperimentConfig, cors_origin: Option<String>) -> std::io::Result<()> {
    let app = router(AppState::new(default_config), cors_origin.as_deref());
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, app).await
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    #[serde(default)]
    config: Option<ExperimentConfig>,
    #[serde(default)]
    preset: Option<Preset>,
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> ApiResult<Json<SessionCreated>> {
    let req: CreateRequest = if body.iter().all(u8::is_ascii_whitespace) {
        CreateRequest::default()
    } else {
        parse_json(&body)?
    };
    let config = match (req.config, req.preset) {
        (Some(_), Some(_)) => return Err(ApiError::bad_request("give either config or preset, not both")),
        (Some(c), None) => c,
        (None, Some(p)) => ExperimentConfig::preset(p),
        (None, None) => (*state.default_config).clone(),
    };
    config.validate()?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let session = tokio::task::spawn_blocking(move || Session::create(id, config))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    let created = session.created();
    state.insert(session).await;
    Ok(Json(created))
}

async fn spectra(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SpectraReport>> {
    let s = state.get(&id).await?;
    let report = s.read().await.spectra();
    if !(report.coupling_orthogonality_error <= COUPLING_TOLERANCE) {
        return Err(ApiError::internal(format!(
            "coupling matrix not orthogonal (error {:e})",
            report.coupling_orthogonality_error
        )));
    }
    Ok(Json(report))
}

async fn direction(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<DirectionView>> {
    let s = state.get(&id).await?;
    let req: DirectionRequest = parse_json(&body)?;
    let mut guard = s.write_owned().await;
    let view = tokio::task::spawn_blocking(move || guard.add_direction(&req))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(view))
}

fn refusal(r: StepRefusal) -> ApiError {
    match r {
        StepRefusal::UnknownDirection(d) => ApiError::not_found(format!("no direction {d}")),
        StepRefusal::OutOfRange { eta, cap } => ApiError::bad_request(format!("eta {eta} outside [-{cap}, {cap}]")),
    }
}

#[derive(Debug, Deserialize)]
struct StepQuery {
    direction: String,
    eta: f64,
}

async fn step(
    State(state): State<AppState>,
    Path(id): Path<String>,
    query: Result<Query<StepQuery>, QueryRejection>,
) -> ApiResult<Json<StepView>> {
    let s = state.get(&id).await?;
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let view = s.read().await.step(&q.direction, q.eta).map_err(refusal)??;
    Ok(Json(view))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PinRequest {
    direction_id: String,
    eta: f64,
}

async fn pin(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<eglass_core::exploration::SolutionRecord>> {
    let s = state.get(&id).await?;
    let req: PinRequest = parse_json(&body)?;
    let rec = s.write().await.pin(&req.direction_id, req.eta).map_err(refusal)??;
    Ok(Json(rec))
}

async fn solutions(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Gallery>> {
    let s = state.get(&id).await?;
    let gallery = s.read().await.gallery();
    Ok(Json(gallery))
}

async fn export(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let s = state.get(&id).await?;
    let body = s.read().await.export_jsonl()?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body))
}
