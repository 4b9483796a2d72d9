//! HTTP wrapper around the interactive step. Graphs are built when a session is created,
//! so clicks only pay for the cut, the grouping and the selection.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock, Weak};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::extract::multipart::MultipartError;
use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use geocut_core::features::compute_edge_features;
use geocut_core::graph::build_graph;
use geocut_core::io::{decode_image_bytes, GraphCache};
use geocut_core::segmenter::segment_timed;
use geocut_core::{Error, Features, Field, Graph, Point, RunConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tower_http::cors::{AllowOrigin, CorsLayer};

/// Room for multipart framing and the config field on top of the image limit.
const MULTIPART_SLACK: usize = 64 * 1024;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// Largest accepted image file, in bytes.
    pub max_bytes: usize,
    /// Sessions untouched for this long are dropped.
    pub idle: Duration,
    /// Graph caches are written here, keyed by image and configuration hash.
    pub cache_dir: Option<PathBuf>,
    /// Defaults for sessions created without a config field.
    pub run: RunConfig,
    /// Allowed CORS origins; empty allows any.
    pub cors_origins: Vec<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            max_bytes: 20 << 20,
            idle: Duration::from_secs(30 * 60),
            cache_dir: None,
            run: RunConfig::default(),
            cors_origins: Vec::new(),
        }
    }
}

/// Offline products shared read-only by every click on a session.
pub struct Prepared {
    pub features: Features,
    pub graph: Graph,
    pub build_ms: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheHit {
    Miss,
    Memory,
    Disk,
}

enum Stage {
    Building,
    Ready(Arc<Prepared>, CacheHit),
    Failed(String),
}

pub struct Session {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub created: SystemTime,
    selection: geocut_core::segmenter::SelectionConfig,
    last_used: Mutex<Instant>,
    stage: RwLock<Stage>,
}

impl Session {
    fn touch(&self) {
        *self.last_used.lock().unwrap() = Instant::now();
    }

    fn idle_for(&self) -> Duration {
        self.last_used.lock().unwrap().elapsed()
    }
}

pub struct AppState {
    cfg: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    /// Built graphs by content key, alive while some session holds them.
    built: Mutex<HashMap<String, Weak<Prepared>>>,
}

impl AppState {
    pub fn new(cfg: ServiceConfig) -> Arc<Self> {
        Arc::new(AppState {
            cfg,
            sessions: RwLock::new(HashMap::new()),
            built: Mutex::new(HashMap::new()),
        })
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().unwrap().len()
    }

    /// Drops idle sessions and forgets graphs nobody holds any more.
    pub fn sweep(&self) {
        let idle = self.cfg.idle;
        self.sessions.write().unwrap().retain(|_, s| s.idle_for() <= idle);
        self.built.lock().unwrap().retain(|_, w| w.strong_count() > 0);
    }

    fn lookup(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        let found = self.sessions.read().unwrap().get(id).cloned();
        match found {
            Some(s) if s.idle_for() <= self.cfg.idle => {
                s.touch();
                Ok(s)
            }
            Some(_) => {
                self.sessions.write().unwrap().remove(id);
                Err(ApiError::not_found(id))
            }
            None => Err(ApiError::not_found(id)),
        }
    }

    fn ready(&self, id: &str) -> Result<(Arc<Session>, Arc<Prepared>), ApiError> {
        let s = self.lookup(id)?;
        let prepared = match &*s.stage.read().unwrap() {
            Stage::Ready(p, _) => p.clone(),
            Stage::Building => return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "not_ready", "the graph is still being built")),
            Stage::Failed(m) => return Err(ApiError::new(StatusCode::CONFLICT, "build_failed", m.clone())),
        };
        Ok((s, prepared))
    }
}

/// Spawns a task that sweeps idle sessions every `period`.
pub fn spawn_sweeper(state: Arc<AppState>, period: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            state.sweep();
        }
    })
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no session {id}"))
    }

    fn too_large(limit: usize) -> Self {
        Self::new(StatusCode::PAYLOAD_TOO_LARGE, "too_large", format!("images are limited to {limit} bytes"))
    }

    fn multipart(e: MultipartError, limit: usize) -> Self {
        if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            Self::too_large(limit)
        } else {
            Self::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text())
        }
    }

    fn from_core(e: &Error) -> Self {
        let msg = e.to_string();
        match e.root() {
            Error::InvalidLandmark { .. } => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_landmark", msg),
            Error::EmptyLambda | Error::NoAdmissibleContour | Error::BoundaryUnreachable | Error::BacktrackStalled { .. } => {
                Self::new(StatusCode::CONFLICT, "no_contour", msg)
            }
            Error::Config(_) => Self::new(StatusCode::BAD_REQUEST, "bad_config", msg),
            Error::Domain(_) => Self::new(StatusCode::BAD_REQUEST, "bad_image", msg),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", msg),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.code, "message": self.message });
        (self.status, Json(body)).into_response()
    }
}

#[derive(Serialize)]
pub struct StatusBody {
    pub session_id: String,
    pub status: &'static str,
    pub width: usize,
    pub height: usize,
    /// Seconds since the Unix epoch.
    pub created: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proposals: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edges: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loops: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache: Option<CacheHit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub build_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn status_of(s: &Session) -> StatusBody {
    let mut body = StatusBody {
        session_id: s.id.clone(),
        status: "building",
        width: s.width,
        height: s.height,
        created: s.created.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        proposals: None,
        edges: None,
        loops: None,
        cache: None,
        build_ms: None,
        error: None,
    };
    match &*s.stage.read().unwrap() {
        Stage::Building => {}
        Stage::Ready(p, hit) => {
            body.status = "ready";
            body.proposals = Some(p.graph.node_count());
            body.edges = Some(p.graph.edges.len());
            body.loops = Some(p.graph.loops.len());
            body.cache = Some(*hit);
            body.build_ms = Some(p.build_ms);
        }
        Stage::Failed(m) => {
            body.status = "failed";
            body.error = Some(m.clone());
        }
    }
    body
}

fn content_key(image: &[u8], run: &RunConfig) -> String {
    let mut h = Sha256::new();
    h.update(image);
    let offline = serde_json::to_vec(&(&run.features, &run.proposals, &run.graph)).expect("configs serialise");
    h.update(&offline);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Builds the graph, or loads it from the disk cache when one matches.
fn prepare(channels: &[Field], run: &RunConfig, key: &str, cache_dir: Option<&PathBuf>) -> geocut_core::Result<(Prepared, CacheHit)> {
    let t = Instant::now();
    let path = cache_dir.map(|d| d.join(format!("{key}.json")));
    if let Some(cache) = path.as_ref().filter(|p| p.exists()).and_then(|p| GraphCache::load(p).ok()) {
        let (w, h) = (channels[0].width(), channels[0].height());
        if cache.features == run.features && cache.proposals == run.proposals && cache.graph.config == run.graph
            && cache.graph.width == w && cache.graph.height == h
        {
            let features = compute_edge_features(channels, &cache.features)?;
            let build_ms = t.elapsed().as_secs_f64() * 1e3;
            return Ok((Prepared { features, graph: cache.graph, build_ms }, CacheHit::Disk));
        }
    }
    let (features, graph) = build_graph(channels, &run.features, &run.proposals, &run.graph)?;
    if let Some(p) = &path {
        let cache = GraphCache::new(run.features.clone(), run.proposals.clone(), graph.clone());
        // A failed cache write only costs a rebuild later.
        let _ = cache.save(p);
    }
    let build_ms = t.elapsed().as_secs_f64() * 1e3;
    Ok((Prepared { features, graph, build_ms }, CacheHit::Miss))
}

#[derive(Deserialize)]
pub struct CreateQuery {
    /// When false, answer 202 right away and build in the background.
    #[serde(default = "yes")]
    pub wait: bool,
}

#[derive(Deserialize)]
pub struct SegmentQuery {
    /// When false, `timing_ms` is left out so equal clicks give equal bytes.
    #[serde(default = "yes")]
    pub timing: bool,
}

fn yes() -> bool {
    true
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Query(q): Query<CreateQuery>,
    mut form: Multipart,
) -> Result<Response, ApiError> {
    let limit = state.cfg.max_bytes;
    let mut image = None;
    let mut config = None;
    while let Some(field) = form.next_field().await.map_err(|e| ApiError::multipart(e, limit))? {
        match field.name() {
            Some("image") => image = Some(field.bytes().await.map_err(|e| ApiError::multipart(e, limit))?),
            Some("config") => config = Some(field.text().await.map_err(|e| ApiError::multipart(e, limit))?),
            _ => {}
        }
    }
    let image = image.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "missing the image field"))?;
    if image.len() > limit {
        return Err(ApiError::too_large(limit));
    }
    let run = match config.as_deref() {
        Some(text) => RunConfig::parse(text).map_err(|e| ApiError::from_core(&e))?,
        None => state.cfg.run.clone(),
    };
    let channels = decode_image_bytes(&image)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_image", e.to_string()))?;
    let key = content_key(&image, &run);

    let session = Arc::new(Session {
        id: uuid::Uuid::new_v4().simple().to_string(),
        width: channels[0].width(),
        height: channels[0].height(),
        created: SystemTime::now(),
        selection: run.selection.clone(),
        last_used: Mutex::new(Instant::now()),
        stage: RwLock::new(Stage::Building),
    });
    state.sessions.write().unwrap().insert(session.id.clone(), session.clone());

    let shared = state.built.lock().unwrap().get(&key).and_then(Weak::upgrade);
    if let Some(p) = shared {
        *session.stage.write().unwrap() = Stage::Ready(p, CacheHit::Memory);
        return Ok((StatusCode::CREATED, Json(status_of(&session))).into_response());
    }

    let build = {
        let (state, session) = (state.clone(), session.clone());
        tokio::task::spawn_blocking(move || {
            let stage = match prepare(&channels, &run, &key, state.cfg.cache_dir.as_ref()) {
                Ok((p, hit)) => {
                    let p = Arc::new(p);
                    state.built.lock().unwrap().insert(key, Arc::downgrade(&p));
                    Stage::Ready(p, hit)
                }
                Err(e) => Stage::Failed(e.to_string()),
            };
            *session.stage.write().unwrap() = stage;
        })
    };
    if !q.wait {
        return Ok((StatusCode::ACCEPTED, Json(status_of(&session))).into_response());
    }
    build.await.map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    let body = status_of(&session);
    if let Some(err) = &body.error {
        state.sessions.write().unwrap().remove(&session.id);
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_image", err.clone()));
    }
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn session_status(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<StatusBody>, ApiError> {
    let s = state.lookup(&id)?;
    Ok(Json(status_of(&s)))
}

#[derive(Serialize)]
pub struct ProposalBody {
    pub id: usize,
    pub points: Vec<Point>,
}

async fn session_proposals(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<Vec<ProposalBody>>, ApiError> {
    let (_, p) = state.ready(&id)?;
    let list = p
        .graph
        .proposals
        .iter()
        .map(|b| ProposalBody { id: b.id, points: b.curve.points.clone() })
        .collect();
    Ok(Json(list))
}

#[derive(Debug, Deserialize)]
pub struct Click {
    pub x: f64,
    pub y: f64,
}

#[derive(Serialize)]
pub struct TimingBody {
    pub cut: f64,
    pub grouping: f64,
    pub selection: f64,
    pub total: f64,
}

#[derive(Serialize)]
pub struct SegmentBody {
    pub polygon: Vec<Point>,
    pub cut: Vec<Point>,
    pub energy: f64,
    pub score: f64,
    pub length: f64,
    pub node_ids: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<TimingBody>,
}

async fn session_segment(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<SegmentQuery>,
    click: Result<Json<Click>, JsonRejection>,
) -> Result<Json<SegmentBody>, ApiError> {
    let (session, prepared) = state.ready(&id)?;
    let Json(click) = click.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text()))?;
    let selection = session.selection.clone();
    let result = tokio::task::spawn_blocking(move || {
        segment_timed(&prepared.graph, &prepared.features, Point::new(click.x, click.y), &selection)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    let (c, t) = result.map_err(|e| ApiError::from_core(&e))?;
    Ok(Json(SegmentBody {
        polygon: c.contour.points,
        cut: c.cut.path.points,
        energy: c.energy,
        score: c.score,
        length: c.length,
        node_ids: c.nodes,
        timing_ms: q.timing.then(|| TimingBody {
            cut: t.cut_ms,
            grouping: t.grouping_ms,
            selection: t.selection_ms,
            total: t.total_ms(),
        }),
    }))
}

fn cors(origins: &[String]) -> CorsLayer {
    let allow = if origins.is_empty() {
        AllowOrigin::any()
    } else {
        AllowOrigin::list(origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
        .allow_headers([axum::http::header::CONTENT_TYPE])
}

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.cfg.max_bytes + MULTIPART_SLACK;
    let layer = cors(&state.cfg.cors_origins);
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/status", get(session_status))
        .route("/sessions/{id}/proposals", get(session_proposals))
        .route("/sessions/{id}/segment", post(session_segment))
        .layer(DefaultBodyLimit::max(limit))
        .layer(layer)
        .with_state(state)
}
