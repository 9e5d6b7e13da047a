//! Local HTTP JSON service for what-if exploration of one procedure at a
//! time: create a session from a procedure and a checkpoint, apply and undo
//! counterfactual edits, ask for suggestions and sensitivity curves.
//!
//! Checkpoints are shared read-only; each session sits behind its own lock
//! so requests on one session are serialized while different sessions run
//! concurrently. Endpoint schemas live in `docs/service.md`.

mod error;
pub mod wire;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use tegraph::counterfactual::{
    replay, search_trace, sensitivity_curve, CounterfactualEdit, SearchLevel,
};
use tegraph::graph::{expand, GraphDump};
use tegraph::ingest::ProcedureRecord;
use tegraph::model::{argmax, DurationClass, ModelCheckpoint};
use tegraph::pipeline::procedure_snapshots;
use tower_http::services::ServeDir;

pub use error::{ErrorBody, ErrorDetail, ServiceError};
use wire::*;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(30 * 60);
pub const CHECKPOINT_EXTENSION: &str = "tegraph";

/// One what-if session: a pristine graph plus the stack of applied edits.
#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub checkpoint_id: String,
    pub checkpoint: Arc<ModelCheckpoint>,
    pub pristine: tegraph::graph::TimeExpandedGraph,
    pub current: tegraph::graph::TimeExpandedGraph,
    pub edits: Vec<CounterfactualEdit>,
    pub baseline: [f64; 3],
    pub probabilities: [f64; 3],
}

impl Session {
    pub fn new(
        id: String,
        checkpoint_id: String,
        checkpoint: Arc<ModelCheckpoint>,
        graph: tegraph::graph::TimeExpandedGraph,
    ) -> Result<Self, ServiceError> {
        let baseline = checkpoint.predict_graph(&graph)?;
        Ok(Session {
            id,
            checkpoint_id,
            checkpoint,
            current: graph.clone(),
            pristine: graph,
            edits: Vec::new(),
            baseline,
            probabilities: baseline,
        })
    }

    pub fn prediction(&self) -> PredictionView {
        let p = self.probabilities;
        PredictionView {
            depth: self.edits.len(),
            probabilities: p,
            predicted_class: DurationClass::from_index(argmax(&p)).expect("three classes"),
            baseline: self.baseline,
            delta: [0, 1, 2].map(|k| p[k] - self.baseline[k]),
        }
    }

    pub fn apply(&mut self, edit: CounterfactualEdit) -> Result<(), ServiceError> {
        let next = replay(&self.current, std::slice::from_ref(&edit), &self.checkpoint)?;
        self.probabilities = self.checkpoint.predict_graph(&next)?;
        self.current = next;
        self.edits.push(edit);
        Ok(())
    }

    /// Pops one edit and rebuilds the current graph by replaying the rest
    /// over the pristine graph.
    pub fn undo(&mut self) -> Result<CounterfactualEdit, ServiceError> {
        let edit = self.edits.pop().ok_or(ServiceError::EmptyStack)?;
        self.current = replay(&self.pristine, &self.edits, &self.checkpoint)?;
        self.probabilities = self.checkpoint.predict_graph(&self.current)?;
        Ok(edit)
    }

    /// Nodes of windows `[start, end)` and the edges among them.
    pub fn graph_view(&self, start: usize, end: usize) -> GraphDump {
        let mut dump = self
            .current
            .dump(Some(&self.checkpoint.preprocessing.thresholds));
        let inside = |w: usize| (start..end).contains(&w);
        let keep: Vec<bool> = self
            .current
            .nodes
            .iter()
            .map(|n| inside(n.window))
            .collect();
        dump.nodes.retain(|n| keep[n.id]);
        dump.edges.retain(|e| keep[e.source] && keep[e.target]);
        dump.window_range = (start, end);
        dump
    }
}

struct Slot {
    session: Arc<Mutex<Session>>,
    last_used: Instant,
}

pub struct AppState {
    checkpoints: BTreeMap<String, Arc<ModelCheckpoint>>,
    sessions: Mutex<HashMap<String, Slot>>,
    next_id: AtomicU64,
    idle_timeout: Duration,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    // a panicked request leaves the data consistent: every mutation is a
    // whole-value assignment after the fallible work
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl AppState {
    pub fn new(
        checkpoints: BTreeMap<String, Arc<ModelCheckpoint>>,
        idle_timeout: Duration,
    ) -> Self {
        AppState {
            checkpoints,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            idle_timeout,
        }
    }

    /// Loads every `*.tegraph` file in `dir`, keyed by file stem.
    pub fn load_dir(dir: impl AsRef<Path>, idle_timeout: Duration) -> Result<Self, ServiceError> {
        let mut checkpoints = BTreeMap::new();
        let entries =
            std::fs::read_dir(dir.as_ref()).map_err(|e| ServiceError::Internal(e.to_string()))?;
        for entry in entries {
            let path = entry
                .map_err(|e| ServiceError::Internal(e.to_string()))?
                .path();
            if path.extension().and_then(|e| e.to_str()) != Some(CHECKPOINT_EXTENSION) {
                continue;
            }
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            let ck = ModelCheckpoint::load(&path)
                .map_err(|e| ServiceError::Internal(format!("{}: {e}", path.display())))?;
            log::info!("loaded checkpoint {id} ({})", ck.kind());
            checkpoints.insert(id, Arc::new(ck));
        }
        Ok(AppState::new(checkpoints, idle_timeout))
    }

    pub fn checkpoint_ids(&self) -> Vec<String> {
        self.checkpoints.keys().cloned().collect()
    }

    pub fn session_count(&self) -> usize {
        lock(&self.sessions).len()
    }

    /// Drops sessions idle for longer than the timeout; returns how many.
    pub fn purge_expired(&self) -> usize {
        let mut sessions = lock(&self.sessions);
        let before = sessions.len();
        let timeout = self.idle_timeout;
        sessions.retain(|_, s| s.last_used.elapsed() <= timeout);
        before - sessions.len()
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ServiceError> {
        self.purge_expired();
        let mut sessions = lock(&self.sessions);
        let slot = sessions
            .get_mut(id)
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))?;
        slot.last_used = Instant::now();
        Ok(slot.session.clone())
    }

    pub fn create_session(
        &self,
        req: CreateSessionRequest,
    ) -> Result<CreateSessionResponse, ServiceError> {
        if let Some(v) = req.schema_version {
            if v != SCHEMA_VERSION {
                return Err(ServiceError::Mismatch(format!(
                    "request schema_version {v} (expected {SCHEMA_VERSION})"
                )));
            }
        }
        let checkpoint = self
            .checkpoints
            .get(&req.checkpoint)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownCheckpoint(req.checkpoint.clone()))?;
        let record = ProcedureRecord::from_jsonl(&req.procedure_jsonl)?;
        let snapshots = procedure_snapshots(&record, &checkpoint.preprocessing);
        let end = req.window_start.saturating_add(req.window_count);
        if req.window_count == 0 || end > snapshots.len() {
            return Err(ServiceError::BadRequest(format!(
                "windows [{}, {end}) outside the procedure's {} windows",
                req.window_start,
                snapshots.len()
            )));
        }
        let graph = expand(&record.procedure_id, &snapshots[req.window_start..end])
            .map_err(|e| ServiceError::InvalidProcedure(e.to_string()))?;
        self.purge_expired();
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let session = Session::new(id.clone(), req.checkpoint.clone(), checkpoint, graph)?;
        let response = CreateSessionResponse {
            schema_version: SCHEMA_VERSION,
            session_id: id.clone(),
            procedure_id: record.procedure_id,
            checkpoint: req.checkpoint,
            model: session.checkpoint.kind(),
            window_range: session.pristine.window_range,
            members: session.pristine.members.clone(),
            prediction: session.prediction(),
        };
        lock(&self.sessions).insert(
            id,
            Slot {
                session: Arc::new(Mutex::new(session)),
                last_used: Instant::now(),
            },
        );
        Ok(response)
    }

    pub fn delete_session(&self, id: &str) -> Result<DeleteResponse, ServiceError> {
        lock(&self.sessions)
            .remove(id)
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))?;
        Ok(DeleteResponse {
            schema_version: SCHEMA_VERSION,
            session_id: id.to_string(),
            deleted: true,
        })
    }

    fn health(&self) -> HealthResponse {
        HealthResponse {
            schema_version: SCHEMA_VERSION,
            status: "ok".into(),
            checkpoints: self
                .checkpoints
                .iter()
                .map(|(id, ck)| CheckpointInfo {
                    id: id.clone(),
                    model: ck.kind(),
                })
                .collect(),
            sessions: self.session_count(),
        }
    }
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(e.to_string()))
}

/// Runs `f` on the locked session in the blocking pool.
async fn with_session<R, F>(state: &Arc<AppState>, id: String, f: F) -> Result<R, ServiceError>
where
    R: Send + 'static,
    F: FnOnce(&mut Session) -> Result<R, ServiceError> + Send + 'static,
{
    let session = state.session(&id)?;
    tokio::task::spawn_blocking(move || f(&mut lock(&session)))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

async fn health(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    Json(state.health())
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<Json<CreateSessionResponse>, ServiceError> {
    let req: CreateSessionRequest = parse(&body)?;
    let state = state.clone();
    tokio::task::spawn_blocking(move || state.create_session(req))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
        .map(Json)
}

async fn delete_session(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<DeleteResponse>, ServiceError> {
    state.delete_session(&id).map(Json)
}

#[derive(Debug, Deserialize)]
struct WindowQuery {
    start: Option<usize>,
    end: Option<usize>,
}

async fn get_graph(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    query: Result<Query<WindowQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Json<GraphResponse>, ServiceError> {
    let Query(q) = query.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    with_session(&state, id, move |s| {
        let (lo, hi) = s.current.window_range;
        let (start, end) = (q.start.unwrap_or(lo), q.end.unwrap_or(hi));
        if !(lo <= start && start <= end && end <= hi) {
            return Err(ServiceError::BadRequest(format!(
                "window range [{start}, {end}) outside session windows [{lo}, {hi})"
            )));
        }
        Ok(GraphResponse {
            schema_version: SCHEMA_VERSION,
            session_id: s.id.clone(),
            depth: s.edits.len(),
            window_edges: (start..end)
                .map(|w| WindowEdges {
                    window: w,
                    snap_edges: s.current.edge_count_in_window(w),
                })
                .collect(),
            graph: s.graph_view(start, end),
        })
    })
    .await
    .map(Json)
}

async fn predict(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<PredictResponse>, ServiceError> {
    with_session(&state, id, |s| {
        Ok(PredictResponse {
            schema_version: SCHEMA_VERSION,
            session_id: s.id.clone(),
            prediction: s.prediction(),
        })
    })
    .await
    .map(Json)
}

async fn apply_edit(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<EditResponse>, ServiceError> {
    let req: EditRequest = parse(&body)?;
    with_session(&state, id, move |s| {
        s.apply(req.edit.clone())?;
        Ok(EditResponse {
            schema_version: SCHEMA_VERSION,
            session_id: s.id.clone(),
            edit: req.edit,
            prediction: s.prediction(),
        })
    })
    .await
    .map(Json)
}

async fn undo(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<UndoResponse>, ServiceError> {
    with_session(&state, id, |s| {
        let undone = s.undo()?;
        Ok(UndoResponse {
            schema_version: SCHEMA_VERSION,
            session_id: s.id.clone(),
            undone,
            prediction: s.prediction(),
        })
    })
    .await
    .map(Json)
}

fn faster_than(class: DurationClass) -> Result<DurationClass, ServiceError> {
    class.faster().ok_or_else(|| {
        ServiceError::BadRequest(format!(
            "no class faster than {class}; pass an explicit target"
        ))
    })
}

async fn suggest(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<SuggestResponse>, ServiceError> {
    let req: SuggestRequest = parse(&body)?;
    with_session(&state, id, move |s| {
        let target = match req.target {
            Some(t) => t,
            None => faster_than(s.prediction().predicted_class)?,
        };
        let result = search_trace(&s.current, &s.checkpoint, req.level, target)?;
        Ok(SuggestResponse {
            schema_version: SCHEMA_VERSION,
            session_id: s.id.clone(),
            result,
        })
    })
    .await
    .map(Json)
}

#[derive(Debug, Deserialize)]
struct LevelQuery {
    level: SearchLevel,
}

async fn sensitivity(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    query: Result<Query<LevelQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Json<SensitivityResponse>, ServiceError> {
    let Query(q) = query.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    with_session(&state, id, move |s| {
        let source = s.prediction().predicted_class;
        faster_than(source)?;
        let curve = sensitivity_curve(
            std::slice::from_ref(&s.current),
            &s.checkpoint,
            q.level,
            source,
        )?;
        Ok(SensitivityResponse {
            schema_version: SCHEMA_VERSION,
            session_id: s.id.clone(),
            curve,
        })
    })
    .await
    .map(Json)
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", axum::routing::delete(delete_session))
        .route("/v1/sessions/{id}/graph", get(get_graph))
        .route("/v1/sessions/{id}/predict", get(predict))
        .route("/v1/sessions/{id}/edits", post(apply_edit))
        .route("/v1/sessions/{id}/undo", post(undo))
        .route("/v1/sessions/{id}/suggest", post(suggest))
        .route("/v1/sessions/{id}/sensitivity", get(sensitivity))
        .with_state(state)
}

/// Router plus an optional static-file route for a browser client.
pub fn app(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    match static_dir {
        Some(dir) => Router::new()
            .nest_service("/ui", ServeDir::new(dir))
            .merge(router(state)),
        None => router(state),
    }
}

/// Serves until ctrl-c, purging idle sessions once a minute.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    static_dir: Option<PathBuf>,
) -> std::io::Result<()> {
    let purger = state.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            let n = purger.purge_expired();
            if n > 0 {
                log::info!("expired {n} idle sessions");
            }
        }
    });
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app(state, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
