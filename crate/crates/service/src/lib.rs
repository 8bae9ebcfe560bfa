//! HTTP session service for live participants.
//!
//! Each session is a single actor behind its own async mutex; the session
//! table is only locked long enough to look a session up. Every state change
//! is appended to the event log before the response is sent.

pub mod store;

use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use deanchor_core::config::RunConfig;
use deanchor_core::harness::report::METRICS_KIND;
use deanchor_core::schema;
use deanchor_core::seed;
use deanchor_core::session::{
    AdvanceRequest, AnswerSubmission, Clock, CreateSession, Health, LiveStudy, LogEvent, Session, SessionError,
    SurveyResponse, ADVANCE_ACK_KIND, ADVANCE_KIND, ANSWER_ACK_KIND, ANSWER_KIND, CREATE_KIND, ERROR_KIND,
    HEALTH_KIND, STATUS_KIND, SURVEY_KIND, TRIAL_KIND,
};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::sync::Mutex;
use tower_http::services::ServeDir;

use crate::store::{Snapshot, SnapshotEntry, Store};

const STREAM_ASSIGN: u64 = 50;

struct Slot {
    session: Session,
    events: u64,
}

pub struct AppState {
    study: LiveStudy,
    store: Store,
    clock: Arc<dyn Clock>,
    seed: u64,
    snapshot_every: u64,
    sessions: RwLock<HashMap<String, Arc<Mutex<Slot>>>>,
    next_participant: AtomicU64,
    pending: AtomicU64,
    snapshotting: Mutex<()>,
}

impl AppState {
    /// Opens the state directory and restores any sessions it holds.
    pub fn open(
        study: LiveStudy,
        config: &RunConfig,
        state_dir: &std::path::Path,
        clock: Arc<dyn Clock>,
    ) -> Result<Arc<Self>, store::StoreError> {
        let (store, recovered) = Store::open(state_dir, &study)?;
        let next = recovered.values().map(|e| e.session.participant + 1).max().unwrap_or(0);
        let sessions = recovered
            .into_iter()
            .map(|(id, e)| {
                let slot = Slot {
                    session: e.session,
                    events: e.events,
                };
                (id, Arc::new(Mutex::new(slot)))
            })
            .collect();
        Ok(Arc::new(Self {
            study,
            store,
            clock,
            seed: config.seed,
            snapshot_every: config.session.snapshot_every.max(1) as u64,
            sessions: RwLock::new(sessions),
            next_participant: AtomicU64::new(next),
            pending: AtomicU64::new(0),
            snapshotting: Mutex::new(()),
        }))
    }

    pub fn study(&self) -> &LiveStudy {
        &self.study
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().unwrap_or_else(|p| p.into_inner()).len()
    }

    fn lookup(&self, id: &str) -> Result<Arc<Mutex<Slot>>, ApiError> {
        self.sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::NotFound(id.to_string()).into())
    }

    fn persist(&self, slot: &mut Slot, events: &[LogEvent]) -> Result<(), ApiError> {
        self.store.append(events).map_err(ApiError::Store)?;
        slot.events += events.len() as u64;
        self.pending.fetch_add(events.len() as u64, Ordering::SeqCst);
        Ok(())
    }

    /// Writes a snapshot once enough events have accumulated.
    pub async fn maybe_snapshot(&self) {
        if self.pending.load(Ordering::SeqCst) < self.snapshot_every {
            return;
        }
        let Ok(_guard) = self.snapshotting.try_lock() else {
            return;
        };
        self.pending.store(0, Ordering::SeqCst);
        if let Err(e) = self.snapshot().await {
            tracing::error!("snapshot failed: {e}");
        }
    }

    pub async fn snapshot(&self) -> Result<(), store::StoreError> {
        let slots: Vec<Arc<Mutex<Slot>>> = self
            .sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .values()
            .cloned()
            .collect();
        let mut entries = Vec::with_capacity(slots.len());
        for s in slots {
            let slot = s.lock().await;
            entries.push(SnapshotEntry {
                events: slot.events,
                session: slot.session.clone(),
            });
        }
        entries.sort_by(|a, b| a.session.id.cmp(&b.session.id));
        self.store.write_snapshot(&Snapshot { sessions: entries })
    }

    /// Runs `op` on one session, logging whatever events it produced.
    async fn with_session<T>(
        &self,
        id: &str,
        op: impl FnOnce(&mut Session, &LiveStudy, u64, &mut Vec<LogEvent>) -> Result<T, SessionError>,
    ) -> Result<T, ApiError> {
        let slot = self.lookup(id)?;
        let result = {
            let mut slot = slot.lock().await;
            let mut events = Vec::new();
            let now = self.clock.now_ms();
            let r = op(&mut slot.session, &self.study, now, &mut events);
            self.persist(&mut slot, &events)?;
            r
        };
        self.maybe_snapshot().await;
        Ok(result?)
    }

    async fn create(&self, req: CreateSession) -> Result<deanchor_core::session::SessionStatus, ApiError> {
        let participant = match req.participant {
            Some(p) => {
                self.next_participant.fetch_max(p + 1, Ordering::SeqCst);
                p
            }
            None => self.next_participant.fetch_add(1, Ordering::SeqCst),
        };
        let assignment_seed = req
            .seed
            .unwrap_or_else(|| seed::derive_path(self.seed, &[STREAM_ASSIGN, participant]));
        let id = uuid::Uuid::new_v4().simple().to_string();
        let mut events = Vec::new();
        let now = self.clock.now_ms();
        let session = Session::create(&self.study, id.clone(), participant, assignment_seed, req.group, now, &mut events)?;
        let status = session.status(&self.study);
        let mut slot = Slot { session, events: 0 };
        self.persist(&mut slot, &events)?;
        self.sessions
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(id, Arc::new(Mutex::new(slot)));
        self.maybe_snapshot().await;
        Ok(status)
    }
}

#[derive(Debug)]
pub enum ApiError {
    Session(SessionError),
    Store(store::StoreError),
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        ApiError::Session(e)
    }
}

pub fn status_for(e: &SessionError) -> StatusCode {
    match e {
        SessionError::NotFound(_) => StatusCode::NOT_FOUND,
        SessionError::State(_) | SessionError::Conflict(_) => StatusCode::CONFLICT,
        SessionError::Gone(_) => StatusCode::GONE,
        SessionError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
        SessionError::Blocked { .. } => StatusCode::LOCKED,
        SessionError::Config(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

fn document<T: Serialize>(status: StatusCode, kind: &str, body: &T) -> Response {
    match schema::to_document(kind, body) {
        Ok(text) => (status, [(header::CONTENT_TYPE, "application/json")], text).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let e = match self {
            ApiError::Session(e) => e,
            ApiError::Store(e) => {
                tracing::error!("persistence failure: {e}");
                SessionError::Config(format!("persistence failure: {e}"))
            }
        };
        document(status_for(&e), ERROR_KIND, &e.body())
    }
}

fn parse<T: DeserializeOwned + Default>(kind: &str, body: &Bytes, optional: bool) -> Result<T, ApiError> {
    if optional && body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    let text = std::str::from_utf8(body).map_err(|_| SessionError::Validation("body is not UTF-8".into()))?;
    schema::from_document(kind, text).map_err(|e| SessionError::Validation(e.to_string()).into())
}

fn parse_required<T: DeserializeOwned>(kind: &str, body: &Bytes) -> Result<T, ApiError> {
    let text = std::str::from_utf8(body).map_err(|_| SessionError::Validation("body is not UTF-8".into()))?;
    schema::from_document(kind, text).map_err(|e| SessionError::Validation(e.to_string()).into())
}

type AppResult = Result<Response, ApiError>;

async fn healthz(State(app): State<Arc<AppState>>) -> Response {
    let h = Health {
        status: "ok".into(),
        sessions: app.session_count(),
        groups: app.study.groups.clone(),
    };
    document(StatusCode::OK, HEALTH_KIND, &h)
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> AppResult {
    let req: CreateSession = parse(CREATE_KIND, &body, true)?;
    let status = app.create(req).await?;
    Ok(document(StatusCode::CREATED, STATUS_KIND, &status))
}

async fn session_status(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult {
    let slot = app.lookup(&id)?;
    let status = slot.lock().await.session.status(&app.study);
    Ok(document(StatusCode::OK, STATUS_KIND, &status))
}

async fn next_trial(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult {
    let p = app.with_session(&id, |s, st, now, log| s.next_trial(st, now, log)).await?;
    Ok(document(StatusCode::OK, TRIAL_KIND, &p))
}

async fn answer(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> AppResult {
    let sub: AnswerSubmission = parse_required(ANSWER_KIND, &body)?;
    let ack = app
        .with_session(&id, |s, st, now, log| s.submit_answer(st, &sub, now, log))
        .await?;
    Ok(document(StatusCode::OK, ANSWER_ACK_KIND, &ack))
}

async fn advance(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> AppResult {
    let _: AdvanceRequest = parse(ADVANCE_KIND, &body, true)?;
    let ack = app.with_session(&id, |s, st, now, log| s.advance(st, now, log)).await?;
    Ok(document(StatusCode::OK, ADVANCE_ACK_KIND, &ack))
}

async fn survey(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> AppResult {
    let resp: SurveyResponse = parse_required(SURVEY_KIND, &body)?;
    let status = app
        .with_session(&id, |s, st, now, log| s.submit_survey(st, resp, now, log))
        .await?;
    Ok(document(StatusCode::OK, STATUS_KIND, &status))
}

async fn summary(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult {
    let slot = app.lookup(&id)?;
    let m = slot.lock().await.session.summary()?;
    Ok(document(StatusCode::OK, METRICS_KIND, &m))
}

/// The JSON API, plus static files from `static_dir` for any other path.
pub fn router(app: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_status))
        .route("/sessions/{id}/trial", get(next_trial))
        .route("/sessions/{id}/answer", post(answer))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/survey", post(survey))
        .route("/sessions/{id}/summary", get(summary))
        .with_state(app);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `addr` and serves until ctrl-c, writing a final snapshot on shutdown.
pub async fn serve(app: Arc<AppState>, addr: SocketAddr, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    serve_until(app, listener, static_dir, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}

/// Serves on an already bound listener until `shutdown` resolves.
pub async fn serve_until(
    app: Arc<AppState>,
    listener: tokio::net::TcpListener,
    static_dir: Option<PathBuf>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(app.clone(), static_dir))
        .with_graceful_shutdown(shutdown)
        .await?;
    if let Err(e) = app.snapshot().await {
        tracing::error!("final snapshot failed: {e}");
    }
    Ok(())
}
