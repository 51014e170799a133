//! HTTP session service for live audits.
//!
//! Endpoints:
//!
//! * `POST /sessions` creates a session from a [`CreateSession`] document;
//! * `GET /sessions` lists sessions;
//! * `GET /sessions/{id}` returns the status document (`?hardest=N` sets
//!   how many alt-orders it lists);
//! * `POST /sessions/{id}/ballots` submits `{"ranking": [names]}`;
//! * `POST /sessions/{id}/undo` reverts the last ballot;
//! * `DELETE /sessions/{id}` drops the session and its journal.
//!
//! Errors are `{"error": message}` with status 400 (bad config), 404
//! (unknown session), 409 (duplicate id, session not running, nothing to
//! undo) or 422 (invalid ranking).

pub mod api;
pub mod journal;

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use awaire_core::engine::{AuditState, EngineError};
use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::net::TcpListener;
use tokio::sync::Mutex;

pub use api::{
    ApiError, BallotReply, ConfigSummary, CreateSession, SessionDoc, SessionListing, SubmitBallot, UndoReply,
    REPLY_HARDEST, STATUS_HARDEST,
};
use journal::{Entry, Journal, JournalError};

pub struct Session {
    pub id: String,
    pub created: u64,
    pub state: AuditState,
    journal: Option<Journal>,
}

impl Session {
    pub fn journal_path(&self) -> Option<&Path> {
        self.journal.as_ref().map(|j| j.path())
    }

    fn record(&mut self, entry: &Entry) -> Result<(), ApiError> {
        match &mut self.journal {
            Some(j) => j.append(entry).map_err(|e| ApiError::internal(format!("journal write failed: {e}"))),
            None => Ok(()),
        }
    }
}

/// Shared service state: the session table and the optional journal
/// directory.
pub struct Sessions {
    table: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    journal_dir: Option<PathBuf>,
    next_id: AtomicU64,
}

pub type AppState = Arc<Sessions>;

impl Sessions {
    /// Sessions kept in memory only.
    pub fn in_memory() -> AppState {
        Arc::new(Sessions { table: RwLock::default(), journal_dir: None, next_id: AtomicU64::new(1) })
    }

    /// Journals sessions under `dir`, first recovering every journal
    /// already there.
    pub fn with_journal_dir(dir: impl Into<PathBuf>) -> Result<AppState, JournalError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|source| JournalError::Io { path: dir.clone(), source })?;
        let mut table = HashMap::new();
        let entries = std::fs::read_dir(&dir).map_err(|source| JournalError::Io { path: dir.clone(), source })?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == journal::EXTENSION))
            .collect();
        paths.sort();
        for path in paths {
            let rec = journal::recover(&path)?;
            log::info!("recovered session {} at draw {}", rec.id, rec.state.draws_seen());
            let session = Session { id: rec.id.clone(), created: rec.created, state: rec.state, journal: Some(rec.journal) };
            table.insert(rec.id, Arc::new(Mutex::new(session)));
        }
        Ok(Arc::new(Sessions { table: RwLock::new(table), journal_dir: Some(dir), next_id: AtomicU64::new(1) }))
    }

    pub fn len(&self) -> usize {
        self.table.read().expect("session table lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, id: &str) -> Option<Arc<Mutex<Session>>> {
        self.table.read().expect("session table lock").get(id).cloned()
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.get(id).ok_or_else(|| ApiError::not_found(id))
    }

    fn fresh_id(&self, created: u64, table: &HashMap<String, Arc<Mutex<Session>>>) -> String {
        loop {
            let id = format!("s{created:x}-{}", self.next_id.fetch_add(1, Ordering::Relaxed));
            let on_disk = self.journal_dir.as_ref().is_some_and(|d| d.join(format!("{id}.{}", journal::EXTENSION)).exists());
            if !table.contains_key(&id) && !on_disk {
                return id;
            }
        }
    }

    pub fn create(&self, request: &CreateSession) -> Result<SessionDoc, ApiError> {
        let config = request.to_config().map_err(ApiError::bad_request)?;
        if let Some(id) = &request.id {
            validate_id(id)?;
        }
        let state = AuditState::new(config).map_err(|e| ApiError::bad_request(e.to_string()))?;
        let created = now();
        let mut table = self.table.write().expect("session table lock");
        let id = match &request.id {
            Some(id) if table.contains_key(id) => return Err(ApiError::conflict(format!("session {id:?} already exists"))),
            Some(id) => id.clone(),
            None => self.fresh_id(created, &table),
        };
        let journal = match &self.journal_dir {
            Some(dir) => Some(Journal::create(dir, &id, created, state.config()).map_err(|e| {
                if e.kind() == std::io::ErrorKind::AlreadyExists {
                    ApiError::conflict(format!("a journal for session {id:?} already exists"))
                } else {
                    ApiError::internal(format!("cannot create journal: {e}"))
                }
            })?),
            None => None,
        };
        let doc = SessionDoc::new(&id, created, &state, STATUS_HARDEST);
        table.insert(id.clone(), Arc::new(Mutex::new(Session { id, created, state, journal })));
        Ok(doc)
    }

    pub async fn list(&self) -> Vec<SessionListing> {
        let sessions: BTreeMap<String, Arc<Mutex<Session>>> =
            self.table.read().expect("session table lock").iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        let mut out = Vec::with_capacity(sessions.len());
        for s in sessions.values() {
            let s = s.lock().await;
            out.push(SessionListing {
                id: s.id.clone(),
                created: s.created,
                status: s.state.audit_status(),
                draws_seen: s.state.draws_seen(),
                certified: s.state.status_with(0).certified,
            });
        }
        out
    }

    pub async fn status(&self, id: &str, hardest: usize) -> Result<SessionDoc, ApiError> {
        let s = self.session(id)?;
        let s = s.lock().await;
        Ok(SessionDoc::new(&s.id, s.created, &s.state, hardest))
    }

    pub async fn submit(&self, id: &str, names: &[String]) -> Result<BallotReply, ApiError> {
        let s = self.session(id)?;
        let mut s = s.lock().await;
        let status = s.state.audit_status();
        if status != awaire_core::engine::AuditStatus::Running {
            return Err(ApiError::conflict(format!("session is not running (status {status})")));
        }
        let ranking = s.state.ranking_from_names(names).map_err(|e| ApiError::unprocessable(e.to_string()))?;
        s.state.check_ranking(&ranking).map_err(|e| ApiError::unprocessable(e.to_string()))?;
        s.record(&Entry::Ballot { ranking: names.to_vec() })?;
        let report = s.state.process_ballot(&ranking).map_err(engine_error)?;
        Ok(BallotReply {
            id: s.id.clone(),
            draw: report.draw,
            newly_rejected: report.newly_rejected,
            status: s.state.status_with(REPLY_HARDEST),
        })
    }

    pub async fn undo(&self, id: &str) -> Result<UndoReply, ApiError> {
        let s = self.session(id)?;
        let mut s = s.lock().await;
        if s.state.draws_seen() == 0 {
            return Err(ApiError::conflict("nothing to undo"));
        }
        let mut next = s.state.clone();
        let undone = next.undo_last().map_err(engine_error)?;
        s.record(&Entry::Undo)?;
        s.state = next;
        let names = &s.state.config().candidates;
        let undone = undone.prefs().iter().map(|&c| names[c].clone()).collect();
        Ok(UndoReply { id: s.id.clone(), undone, status: s.state.status_with(STATUS_HARDEST) })
    }

    pub async fn delete(&self, id: &str) -> Result<(), ApiError> {
        let s = self.table.write().expect("session table lock").remove(id).ok_or_else(|| ApiError::not_found(id))?;
        let s = s.lock().await;
        if let Some(path) = s.journal_path() {
            std::fs::remove_file(path).map_err(|e| ApiError::internal(format!("cannot remove journal: {e}")))?;
        }
        Ok(())
    }
}

fn engine_error(e: EngineError) -> ApiError {
    match e {
        EngineError::NotRunning(_) | EngineError::NothingToUndo | EngineError::NoBallotLog => {
            ApiError::conflict(e.to_string())
        }
        EngineError::InvalidRanking(_) | EngineError::CandidateOutOfRange(_) => ApiError::unprocessable(e.to_string()),
        other => ApiError::internal(other.to_string()),
    }
}

/// Client ids become journal file names, so they are restricted to
/// `[A-Za-z0-9_-]{1,64}`.
fn validate_id(id: &str) -> Result<(), ApiError> {
    let ok = !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-');
    if ok {
        Ok(())
    } else {
        Err(ApiError::bad_request(format!("session id {id:?} must match [A-Za-z0-9_-]{{1,64}}")))
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[derive(serde::Deserialize)]
struct StatusQuery {
    hardest: Option<usize>,
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let request: CreateSession =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid session request: {e}")))?;
    let doc = app.create(&request)?;
    Ok((StatusCode::CREATED, Json(doc)).into_response())
}

async fn list_sessions(State(app): State<AppState>) -> Json<Vec<SessionListing>> {
    Json(app.list().await)
}

async fn get_session(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<StatusQuery>,
) -> Result<Json<SessionDoc>, ApiError> {
    Ok(Json(app.status(&id, q.hardest.unwrap_or(STATUS_HARDEST)).await?))
}

async fn submit_ballot(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<BallotReply>, ApiError> {
    let session = app.session(&id)?;
    drop(session);
    let ballot: SubmitBallot =
        serde_json::from_slice(&body).map_err(|e| ApiError::unprocessable(format!("invalid ballot: {e}")))?;
    Ok(Json(app.submit(&id, &ballot.ranking).await?))
}

async fn undo_ballot(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<UndoReply>, ApiError> {
    Ok(Json(app.undo(&id).await?))
}

async fn delete_session(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<StatusCode, ApiError> {
    app.delete(&id).await?;
    Ok(StatusCode::NO_CONTENT)
}

/// Allows the browser console to call the service from another origin.
async fn cors(request: Request, next: Next) -> Response {
    let mut response = if request.method() == Method::OPTIONS {
        StatusCode::NO_CONTENT.into_response()
    } else {
        next.run(request).await
    };
    let h = response.headers_mut();
    h.insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, HeaderValue::from_static("*"));
    h.insert(header::ACCESS_CONTROL_ALLOW_METHODS, HeaderValue::from_static("GET, POST, DELETE, OPTIONS"));
    h.insert(header::ACCESS_CONTROL_ALLOW_HEADERS, HeaderValue::from_static("content-type"));
    response
}

pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/ballots", post(submit_ballot))
        .route("/sessions/{id}/undo", post(undo_ballot))
        .layer(middleware::from_fn(cors))
        .with_state(app)
}

/// Serves on an already bound listener until `shutdown` resolves.
pub async fn serve_on<F>(listener: TcpListener, app: AppState, shutdown: F) -> std::io::Result<()>
where
    F: std::future::Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(app)).with_graceful_shutdown(shutdown).await
}

/// Binds `addr` and serves until interrupted.
pub async fn serve(addr: SocketAddr, app: AppState) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    serve_on(listener, app, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}
