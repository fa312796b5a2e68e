//! HTTP+JSON front end over the current snapshot.
//!
//! `POST /expand {keyword, market}`, `POST /match {query, market}`,
//! `POST /refresh`, `GET /healthz`. Malformed bodies get 400, unknown
//! markets 404, and every endpoint except `/refresh` answers 503 until a
//! snapshot is installed.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::oneshot;

use crate::error::{Error, Result};
use crate::matching::{load_snapshot_dir, Snapshot, SnapshotHolder};

pub const VERSION_HEADER: &str = "x-snapshot-version";

pub struct AppState {
    pub holder: SnapshotHolder,
    pub snapshot_dir: PathBuf,
}

impl AppState {
    pub fn new(snapshot_dir: impl Into<PathBuf>) -> Self {
        Self {
            holder: SnapshotHolder::new(),
            snapshot_dir: snapshot_dir.into(),
        }
    }

    /// Loads the snapshot directory and installs it.
    pub fn refresh(&self) -> Result<(Option<u64>, u64)> {
        self.holder.replace_with(|prev| load_snapshot_dir(&self.snapshot_dir, prev))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExpandRequest {
    keyword: String,
    market: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MatchRequest {
    query: String,
    market: String,
}

#[derive(Serialize)]
struct RefreshResponse {
    old_version: Option<u64>,
    new_version: u64,
}

fn json_response(status: StatusCode, body: String, version: Option<u64>) -> Response {
    let mut resp = (status, body).into_response();
    let h = resp.headers_mut();
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
    if let Some(v) = version {
        h.insert(VERSION_HEADER, HeaderValue::from(v));
    }
    resp
}

fn error_response(status: StatusCode, message: impl std::fmt::Display) -> Response {
    json_response(status, json!({ "error": message.to_string() }).to_string(), None)
}

fn status_for(e: &Error) -> StatusCode {
    match e {
        Error::UnknownMarket(_) => StatusCode::NOT_FOUND,
        Error::NoSnapshot => StatusCode::SERVICE_UNAVAILABLE,
        Error::VersionRegression { .. } => StatusCode::CONFLICT,
        Error::Internal(_) | Error::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

#[allow(clippy::result_large_err)]
fn current(state: &AppState) -> std::result::Result<Arc<Snapshot>, Response> {
    state
        .holder
        .load()
        .ok_or_else(|| error_response(StatusCode::SERVICE_UNAVAILABLE, Error::NoSnapshot))
}

#[allow(clippy::result_large_err)]
fn parse<T: for<'de> Deserialize<'de>>(body: &Bytes) -> std::result::Result<T, Response> {
    serde_json::from_slice(body).map_err(|e| error_response(StatusCode::BAD_REQUEST, format!("malformed body: {e}")))
}

async fn expand(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let snap = match current(&state) {
        Ok(s) => s,
        Err(r) => return r,
    };
    let req: ExpandRequest = match parse(&body) {
        Ok(r) => r,
        Err(r) => return r,
    };
    let out = snap
        .expander(&req.market)
        .and_then(|ex| ex.expand_text(&req.keyword))
        .and_then(|rec| Ok(serde_json::to_string(&rec)?));
    match out {
        Ok(body) => json_response(StatusCode::OK, body, Some(snap.version)),
        Err(e) => error_response(status_for(&e), e),
    }
}

async fn match_query(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let snap = match current(&state) {
        Ok(s) => s,
        Err(r) => return r,
    };
    let req: MatchRequest = match parse(&body) {
        Ok(r) => r,
        Err(r) => return r,
    };
    // One snapshot reference serves the whole request.
    let out = snap
        .match_query(&req.query, &req.market)
        .and_then(|recs| Ok(serde_json::to_string(&recs)?));
    match out {
        Ok(body) => json_response(StatusCode::OK, body, Some(snap.version)),
        Err(e) => error_response(status_for(&e), e),
    }
}

async fn refresh(State(state): State<Arc<AppState>>) -> Response {
    let st = state.clone();
    let res = tokio::task::spawn_blocking(move || st.refresh()).await;
    match res {
        Ok(Ok((old_version, new_version))) => json_response(
            StatusCode::OK,
            serde_json::to_string(&RefreshResponse { old_version, new_version }).expect("plain struct"),
            Some(new_version),
        ),
        Ok(Err(e)) => {
            let status = match e {
                Error::VersionRegression { .. } => StatusCode::CONFLICT,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            };
            error_response(status, e)
        }
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

async fn healthz(State(state): State<Arc<AppState>>) -> Response {
    match state.holder.version() {
        Some(v) => json_response(
            StatusCode::OK,
            json!({ "status": "ok", "snapshot_version": v }).to_string(),
            Some(v),
        ),
        None => json_response(
            StatusCode::SERVICE_UNAVAILABLE,
            json!({ "status": "no_snapshot", "snapshot_version": null }).to_string(),
            None,
        ),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/expand", post(expand))
        .route("/match", post(match_query))
        .route("/refresh", post(refresh))
        .route("/healthz", get(healthz))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Internal(format!("bind {addr}: {e}")))?;
    eprintln!("listening on {}", listener.local_addr().map_err(|e| Error::Internal(e.to_string()))?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::Internal(e.to_string()))
}

/// A server running on its own thread; shuts down when dropped.
pub struct ServerHandle {
    pub addr: SocketAddr,
    pub state: Arc<AppState>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` (port 0 picks a free port) and serves `state` in the
/// background.
pub fn spawn(state: Arc<AppState>, addr: SocketAddr, workers: usize) -> Result<ServerHandle> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(workers.max(1))
        .enable_all()
        .build()
        .map_err(|e| Error::Internal(e.to_string()))?;
    let std_listener = std::net::TcpListener::bind(addr).map_err(|e| Error::Internal(format!("bind {addr}: {e}")))?;
    std_listener
        .set_nonblocking(true)
        .map_err(|e| Error::Internal(e.to_string()))?;
    let bound = std_listener.local_addr().map_err(|e| Error::Internal(e.to_string()))?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(state.clone());
    let thread = std::thread::spawn(move || {
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(std_listener).expect("listener from std");
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
    });
    Ok(ServerHandle {
        addr: bound,
        state,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
