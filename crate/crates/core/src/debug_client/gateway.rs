//! HTTP gateway over a session: REST commands plus a server-sent event
//! stream.
//!
//! - `GET /api/ranks`: mirror snapshot, one record per rank
//! - `POST /api/ranks/{r}/command`, `POST /api/broadcast`: body `{"cmd": "<MDWP line>"}`
//! - `GET /api/events`: SSE, one JSON object `{ts, rank, kind, args}` per event
//!
//! Anything else is served from the optional asset directory.

use std::convert::Infallible;
use std::net::{SocketAddr, TcpListener};
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::Deserialize;
use serde_json::json;
use tokio::sync::{broadcast, oneshot};

use super::session::Session;
use super::ClientError;
use crate::mdwp::Command;

#[derive(Debug, Clone, Default)]
pub struct GatewayOptions {
    pub port: u16,
    pub bind_all: bool,
    pub assets: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("gateway cannot listen on port {port}: {source}")]
    Bind {
        port: u16,
        #[source]
        source: std::io::Error,
    },
    #[error("gateway runtime: {0}")]
    Runtime(std::io::Error),
}

/// A running gateway. Dropping it stops the server.
pub struct Gateway {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl Gateway {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Gateway {
    fn drop(&mut self) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

#[derive(Deserialize)]
struct CommandBody {
    cmd: String,
}

fn bad_request(message: String) -> Response {
    (StatusCode::BAD_REQUEST, Json(json!({ "error": message }))).into_response()
}

fn parse_body(body: &[u8]) -> Result<Command, Box<Response>> {
    let b: CommandBody =
        serde_json::from_slice(body).map_err(|e| Box::new(bad_request(format!("invalid body: {e}"))))?;
    Command::parse(&b.cmd).map_err(|e| Box::new(bad_request(e.to_string())))
}

fn reply_json(rank: usize, res: Result<super::Reply, ClientError>) -> serde_json::Value {
    match res {
        Ok(r) => json!({ "rank": rank, "ok": r.is_ok(), "lines": r.lines }),
        Err(e) => json!({ "rank": rank, "ok": false, "error": e.to_string() }),
    }
}

async fn ranks(State(s): State<Arc<Session>>) -> Json<serde_json::Value> {
    let views: Vec<_> = s.mirror().into_values().collect();
    Json(json!(views))
}

async fn rank_command(State(s): State<Arc<Session>>, Path(rank): Path<usize>, body: Bytes) -> Response {
    let cmd = match parse_body(&body) {
        Ok(c) => c,
        Err(r) => return *r,
    };
    if s.endpoint(rank).is_none() {
        return (
            StatusCode::NOT_FOUND,
            Json(json!({ "error": format!("no rank {rank}") })),
        )
            .into_response();
    }
    let res = tokio::task::spawn_blocking(move || s.send(rank, &cmd)).await;
    match res {
        Ok(r) => Json(reply_json(rank, r)).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn broadcast_command(State(s): State<Arc<Session>>, body: Bytes) -> Response {
    let cmd = match parse_body(&body) {
        Ok(c) => c,
        Err(r) => return *r,
    };
    let res = tokio::task::spawn_blocking(move || s.broadcast(&cmd)).await;
    match res {
        Ok(map) => {
            let replies: Vec<_> = map.into_iter().map(|(r, v)| reply_json(r, v)).collect();
            Json(json!({ "replies": replies })).into_response()
        }
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn events(State(s): State<Arc<Session>>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = s.subscribe();
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(ev) => {
                    let data = serde_json::to_string(&ev).expect("event serializes");
                    return Some((Ok(Event::default().data(data)), rx));
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}

pub fn router(session: Arc<Session>, assets: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/ranks", get(ranks))
        .route("/api/ranks/{rank}/command", post(rank_command))
        .route("/api/broadcast", post(broadcast_command))
        .route("/api/events", get(events))
        .with_state(session);
    match assets {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Binds the port and serves on a background thread.
pub fn serve_gateway(session: Arc<Session>, opts: &GatewayOptions) -> Result<Gateway, GatewayError> {
    let host = if opts.bind_all { "0.0.0.0" } else { "127.0.0.1" };
    let bind_err = |source| GatewayError::Bind {
        port: opts.port,
        source,
    };
    let listener = TcpListener::bind((host, opts.port)).map_err(bind_err)?;
    listener.set_nonblocking(true).map_err(bind_err)?;
    let addr = listener.local_addr().map_err(bind_err)?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .map_err(GatewayError::Runtime)?;
    let app = router(session, opts.assets.clone());
    let (stop_tx, stop_rx) = oneshot::channel::<()>();
    let thread = std::thread::Builder::new()
        .name("mpxdbg-gateway".into())
        .spawn(move || {
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener registers");
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = stop_rx.await;
                    })
                    .await;
            });
            rt.shutdown_background();
        })
        .map_err(GatewayError::Runtime)?;
    Ok(Gateway {
        addr,
        stop: Some(stop_tx),
        thread: Some(thread),
    })
}
