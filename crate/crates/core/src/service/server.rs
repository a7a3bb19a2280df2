//! WebSocket endpoint `/ws`.
//!
//! A connection creates a session, or reattaches to one with
//! `/ws?session=<id>` after a drop. While a task runs, the connection
//! ticks the session at the configured rate and awaits every send, so a
//! slow client pauses the loop instead of losing frames. A dropped client
//! leaves its session paused with history intact.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use serde::Deserialize;
use tokio::net::TcpListener;
use tokio::time::MissedTickBehavior;

use super::{ErrorCode, ServerMessage, ServiceContext, Session};
use crate::{Error, Result};

pub const DEFAULT_PORT: u16 = 8787;

#[derive(Clone)]
pub struct AppState {
    ctx: Arc<ServiceContext>,
    sessions: Arc<Mutex<HashMap<String, Arc<tokio::sync::Mutex<Session>>>>>,
    next_id: Arc<AtomicU64>,
}

impl AppState {
    pub fn new(ctx: Arc<ServiceContext>) -> Self {
        Self {
            ctx,
            sessions: Arc::default(),
            next_id: Arc::new(AtomicU64::new(1)),
        }
    }

    fn session(&self, id: Option<&str>) -> Arc<tokio::sync::Mutex<Session>> {
        let mut map = self.sessions.lock().unwrap();
        if let Some(s) = id.and_then(|id| map.get(id)) {
            return s.clone();
        }
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let s = Arc::new(tokio::sync::Mutex::new(Session::new(&id, self.ctx.clone())));
        map.insert(id, s.clone());
        s
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/ws", get(ws_handler))
        .with_state(state)
}

#[derive(Debug, Deserialize)]
struct ConnectParams {
    session: Option<String>,
}

async fn ws_handler(
    ws: WebSocketUpgrade,
    Query(params): Query<ConnectParams>,
    State(state): State<AppState>,
) -> Response {
    ws.on_upgrade(move |socket| handle_socket(socket, state, params.session))
}

async fn send_all(socket: &mut WebSocket, msgs: Vec<String>) -> bool {
    for m in msgs {
        if socket.send(Message::Text(m.into())).await.is_err() {
            return false;
        }
    }
    true
}

async fn handle_socket(mut socket: WebSocket, state: AppState, session_id: Option<String>) {
    let shared = state.session(session_id.as_deref());
    let Ok(mut session) = shared.try_lock_owned() else {
        let msg = serde_json::to_string(&ServerMessage::Error {
            code: ErrorCode::SessionInUse,
            message: "session is attached to another connection".into(),
        })
        .unwrap();
        let _ = socket.send(Message::Text(msg.into())).await;
        return;
    };
    tracing::info!(session = session.id(), "client attached");
    if !send_all(&mut socket, vec![session.hello()]).await {
        return;
    }
    let period = Duration::from_secs_f64(1.0 / state.ctx.config.rate_hz);
    let mut ticker = tokio::time::interval(period);
    ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
    loop {
        let running = session.is_running();
        tokio::select! {
            msg = socket.recv() => {
                let replies = match msg {
                    Some(Ok(Message::Text(t))) => {
                        let was_running = session.is_running();
                        let r = session.handle_message(t.as_str());
                        if !was_running && session.is_running() {
                            ticker.reset_immediately();
                        }
                        r
                    }
                    Some(Ok(Message::Binary(_))) => session.handle_message("binary frame"),
                    Some(Ok(_)) => continue,
                    Some(Err(_)) | None => break,
                };
                if !send_all(&mut socket, replies).await {
                    break;
                }
            }
            _ = ticker.tick(), if running => {
                let msgs = session.tick();
                if !send_all(&mut socket, msgs).await {
                    break;
                }
            }
        }
    }
    tracing::info!(session = session.id(), status = ?session.status(), "client detached");
}

/// Serves until the listener fails.
pub async fn serve(ctx: Arc<ServiceContext>, listener: TcpListener) -> Result<()> {
    if let Ok(addr) = listener.local_addr() {
        tracing::info!("monitor listening on ws://{addr}/ws");
    }
    axum::serve(listener, router(AppState::new(ctx)))
        .await
        .map_err(|e| Error::io("<socket>", e))
}
