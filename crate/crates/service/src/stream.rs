//! One live stream per session. On connect the full event log is replayed,
//! then client commands are applied in arrival order and every persisted
//! event is pushed back as it is acknowledged by the store.

use std::sync::Arc;

use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::Response;
use candor_core::driver::ClientCommand;
use candor_core::engine::SessionId;
use candor_core::store::{ChatEvent, SCHEMA_VERSION};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;
use tokio::time::{interval_at, sleep_until, Instant};

use crate::state::{join_error, ApiError, AppState, StreamClaim};

/// Everything the server sends, each frame tagged with the schema version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerFrame {
    pub schema_version: u32,
    #[serde(flatten)]
    pub body: ServerBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "frame", rename_all = "snake_case")]
pub enum ServerBody {
    Event { event: ChatEvent },
    /// Sent once the stored log has been replayed.
    ReplayComplete { last_event_id: u64 },
    Heartbeat { at: DateTime<Utc> },
    /// The client frame could not be read; nothing was persisted.
    Rejected { code: String, message: String },
}

impl ServerFrame {
    fn new(body: ServerBody) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            body,
        }
    }

    fn message(&self) -> Message {
        Message::Text(serde_json::to_string(self).expect("frame serializes").into())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ClientFrame {
    pub schema_version: Option<u32>,
    #[serde(flatten)]
    pub command: ClientCommand,
}

pub fn parse_client_frame(text: &str) -> Result<ClientCommand, Box<ServerBody>> {
    let frame: ClientFrame = serde_json::from_str(text).map_err(|e| ServerBody::Rejected {
        code: "malformed_frame".into(),
        message: e.to_string(),
    })?;
    match frame.schema_version {
        Some(v) if v != SCHEMA_VERSION => Err(Box::new(ServerBody::Rejected {
            code: "schema_version".into(),
            message: format!("server speaks schema {SCHEMA_VERSION}, frame has {v}"),
        })),
        _ => Ok(frame.command),
    }
}

pub async fn open(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    drop(state.lock(&id).await?);
    let claim = state.claim_stream(&id).ok_or_else(|| {
        ApiError::new(
            StatusCode::CONFLICT,
            "concurrent_connection",
            format!("session {id} already has a live stream"),
        )
    })?;
    Ok(ws.on_upgrade(move |socket| run(state, id, socket, claim)))
}

async fn run(state: Arc<AppState>, id: String, mut socket: WebSocket, claim: StreamClaim) {
    let _claim = claim;
    let completed = match replay(&state, &id, &mut socket).await {
        Ok(completed) => completed,
        Err(e) => {
            tracing::warn!(session = %id, error = %e.message, "replay failed");
            let _ = socket.send(Message::Close(None)).await;
            return;
        }
    };
    if completed {
        let _ = socket
            .send(Message::Close(Some(CloseFrame {
                code: 1000,
                reason: "session completed".into(),
            })))
            .await;
        return;
    }

    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<ChatEvent>();
    let (cmd_tx, cmd_rx) = mpsc::channel::<ClientCommand>(32);
    let worker = tokio::spawn(work(state.clone(), id.clone(), cmd_rx, out_tx));

    let heartbeat = state.config.heartbeat();
    let idle = state.config.idle_timeout();
    let mut beats = interval_at(Instant::now() + heartbeat, heartbeat);
    let mut deadline = Instant::now() + idle;

    loop {
        tokio::select! {
            incoming = socket.recv() => {
                let Some(Ok(msg)) = incoming else { break };
                deadline = Instant::now() + idle;
                match msg {
                    Message::Text(text) => match parse_client_frame(&text) {
                        Ok(cmd) => {
                            if cmd_tx.send(cmd).await.is_err() {
                                break;
                            }
                        }
                        Err(body) => {
                            if socket.send(ServerFrame::new(*body).message()).await.is_err() {
                                break;
                            }
                        }
                    },
                    Message::Close(_) => break,
                    _ => {}
                }
            }
            Some(event) = out_rx.recv() => {
                let frame = ServerFrame::new(ServerBody::Event { event });
                if socket.send(frame.message()).await.is_err() {
                    break;
                }
            }
            _ = beats.tick() => {
                let frame = ServerFrame::new(ServerBody::Heartbeat { at: Utc::now() });
                if socket.send(frame.message()).await.is_err() {
                    break;
                }
            }
            _ = sleep_until(deadline) => {
                tracing::info!(session = %id, "closing idle stream");
                let _ = socket
                    .send(Message::Close(Some(CloseFrame {
                        code: 1000,
                        reason: "idle timeout".into(),
                    })))
                    .await;
                break;
            }
        }
    }
    drop(cmd_tx);
    // Let an in-flight command finish so its events are persisted.
    let _ = worker.await;
}

/// Sends the stored log; returns whether the session is already complete.
async fn replay(state: &Arc<AppState>, id: &str, socket: &mut WebSocket) -> Result<bool, ApiError> {
    let guard = state.lock(id).await?;
    let driver = state.driver.clone();
    let sid = SessionId::new(id);
    let record = tokio::task::spawn_blocking(move || driver.store().load(&sid))
        .await
        .map_err(join_error)??;
    drop(guard);
    let last_event_id = record.last_event_id();
    let completed = record.snapshot.state.is_complete();
    for event in record.events {
        let frame = ServerFrame::new(ServerBody::Event { event });
        socket.send(frame.message()).await.map_err(ws_error)?;
    }
    let done = ServerFrame::new(ServerBody::ReplayComplete { last_event_id });
    socket.send(done.message()).await.map_err(ws_error)?;
    Ok(completed)
}

fn ws_error(e: axum::Error) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "stream", e.to_string())
}

async fn work(
    state: Arc<AppState>,
    id: String,
    mut commands: mpsc::Receiver<ClientCommand>,
    out: mpsc::UnboundedSender<ChatEvent>,
) {
    while let Some(cmd) = commands.recv().await {
        let mut guard = match state.lock(&id).await {
            Ok(guard) => guard,
            Err(e) => {
                tracing::error!(session = %id, error = %e.message, "session unavailable");
                return;
            }
        };
        let driver = state.driver.clone();
        let out = out.clone();
        let result = tokio::task::spawn_blocking(move || {
            let live = guard.as_mut().expect("lock loads the session");
            let outcome = driver.handle(live, &cmd, &mut |e| {
                let _ = out.send(e.clone());
            });
            (guard, outcome)
        })
        .await;
        match result {
            Ok((_, Ok(()))) => {}
            Ok((mut guard, Err(e))) => {
                tracing::error!(session = %id, error = %e, "command failed");
                // Drop the cached state so the next command reloads from the store.
                *guard = None;
            }
            Err(e) => tracing::error!(session = %id, error = %e, "command panicked"),
        }
    }
}
