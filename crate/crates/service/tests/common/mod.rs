#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use candor_core::driver::ClientCommand;
use candor_core::engine::{SessionId, SessionPhase, SessionState};
use candor_core::orchestrator::awaits_generation;
use candor_core::store::{ChatEvent, ChatPayload};
use candor_service::stream::{ServerBody, ServerFrame};
use candor_service::{router, AppState, ServiceConfig};
use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

pub type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

pub struct Server {
    pub addr: SocketAddr,
    pub state: Arc<AppState>,
}

pub async fn serve(config: ServiceConfig) -> Server {
    let state = AppState::build(config).expect("state builds");
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = router(state.clone());
    tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    Server { addr, state }
}

impl Server {
    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    pub async fn create(&self, seed: u64) -> String {
        let body = serde_json::json!({
            "first_name": "Mark",
            "pronouns": "he/him",
            "topic": "machine learning",
            "seed": seed,
        });
        let (status, json) = post_json(self.addr, "/api/sessions", &body).await;
        assert_eq!(status, 201, "{json}");
        json["session_id"].as_str().unwrap().to_string()
    }

    pub async fn connect(&self, id: &str) -> Result<Ws, tokio_tungstenite::tungstenite::Error> {
        let url = format!("ws://{}/api/sessions/{id}/stream", self.addr);
        connect_async(url).await.map(|(ws, _)| ws)
    }

    pub fn initial(&self, id: &str) -> SessionState {
        self.state.driver.store().load(&SessionId::new(id)).unwrap().meta.initial
    }

    pub fn snapshot(&self, id: &str) -> SessionState {
        self.state.driver.store().load(&SessionId::new(id)).unwrap().snapshot.state
    }
}

pub async fn request(
    addr: SocketAddr,
    method: &str,
    path: &str,
    headers: &[(&str, &str)],
    body: Option<&serde_json::Value>,
) -> (u16, String) {
    let client = reqwest::Client::new();
    let method = reqwest::Method::from_bytes(method.as_bytes()).unwrap();
    let mut req = client.request(method, format!("http://{addr}{path}"));
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    if let Some(body) = body {
        req = req.json(body);
    }
    let resp = req.send().await.unwrap();
    let status = resp.status().as_u16();
    (status, resp.text().await.unwrap())
}

pub async fn get_json(addr: SocketAddr, path: &str) -> (u16, serde_json::Value) {
    let (status, body) = request(addr, "GET", path, &[], None).await;
    (status, serde_json::from_str(&body).unwrap_or(serde_json::Value::Null))
}

pub async fn post_json(addr: SocketAddr, path: &str, body: &serde_json::Value) -> (u16, serde_json::Value) {
    let (status, text) = request(addr, "POST", path, &[], Some(body)).await;
    (status, serde_json::from_str(&text).unwrap_or(serde_json::Value::Null))
}

pub async fn next_frame(ws: &mut Ws) -> Option<ServerFrame> {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(5), ws.next())
            .await
            .expect("frame within 5 s")?;
        match msg.ok()? {
            Message::Text(text) => return Some(serde_json::from_str(&text).unwrap()),
            Message::Close(_) => return None,
            _ => {}
        }
    }
}

pub async fn send(ws: &mut Ws, cmd: &ClientCommand) {
    let text = serde_json::to_string(cmd).unwrap();
    ws.send(Message::Text(text.into())).await.unwrap();
}

/// Client-side view rebuilt purely from streamed events.
pub struct Mirror {
    pub state: SessionState,
    pub events: Vec<ChatEvent>,
}

impl Mirror {
    pub fn new(initial: SessionState) -> Self {
        Self { state: initial, events: Vec::new() }
    }

    pub fn absorb(&mut self, event: ChatEvent) {
        if let Some(e) = event.payload.engine_event() {
            self.state.apply(&e).expect("server only streams accepted events");
        }
        self.events.push(event);
    }

    /// Reads the replayed log up to the replay marker.
    pub async fn replay(&mut self, ws: &mut Ws) -> u64 {
        loop {
            match next_frame(ws).await.expect("stream open").body {
                ServerBody::Event { event } => self.absorb(event),
                ServerBody::ReplayComplete { last_event_id } => return last_event_id,
                ServerBody::Heartbeat { .. } => {}
                other => panic!("unexpected during replay: {other:?}"),
            }
        }
    }

    /// Reads frames until the session waits on the user again.
    pub async fn settle(&mut self, ws: &mut Ws) {
        while awaits_generation(&self.state) {
            match next_frame(ws).await.expect("stream open").body {
                ServerBody::Event { event } => {
                    let notice = matches!(event.payload, ChatPayload::ErrorNotice { .. });
                    self.absorb(event);
                    assert!(!notice, "generation failed: {:?}", self.events.last());
                }
                ServerBody::Heartbeat { .. } => {}
                other => panic!("unexpected frame {other:?}"),
            }
        }
    }

    /// Reads frames until an event with `tag` arrives.
    pub async fn until(&mut self, ws: &mut Ws, tag: &str) -> ChatEvent {
        loop {
            if let ServerBody::Event { event } = next_frame(ws).await.expect("stream open").body {
                self.absorb(event.clone());
                if event.payload.tag() == tag {
                    return event;
                }
            }
        }
    }

    pub async fn act(&mut self, ws: &mut Ws, cmd: ClientCommand) {
        send(ws, &cmd).await;
        match cmd {
            ClientCommand::StartChat => {
                self.until(ws, "start_chat").await;
            }
            ClientCommand::SubmitDraft { .. } => {
                self.until(ws, "submit_draft").await;
            }
            ClientCommand::SelectOption { .. } => {
                self.until(ws, "select_option").await;
            }
            ClientCommand::SubmitContinue { .. } => {
                self.until(ws, "submit_continue").await;
            }
            ClientCommand::Retry => {}
        }
        self.settle(ws).await;
    }

    /// The command a scripted user would send next.
    pub fn next_command(&self, wrong: bool) -> Option<ClientCommand> {
        let turn = self.state.current_turn();
        Some(match &self.state.phase {
            SessionPhase::Briefed => ClientCommand::StartChat,
            SessionPhase::AwaitingDraft { .. } => ClientCommand::SubmitDraft {
                text: "that sounds fun, tell me more".into(),
            },
            SessionPhase::AwaitingSelection => {
                let set = turn?.option_set.as_ref()?;
                let index = if wrong { (set.appropriate_index + 1) % 3 } else { set.appropriate_index };
                ClientCommand::SelectOption { index }
            }
            SessionPhase::AwaitingContinue => ClientCommand::SubmitContinue {
                text: turn?.feedback.as_ref()?.continue_message.clone()?,
            },
            _ => return None,
        })
    }
}
