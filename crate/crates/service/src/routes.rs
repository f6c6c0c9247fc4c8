use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use candor_core::content::ScenarioBrief;
use candor_core::engine::{SessionId, UserProfile};
use candor_core::store::{StoreError, SCHEMA_VERSION};
use candor_core::transcript::Transcript;
use serde::{Deserialize, Serialize};

use crate::state::{join_error, ApiError, AppState};
use crate::stream;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(session_summary))
        .route("/api/sessions/{id}/transcript", get(transcript))
        .route("/api/sessions/{id}/stream", get(stream::open))
        .route("/healthz", get(healthz))
        .route("/readyz", get(readyz))
        .with_state(state)
}

#[derive(Debug, Clone, Deserialize)]
pub struct CreateSession {
    #[serde(default)]
    pub first_name: String,
    #[serde(default)]
    pub pronouns: String,
    #[serde(default)]
    pub topic: String,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionCreated {
    pub schema_version: u32,
    pub session_id: String,
    pub character_name: String,
    pub brief: ScenarioBrief,
    pub seed: u64,
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(body): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let profile = UserProfile::new(body.first_name, body.pronouns, body.topic);
    let seed = state
        .config
        .seed_override
        .or(body.seed)
        .unwrap_or_else(rand::random);
    let id = SessionId::new(uuid::Uuid::new_v4().simple().to_string());
    let driver = state.driver.clone();
    let live = tokio::task::spawn_blocking(move || driver.create_session(id, profile, seed))
        .await
        .map_err(join_error)??;
    let created = SessionCreated {
        schema_version: SCHEMA_VERSION,
        session_id: live.id().as_str().to_string(),
        character_name: live.state.character_name.clone(),
        brief: live.state.brief.clone(),
        seed,
    };
    tracing::info!(session = %created.session_id, seed, "session created");
    state.insert(live).await;
    Ok((StatusCode::CREATED, Json(created)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionSummary {
    pub schema_version: u32,
    pub session_id: String,
    pub character_name: String,
    pub brief: ScenarioBrief,
    pub phase: String,
    pub current_turn: Option<u32>,
    pub turns_started: usize,
    /// Turns the schedule has not opened yet.
    pub turns_unopened: usize,
    pub completed: bool,
    pub last_event_id: u64,
}

async fn session_summary(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<SessionSummary>, ApiError> {
    let guard = state.lock(&id).await?;
    let live = guard.as_ref().expect("lock loads the session");
    let s = &live.state;
    Ok(Json(SessionSummary {
        schema_version: SCHEMA_VERSION,
        session_id: id,
        character_name: s.character_name.clone(),
        brief: s.brief.clone(),
        phase: s.phase.to_string(),
        current_turn: s.current_turn().map(|t| t.turn),
        turns_started: s.turns.len(),
        turns_unopened: s.schedule.free_turns_remaining as usize + s.schedule.rounds_left(),
        completed: s.is_complete(),
        last_event_id: live.last_event_id,
    }))
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct TranscriptQuery {
    #[serde(default)]
    pub redact: bool,
}

fn accepts_json(headers: &HeaderMap) -> bool {
    let Some(accept) = headers.get(header::ACCEPT).and_then(|v| v.to_str().ok()) else {
        return true;
    };
    accept.split(',').any(|part| {
        let media = part.split(';').next().unwrap_or("").trim();
        matches!(media, "" | "*/*" | "application/*" | "application/json")
    })
}

async fn transcript(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(query): Query<TranscriptQuery>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    if !accepts_json(&headers) {
        return Err(ApiError::new(
            StatusCode::NOT_ACCEPTABLE,
            "not_acceptable",
            "transcripts are available as application/json",
        ));
    }
    // Holding the session lock keeps the log and snapshot consistent.
    let _guard = state.lock(&id).await?;
    let driver = state.driver.clone();
    let sid = SessionId::new(id);
    let record = tokio::task::spawn_blocking(move || driver.store().load(&sid))
        .await
        .map_err(join_error)??;
    let doc = Transcript::from_record(&record).map_err(|e| {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "corrupt_log", e.to_string())
    })?;
    let doc = if query.redact { doc.redacted() } else { doc };
    Ok(([(header::CONTENT_TYPE, "application/json")], doc.to_json()).into_response())
}

async fn healthz() -> &'static str {
    "ok"
}

async fn readyz(State(state): State<Arc<AppState>>) -> Result<&'static str, ApiError> {
    let driver = state.driver.clone();
    tokio::task::spawn_blocking(move || driver.store().list())
        .await
        .map_err(join_error)?
        .map_err(|e: StoreError| ApiError {
            status: StatusCode::SERVICE_UNAVAILABLE,
            ..ApiError::from(e)
        })?;
    Ok("ready")
}
