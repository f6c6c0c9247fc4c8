use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex};

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use candor_core::content::{ContentBundle, ContentError, Linter};
use candor_core::driver::{DriverError, LiveSession, SessionDriver, SystemClock};
use candor_core::engine::{EngineError, SessionId};
use candor_core::gateway::{Gateway, GatewayError, HttpTransport, StubScript};
use candor_core::orchestrator::Orchestrator;
use candor_core::store::{FileStore, MemoryStore, SessionStore, StoreError};
use serde::Serialize;
use thiserror::Error;
use tokio::sync::{Mutex as AsyncMutex, OwnedMutexGuard};

use crate::config::{ServiceConfig, StorageKind};

#[derive(Debug, Error)]
pub enum StartupError {
    #[error(transparent)]
    Content(#[from] ContentError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Error body returned by every endpoint.
#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub retryable: bool,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.to_string(),
            message: message.into(),
            field: None,
            retryable: false,
        }
    }

    pub fn unknown_session(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id}"))
    }
}

impl From<DriverError> for ApiError {
    fn from(e: DriverError) -> Self {
        let message = e.to_string();
        match e {
            DriverError::Engine(EngineError::InvalidProfile { field }) => ApiError {
                field: Some(field.to_string()),
                ..ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_profile", message)
            },
            DriverError::Engine(_) => {
                ApiError::new(StatusCode::CONFLICT, "illegal_event", message)
            }
            DriverError::Orchestrator(o) => ApiError {
                retryable: true,
                ..ApiError::new(StatusCode::BAD_GATEWAY, o.code(), message)
            },
            DriverError::Store(StoreError::UnknownSession(id)) => ApiError::unknown_session(&id),
            DriverError::Store(StoreError::StorageUnavailable(_)) => ApiError {
                retryable: true,
                ..ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "storage_unavailable", message)
            },
            DriverError::Store(_) => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage_error", message)
            }
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        DriverError::Store(e).into()
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self)).into_response()
    }
}

type Slot = Arc<AsyncMutex<Option<LiveSession>>>;

/// Everything the handlers share. Each session has one async mutex, which
/// is what serialises its commands.
pub struct AppState {
    pub config: ServiceConfig,
    pub driver: Arc<SessionDriver>,
    slots: Mutex<HashMap<String, Slot>>,
    streams: Mutex<HashSet<String>>,
}

impl AppState {
    pub fn build(config: ServiceConfig) -> Result<Arc<Self>, StartupError> {
        let content = match &config.content_dir {
            Some(dir) => ContentBundle::load_dir(dir)?,
            None => ContentBundle::builtin(),
        };
        let script = match &config.stub_script {
            Some(path) => StubScript::load(path)?,
            None => StubScript::builtin(),
        };
        let gateway = Gateway::new(config.gateway.clone(), Arc::new(HttpTransport::new()), script);
        let orchestrator = match &config.banned_terms {
            Some(path) => Orchestrator::with_linter(
                Arc::new(content),
                Arc::new(gateway),
                Arc::new(Linter::from_file(path)?),
            ),
            None => Orchestrator::new(Arc::new(content), Arc::new(gateway)),
        };
        let store: Arc<dyn SessionStore> = match config.storage {
            StorageKind::File => Arc::new(FileStore::open(&config.storage_path)?),
            StorageKind::Memory => Arc::new(MemoryStore::new()),
        };
        let driver = SessionDriver::new(Arc::new(orchestrator), store, Arc::new(SystemClock));
        Ok(Self::with_driver(config, driver))
    }

    pub fn with_driver(config: ServiceConfig, driver: SessionDriver) -> Arc<Self> {
        Arc::new(Self {
            config,
            driver: Arc::new(driver),
            slots: Mutex::new(HashMap::new()),
            streams: Mutex::new(HashSet::new()),
        })
    }

    fn slot(&self, id: &str) -> Slot {
        self.slots
            .lock()
            .expect("slot map poisoned")
            .entry(id.to_string())
            .or_default()
            .clone()
    }

    /// Registers a freshly created session.
    pub async fn insert(&self, live: LiveSession) {
        let slot = self.slot(live.id().as_str());
        *slot.lock().await = Some(live);
    }

    /// Locks the session, loading it from the store on first use.
    pub async fn lock(&self, id: &str) -> Result<OwnedMutexGuard<Option<LiveSession>>, ApiError> {
        let slot = self.slot(id);
        let mut guard = slot.lock_owned().await;
        if guard.is_none() {
            let driver = self.driver.clone();
            let sid = SessionId::new(id);
            let live = tokio::task::spawn_blocking(move || driver.open(&sid))
                .await
                .map_err(join_error)?;
            match live {
                Ok(live) => *guard = Some(live),
                Err(e) => {
                    drop(guard);
                    self.slots.lock().expect("slot map poisoned").remove(id);
                    return Err(e.into());
                }
            }
        }
        Ok(guard)
    }

    /// Claims the single live stream for a session.
    pub fn claim_stream(self: &Arc<Self>, id: &str) -> Option<StreamClaim> {
        let mut streams = self.streams.lock().expect("stream set poisoned");
        streams.insert(id.to_string()).then(|| StreamClaim {
            state: self.clone(),
            id: id.to_string(),
        })
    }
}

pub fn join_error(e: tokio::task::JoinError) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
}

/// Released when dropped, so a closed or failed stream frees the session.
pub struct StreamClaim {
    state: Arc<AppState>,
    id: String,
}

impl Drop for StreamClaim {
    fn drop(&mut self) {
        if let Ok(mut streams) = self.state.streams.lock() {
            streams.remove(&self.id);
        }
    }
}
