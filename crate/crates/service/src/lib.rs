//! REST and WebSocket front end for the chat simulator.

pub mod config;
pub mod routes;
pub mod state;
pub mod stream;

pub use config::{ConfigError, ServiceConfig, StorageKind};
pub use routes::router;
pub use state::{ApiError, AppState, StartupError};
