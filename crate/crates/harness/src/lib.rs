//! Scripted, deterministic sessions for checking the simulator end to end
//! without network access.

pub mod fuzz;
pub mod goldens;
pub mod par;
pub mod report;
pub mod routing;
pub mod run;
pub mod script;
pub mod sweep;

use thiserror::Error;

pub use par::Exec;
pub use report::{Check, InvariantReport};
pub use run::{run_session, SessionRun};
pub use script::{PickPolicy, Picker, SessionScript};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HarnessError {
    #[error("script has no {missing} for turn {turn}")]
    ScriptExhausted { turn: u32, missing: &'static str },
    #[error("invalid script: {0}")]
    InvalidScript(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("setup failed: {0}")]
    Setup(String),
}

impl HarnessError {
    pub fn io(path: impl AsRef<std::path::Path>, e: impl std::fmt::Display) -> Self {
        HarnessError::Io {
            path: path.as_ref().display().to_string(),
            message: e.to_string(),
        }
    }
}
