use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use candor_core::gateway::GatewayConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid value for {var}: {message}")]
    Env { var: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageKind {
    File,
    Memory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub storage: StorageKind,
    pub storage_path: PathBuf,
    pub gateway: GatewayConfig,
    /// Stub script used in stub mode; the bundled one when unset.
    pub stub_script: Option<PathBuf>,
    /// Forces every new session onto this seed.
    pub seed_override: Option<u64>,
    pub banned_terms: Option<PathBuf>,
    /// Directory holding templates and exemplars; the bundled set when unset.
    pub content_dir: Option<PathBuf>,
    pub heartbeat_ms: u64,
    pub idle_timeout_ms: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            storage: StorageKind::File,
            storage_path: PathBuf::from("candor-data"),
            gateway: GatewayConfig::default(),
            stub_script: None,
            seed_override: None,
            banned_terms: None,
            content_dir: None,
            heartbeat_ms: 20_000,
            idle_timeout_ms: 600_000,
        }
    }
}

impl ServiceConfig {
    /// Stub mode, in-memory storage, everything else default.
    pub fn for_tests() -> Self {
        Self {
            storage: StorageKind::Memory,
            gateway: GatewayConfig::stub(),
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn heartbeat(&self) -> Duration {
        Duration::from_millis(self.heartbeat_ms)
    }

    pub fn idle_timeout(&self) -> Duration {
        Duration::from_millis(self.idle_timeout_ms)
    }

    /// Applies `CANDOR_*` overrides read through `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        fn parsed<T: std::str::FromStr>(var: &str, value: String) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            value.trim().parse().map_err(|e: T::Err| ConfigError::Env {
                var: var.to_string(),
                message: e.to_string(),
            })
        }

        if let Some(v) = lookup("CANDOR_BIND") {
            self.bind = parsed("CANDOR_BIND", v)?;
        }
        if let Some(v) = lookup("CANDOR_STORAGE") {
            self.storage = match v.trim() {
                "file" => StorageKind::File,
                "memory" => StorageKind::Memory,
                other => {
                    return Err(ConfigError::Env {
                        var: "CANDOR_STORAGE".into(),
                        message: format!("expected file or memory, got {other:?}"),
                    })
                }
            };
        }
        if let Some(v) = lookup("CANDOR_STORAGE_PATH") {
            self.storage_path = PathBuf::from(v);
        }
        if let Some(v) = lookup("CANDOR_STUB_MODE") {
            self.gateway.stub_mode = parsed("CANDOR_STUB_MODE", v)?;
        }
        if let Some(v) = lookup("CANDOR_STUB_SCRIPT") {
            self.stub_script = Some(PathBuf::from(v));
        }
        if let Some(v) = lookup("CANDOR_SEED") {
            self.seed_override = Some(parsed("CANDOR_SEED", v)?);
        }
        if let Some(v) = lookup("CANDOR_BANNED_TERMS") {
            self.banned_terms = Some(PathBuf::from(v));
        }
        if let Some(v) = lookup("CANDOR_CONTENT_DIR") {
            self.content_dir = Some(PathBuf::from(v));
        }
        if let Some(v) = lookup("CANDOR_PRIMARY_API_KEY") {
            if let Some(endpoint) = self.gateway.primary.as_mut() {
                endpoint.api_key = Some(v);
            }
        }
        if let Some(v) = lookup("CANDOR_EMOJI_API_KEY") {
            if let Some(endpoint) = self.gateway.emoji.as_mut() {
                endpoint.api_key = Some(v);
            }
        }
        Ok(())
    }
}
