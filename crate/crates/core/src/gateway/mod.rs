//! Uniform completion interface over the live chat-completion providers and
//! the scripted stub.

mod http;
mod stub;

pub use http::HttpTransport;
pub use stub::{StubEntry, StubScript};

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::content::{PromptText, TaskId};
use crate::engine::ScenarioKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderId {
    PrimaryModel,
    EmojiModel,
    Stub,
}

/// Whether the option the user sent was the appropriate one. Live providers
/// never see this; the stub uses it to pick scripted text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Appropriate,
    Misread,
}

/// Emoji option rewrites go to the emoji model; everything else goes to the
/// primary model. Stub mode overrides both.
pub fn route_for(task: TaskId, kind: Option<ScenarioKind>, stub_mode: bool) -> ProviderId {
    if stub_mode {
        return ProviderId::Stub;
    }
    match (task, kind) {
        (TaskId::Options, Some(ScenarioKind::EmojiVariable)) => ProviderId::EmojiModel,
        _ => ProviderId::PrimaryModel,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: PromptText,
    pub task_id: TaskId,
    pub scenario_kind: Option<ScenarioKind>,
    pub max_output_tokens: u32,
    pub temperature: f32,
    /// Regeneration attempt of the artifact this request is for, from 1.
    pub attempt: u32,
    pub turn: Option<u32>,
    pub branch: Option<Branch>,
    /// Values available to scripted stub output.
    pub vars: BTreeMap<String, String>,
}

impl CompletionRequest {
    pub fn new(task_id: TaskId, scenario_kind: Option<ScenarioKind>, prompt: impl Into<String>) -> Self {
        let params = GenerationParams::default();
        Self {
            prompt: PromptText(prompt.into()),
            task_id,
            scenario_kind,
            max_output_tokens: params.max_output_tokens,
            temperature: params.temperature,
            attempt: 1,
            turn: None,
            branch: None,
            vars: BTreeMap::new(),
        }
    }

    pub fn with_turn(mut self, turn: u32) -> Self {
        self.turn = Some(turn);
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.attempt == 0 {
            return Err(GatewayError::InvalidRequest("attempt must be at least 1".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionResult {
    pub text: String,
    pub provider: ProviderId,
    pub latency: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("{provider:?} unavailable after {attempts} attempt(s): {last_error}")]
    ProviderUnavailable {
        provider: ProviderId,
        attempts: u32,
        last_error: String,
    },
    #[error("completion exceeded its {budget:?} budget")]
    Timeout { budget: Duration },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("stub script has no output for {task} ({kind:?}, turn {turn:?})")]
    Unscripted {
        task: TaskId,
        kind: Option<ScenarioKind>,
        turn: Option<u32>,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("gateway configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("HTTP status {0}")]
    Status(u16),
    #[error("network: {0}")]
    Network(String),
    #[error("timed out")]
    Timeout,
    #[error("malformed payload: {0}")]
    Malformed(String),
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderEndpoint {
    pub base_url: String,
    pub model: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
}

impl fmt::Debug for ProviderEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProviderEndpoint")
            .field("base_url", &self.base_url)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

/// Sends one rendered prompt to a live provider.
pub trait Transport: Send + Sync {
    fn send(
        &self,
        endpoint: &ProviderEndpoint,
        request: &CompletionRequest,
        timeout: Duration,
    ) -> Result<String, TransportError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    #[serde(with = "millis")]
    pub base_delay: Duration,
    pub factor: u32,
    #[serde(with = "millis")]
    pub budget: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(250),
            factor: 2,
            budget: Duration::from_secs(20),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay
            .saturating_mul(self.factor.saturating_pow(retry.saturating_sub(1)))
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f32,
    pub max_output_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            max_output_tokens: 600,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub stub_mode: bool,
    pub primary: Option<ProviderEndpoint>,
    pub emoji: Option<ProviderEndpoint>,
    pub retry: RetryPolicy,
    pub params: GenerationParams,
    pub task_params: BTreeMap<TaskId, GenerationParams>,
}

impl GatewayConfig {
    pub fn stub() -> Self {
        Self {
            stub_mode: true,
            ..Self::default()
        }
    }

    pub fn params_for(&self, task: TaskId) -> GenerationParams {
        self.task_params.get(&task).copied().unwrap_or(self.params)
    }

    fn endpoint(&self, provider: ProviderId) -> Option<&ProviderEndpoint> {
        match provider {
            ProviderId::PrimaryModel => self.primary.as_ref(),
            ProviderId::EmojiModel => self.emoji.as_ref(),
            ProviderId::Stub => None,
        }
    }
}

/// One completion as seen by the gateway.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CallRecord {
    pub task: TaskId,
    pub kind: Option<ScenarioKind>,
    pub turn: Option<u32>,
    pub attempt: u32,
    pub provider: ProviderId,
}

pub struct Gateway {
    config: GatewayConfig,
    transport: Arc<dyn Transport>,
    stub: StubScript,
    network_calls: AtomicU64,
    calls: Mutex<Vec<CallRecord>>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("config", &self.config)
            .field("network_calls", &self.network_calls())
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(config: GatewayConfig, transport: Arc<dyn Transport>, stub: StubScript) -> Self {
        Self {
            config,
            transport,
            stub,
            network_calls: AtomicU64::new(0),
            calls: Mutex::new(Vec::new()),
        }
    }

    /// A stub-mode gateway over `script`, wired to the real HTTP transport
    /// so the network counter would catch any leak.
    pub fn stubbed(script: StubScript) -> Self {
        Self::new(GatewayConfig::stub(), Arc::new(HttpTransport::new()), script)
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn stub_mode(&self) -> bool {
        self.config.stub_mode
    }

    pub fn route(&self, task: TaskId, kind: Option<ScenarioKind>) -> ProviderId {
        route_for(task, kind, self.config.stub_mode)
    }

    /// Transport calls issued to live providers so far.
    pub fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::SeqCst)
    }

    pub fn call_log(&self) -> Vec<CallRecord> {
        self.calls.lock().expect("call log lock").clone()
    }

    /// A request with this gateway's generation parameters for `task`.
    pub fn request(
        &self,
        task: TaskId,
        kind: Option<ScenarioKind>,
        prompt: PromptText,
    ) -> CompletionRequest {
        let params = self.config.params_for(task);
        CompletionRequest {
            prompt,
            max_output_tokens: params.max_output_tokens,
            temperature: params.temperature,
            ..CompletionRequest::new(task, kind, String::new())
        }
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        request.validate()?;
        let provider = self.route(request.task_id, request.scenario_kind);
        self.calls.lock().expect("call log lock").push(CallRecord {
            task: request.task_id,
            kind: request.scenario_kind,
            turn: request.turn,
            attempt: request.attempt,
            provider,
        });

        if provider == ProviderId::Stub {
            let text = self.stub.respond(request)?;
            return Ok(CompletionResult {
                text,
                provider,
                latency: Duration::ZERO,
            });
        }

        let endpoint = self
            .config
            .endpoint(provider)
            .ok_or_else(|| GatewayError::Config(format!("no endpoint configured for {provider:?}")))?;
        let policy = self.config.retry;
        let started = Instant::now();
        let mut last_error = String::new();

        for attempt in 1..=policy.max_attempts {
            let remaining = policy.budget.saturating_sub(started.elapsed());
            if remaining.is_zero() {
                return Err(GatewayError::Timeout {
                    budget: policy.budget,
                });
            }
            self.network_calls.fetch_add(1, Ordering::SeqCst);
            match self.transport.send(endpoint, request, remaining) {
                Ok(text) => {
                    return Ok(CompletionResult {
                        text,
                        provider,
                        latency: started.elapsed(),
                    })
                }
                Err(TransportError::Malformed(m)) => return Err(GatewayError::MalformedResponse(m)),
                Err(e) => {
                    tracing::warn!(?provider, attempt, error = %e, "completion attempt failed");
                    last_error = e.to_string();
                }
            }
            if attempt < policy.max_attempts {
                let remaining = policy.budget.saturating_sub(started.elapsed());
                std::thread::sleep(policy.delay(attempt).min(remaining));
            }
        }
        if started.elapsed() >= policy.budget {
            return Err(GatewayError::Timeout {
                budget: policy.budget,
            });
        }
        Err(GatewayError::ProviderUnavailable {
            provider,
            attempts: policy.max_attempts,
            last_error,
        })
    }
}
