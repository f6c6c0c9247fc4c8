//! Replays a session with live routing switched on, over an in-process
//! transport that answers from the stub script and records which model
//! each prompt was addressed to.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use candor_core::content::TaskId;
use candor_core::engine::ScenarioKind;
use candor_core::gateway::{
    CompletionRequest, Gateway, GatewayConfig, ProviderEndpoint, StubScript, Transport, TransportError,
};

use crate::report::InvariantReport;
use crate::run::run_session_on;
use crate::script::{PickPolicy, SessionScript};
use crate::HarnessError;

pub const PRIMARY_MODEL: &str = "primary-under-test";
pub const EMOJI_MODEL: &str = "emoji-under-test";

#[derive(Debug, Clone, PartialEq)]
pub struct LiveCall {
    pub model: String,
    pub task: TaskId,
    pub kind: Option<ScenarioKind>,
    pub prompt: String,
}

pub struct RecordingTransport {
    script: StubScript,
    calls: Mutex<Vec<LiveCall>>,
}

impl RecordingTransport {
    pub fn new(script: StubScript) -> Self {
        Self {
            script,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<LiveCall> {
        self.calls.lock().expect("call list lock").clone()
    }
}

impl Transport for RecordingTransport {
    fn send(
        &self,
        endpoint: &ProviderEndpoint,
        request: &CompletionRequest,
        _timeout: Duration,
    ) -> Result<String, TransportError> {
        self.calls.lock().expect("call list lock").push(LiveCall {
            model: endpoint.model.clone(),
            task: request.task_id,
            kind: request.scenario_kind,
            prompt: request.prompt.as_str().to_string(),
        });
        self.script
            .respond(request)
            .map_err(|e| TransportError::Malformed(e.to_string()))
    }
}

fn endpoint(model: &str) -> ProviderEndpoint {
    ProviderEndpoint {
        base_url: "http://127.0.0.1:9".into(),
        model: model.into(),
        api_key: None,
    }
}

pub fn live_config() -> GatewayConfig {
    GatewayConfig {
        stub_mode: false,
        primary: Some(endpoint(PRIMARY_MODEL)),
        emoji: Some(endpoint(EMOJI_MODEL)),
        ..GatewayConfig::default()
    }
}

#[derive(Debug, Clone)]
pub struct RoutingRun {
    pub calls: Vec<LiveCall>,
    pub report: InvariantReport,
}

/// Runs a gated session in live mode and checks where every prompt went.
pub fn verify_live_routing(seed: u64) -> Result<RoutingRun, HarnessError> {
    let script = SessionScript::standard(seed, PickPolicy::AlwaysWrong);
    let transport = Arc::new(RecordingTransport::new(script.stub.clone()));
    let gateway = Arc::new(Gateway::new(live_config(), transport.clone(), script.stub.clone()));
    let run = run_session_on(&script, gateway)?;
    let calls = transport.calls();

    let mut report = run.report;
    let misrouted: Vec<String> = calls
        .iter()
        .filter(|c| {
            let emoji = c.task == TaskId::Options && c.kind == Some(ScenarioKind::EmojiVariable);
            c.model != if emoji { EMOJI_MODEL } else { PRIMARY_MODEL }
        })
        .map(|c| format!("{:?}/{:?} sent to {}", c.task, c.kind, c.model))
        .collect();
    report.expect_none("live_models", misrouted, format!("{} live call(s) routed", calls.len()));
    report.check(
        "transport_accounting",
        run.network_calls == calls.len() as u64 && run.calls.len() == calls.len(),
        format!("{} network call(s) counted", run.network_calls),
    );
    Ok(RoutingRun { calls, report })
}
