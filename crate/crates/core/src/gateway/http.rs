use std::sync::OnceLock;
use std::time::Duration;

use serde_json::{json, Value};

use super::{CompletionRequest, ProviderEndpoint, Transport, TransportError};

/// Chat-completions over HTTP: one user-role message per request carrying
/// the rendered prompt.
#[derive(Default)]
pub struct HttpTransport {
    // built on first use so construction never happens on an async thread
    client: OnceLock<reqwest::blocking::Client>,
}

impl HttpTransport {
    pub fn new() -> Self {
        Self::default()
    }

    fn client(&self) -> &reqwest::blocking::Client {
        self.client.get_or_init(reqwest::blocking::Client::new)
    }
}

pub(crate) fn request_body(endpoint: &ProviderEndpoint, request: &CompletionRequest) -> Value {
    json!({
        "model": endpoint.model,
        "messages": [{ "role": "user", "content": request.prompt.as_str() }],
        "temperature": request.temperature,
        "max_tokens": request.max_output_tokens,
    })
}

pub(crate) fn extract_text(body: &Value) -> Result<String, TransportError> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| TransportError::Malformed("missing choices[0].message.content".into()))
}

impl Transport for HttpTransport {
    fn send(
        &self,
        endpoint: &ProviderEndpoint,
        request: &CompletionRequest,
        timeout: Duration,
    ) -> Result<String, TransportError> {
        let url = format!("{}/chat/completions", endpoint.base_url.trim_end_matches('/'));
        let mut builder = self
            .client()
            .post(url)
            .timeout(timeout)
            .json(&request_body(endpoint, request));
        if let Some(key) = &endpoint.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(classify)?;
        let status = response.status();
        if !status.is_success() {
            return Err(TransportError::Status(status.as_u16()));
        }
        let body: Value = response
            .json()
            .map_err(|e| TransportError::Malformed(e.to_string()))?;
        extract_text(&body)
    }
}

fn classify(e: reqwest::Error) -> TransportError {
    if e.is_timeout() {
        TransportError::Timeout
    } else {
        TransportError::Network(e.to_string())
    }
}
