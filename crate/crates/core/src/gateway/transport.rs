use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use super::{AgentRole, Completion, FinishReason, SamplingParams};

#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub model: String,
    pub role: AgentRole,
    pub prompt: String,
    pub params: SamplingParams,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TransportError {
    #[error("timed out")]
    Timeout,
    #[error("status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("connection: {0}")]
    Connection(String),
    #[error("undecodable response: {0}")]
    Decode(String),
}

impl TransportError {
    /// Failures worth retrying. Anything the model itself said is not.
    pub fn is_transient(&self) -> bool {
        match self {
            TransportError::Timeout | TransportError::Connection(_) => true,
            TransportError::Status { code, .. } => *code == 429 || *code >= 500,
            TransportError::Decode(_) => false,
        }
    }
}

pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<Completion, TransportError>;
}

/// OpenAI-compatible `/chat/completions` client.
pub struct HttpTransport {
    endpoint: String,
    api_key: Option<String>,
}

impl HttpTransport {
    /// `base_url` is the API root, e.g. `https://api.openai.com/v1`.
    pub fn new(base_url: &str, api_key: Option<String>) -> Self {
        Self {
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
        }
    }

    fn agent(timeout: Duration) -> ureq::Agent {
        ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into()
    }
}

pub(crate) fn request_body(request: &ChatRequest) -> Value {
    json!({
        "model": request.model,
        "messages": [
            {"role": "system", "content": request.role.system_prompt()},
            {"role": "user", "content": request.prompt},
        ],
        "temperature": request.params.temperature,
        "max_tokens": request.params.max_tokens,
    })
}

pub(crate) fn parse_response(body: &Value) -> Result<Completion, TransportError> {
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| TransportError::Decode("no choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let finish = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("stop") | None => FinishReason::Stop,
        Some("length") => FinishReason::Truncated,
        Some(_) => FinishReason::Error,
    };
    let usage = |k: &str| {
        body.pointer(&format!("/usage/{k}"))
            .and_then(Value::as_u64)
            .unwrap_or(0) as u32
    };
    Ok(Completion {
        text,
        prompt_tokens: usage("prompt_tokens"),
        completion_tokens: usage("completion_tokens"),
        finish,
    })
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<Completion, TransportError> {
        let agent = Self::agent(request.params.timeout);
        let mut req = agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(request_body(request)).map_err(map_ureq)?;
        let status = resp.status().as_u16();
        if status >= 400 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(TransportError::Status { code: status, body });
        }
        let value: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| TransportError::Decode(e.to_string()))?;
        parse_response(&value)
    }
}

fn map_ureq(e: ureq::Error) -> TransportError {
    match e {
        ureq::Error::Timeout(_) => TransportError::Timeout,
        ureq::Error::StatusCode(code) => TransportError::Status {
            code,
            body: String::new(),
        },
        other => TransportError::Connection(other.to_string()),
    }
}
