//! Provider-agnostic chat completion for the four agent roles.
//!
//! Every model call in the pipeline goes through [`LlmClient`]. The
//! [`Gateway`] implementation runs in one of three modes:
//!
//! * `Live` sends the prompt through a [`Transport`] with a per-call timeout
//!   and bounded retry on transport failures.
//! * `Record` does the same and writes each exchange to the fixture store.
//! * `Replay` answers purely from the fixture store and never touches the
//!   transport. A prompt with no fixture is a [`GatewayError::MissingFixture`].
//!
//! Fixtures are keyed by [`transcript_key`], the lowercase hex SHA-256 of
//! the prompt bytes.

mod fixtures;
mod scripted;
pub mod template;
mod transport;

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use fixtures::{Fixture, FixtureStore};
pub use scripted::{ScriptedLlm, TranscriptEntry, TranscriptLog};
pub use template::{bindings, render_template, PromptTemplate, TemplateError, TemplateId};
pub use transport::{ChatRequest, HttpTransport, Transport, TransportError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentRole {
    Moderator,
    Retriever,
    CodeGenerator,
    Enhancer,
}

impl AgentRole {
    pub fn system_prompt(self) -> &'static str {
        match self {
            AgentRole::Moderator => {
                "You are the Moderator of a lecture-slide generation team. You plan, select and coordinate."
            }
            AgentRole::Retriever => {
                "You are the Retriever of a lecture-slide generation team. You summarize source material faithfully."
            }
            AgentRole::CodeGenerator => {
                "You are the Code Generator of a lecture-slide generation team. You write compilable LaTeX Beamer code."
            }
            AgentRole::Enhancer => {
                "You are the Enhancer of a lecture-slide generation team. You add figures and instructor comments without altering existing content."
            }
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FinishReason {
    Stop,
    /// The provider hit its token limit; the text must not be parsed.
    Truncated,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
    pub finish: FinishReason,
}

impl Completion {
    pub fn stop(text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            completion_tokens: estimate_tokens(&text) as u32,
            text,
            prompt_tokens: 0,
            finish: FinishReason::Stop,
        }
    }

    pub fn is_usable(&self) -> bool {
        self.finish == FinishReason::Stop
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f32,
    pub max_tokens: u32,
    pub timeout: Duration,
}

impl SamplingParams {
    /// Defaults per template: deterministic decoding for everything that is
    /// parsed downstream, a little temperature for free-text summaries.
    pub fn for_template(id: TemplateId) -> Self {
        let (temperature, max_tokens) = match id {
            TemplateId::Keywords => (0.0, 256),
            TemplateId::Summarize => (0.3, 1500),
            TemplateId::SelectSources => (0.0, 512),
            TemplateId::Plan => (0.0, 2500),
            TemplateId::Codegen | TemplateId::Repair => (0.0, 8000),
            TemplateId::Comments | TemplateId::Figures => (0.0, 8000),
        };
        Self {
            temperature,
            max_tokens,
            timeout: Duration::from_secs(180),
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("sampling params need a positive max-token bound")]
    NoTokenBound,
    #[error("request timed out")]
    Timeout,
    #[error("provider returned status {status}: {body}")]
    ProviderError { status: u16, body: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("no replay fixture for transcript key {0}")]
    MissingFixture(String),
    #[error("fixture store: {0}")]
    Fixture(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

impl From<TransportError> for GatewayError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::Timeout => GatewayError::Timeout,
            TransportError::Status { code, body } => GatewayError::ProviderError { status: code, body },
            TransportError::Connection(m) | TransportError::Decode(m) => GatewayError::Transport(m),
        }
    }
}

/// The single seam between the pipeline and a language model.
pub trait LlmClient: Send + Sync {
    fn complete(
        &self,
        role: AgentRole,
        prompt: &str,
        params: &SamplingParams,
    ) -> Result<Completion, GatewayError>;
}

impl<T: LlmClient + ?Sized> LlmClient for Arc<T> {
    fn complete(
        &self,
        role: AgentRole,
        prompt: &str,
        params: &SamplingParams,
    ) -> Result<Completion, GatewayError> {
        (**self).complete(role, prompt, params)
    }
}

/// Renders a catalog template and sends it with that template's defaults.
pub fn complete_template(
    llm: &dyn LlmClient,
    id: TemplateId,
    binds: &std::collections::BTreeMap<String, String>,
) -> Result<(String, Completion), GatewayError> {
    let prompt = PromptTemplate::builtin(id).render(binds)?;
    let completion = llm.complete(id.role(), &prompt, &SamplingParams::for_template(id))?;
    Ok((prompt, completion))
}

/// Lowercase hex SHA-256 of the prompt's UTF-8 bytes.
pub fn transcript_key(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Rough token count used for context budgeting: one token per four bytes,
/// rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.len().div_ceil(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatewayMode {
    Live,
    Record,
    Replay,
}

impl std::str::FromStr for GatewayMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "live" => Ok(GatewayMode::Live),
            "record" => Ok(GatewayMode::Record),
            "replay" => Ok(GatewayMode::Replay),
            other => Err(format!("unknown gateway mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 2,
            base_delay: Duration::from_millis(500),
        }
    }
}

struct InFlight {
    limit: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            current: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightGuard<'_> {
        let mut n = self.current.lock().unwrap();
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.current.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    mode: GatewayMode,
    model: String,
    transport: Option<Arc<dyn Transport>>,
    fixtures: Option<FixtureStore>,
    retry: RetryPolicy,
    in_flight: InFlight,
    transport_calls: AtomicUsize,
}

impl Gateway {
    pub fn live(model: impl Into<String>, transport: Arc<dyn Transport>) -> Self {
        Self::build(GatewayMode::Live, model.into(), Some(transport), None)
    }

    pub fn record(
        model: impl Into<String>,
        transport: Arc<dyn Transport>,
        fixtures: FixtureStore,
    ) -> Self {
        Self::build(GatewayMode::Record, model.into(), Some(transport), Some(fixtures))
    }

    pub fn replay(fixtures: FixtureStore) -> Self {
        Self::build(GatewayMode::Replay, "replay".into(), None, Some(fixtures))
    }

    /// Replay mode with a transport attached, used to prove that replay never
    /// reaches it.
    pub fn replay_with_transport(fixtures: FixtureStore, transport: Arc<dyn Transport>) -> Self {
        Self::build(GatewayMode::Replay, "replay".into(), Some(transport), Some(fixtures))
    }

    fn build(
        mode: GatewayMode,
        model: String,
        transport: Option<Arc<dyn Transport>>,
        fixtures: Option<FixtureStore>,
    ) -> Self {
        Self {
            mode,
            model,
            transport,
            fixtures,
            retry: RetryPolicy::default(),
            in_flight: InFlight::new(4),
            transport_calls: AtomicUsize::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, limit: usize) -> Self {
        self.in_flight = InFlight::new(limit);
        self
    }

    pub fn mode(&self) -> GatewayMode {
        self.mode
    }

    /// Number of requests handed to the transport, retries included.
    pub fn transport_calls(&self) -> usize {
        self.transport_calls.load(Ordering::SeqCst)
    }

    fn send_with_retry(
        &self,
        role: AgentRole,
        prompt: &str,
        params: &SamplingParams,
    ) -> Result<Completion, GatewayError> {
        let transport = self
            .transport
            .as_ref()
            .ok_or_else(|| GatewayError::Transport("no transport configured".into()))?;
        let request = ChatRequest {
            model: self.model.clone(),
            role,
            prompt: prompt.to_string(),
            params: *params,
        };
        let _slot = self.in_flight.acquire();
        let mut attempt = 0;
        loop {
            self.transport_calls.fetch_add(1, Ordering::SeqCst);
            match transport.send(&request) {
                Ok(c) => return Ok(c),
                Err(e) if e.is_transient() && attempt < self.retry.retries => {
                    let delay = self.retry.base_delay * 2u32.pow(attempt);
                    log::warn!("{role} call failed ({e}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
}

impl LlmClient for Gateway {
    fn complete(
        &self,
        role: AgentRole,
        prompt: &str,
        params: &SamplingParams,
    ) -> Result<Completion, GatewayError> {
        if prompt.is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        if params.max_tokens == 0 {
            return Err(GatewayError::NoTokenBound);
        }
        match self.mode {
            GatewayMode::Replay => {
                let store = self.fixtures.as_ref().expect("replay gateway has a store");
                store
                    .lookup(prompt)
                    .map(|f| f.completion.clone())
                    .ok_or_else(|| GatewayError::MissingFixture(transcript_key(prompt)))
            }
            GatewayMode::Live => self.send_with_retry(role, prompt, params),
            GatewayMode::Record => {
                let completion = self.send_with_retry(role, prompt, params)?;
                let store = self.fixtures.as_ref().expect("record gateway has a store");
                store
                    .record(role, prompt, &completion)
                    .map_err(|e| GatewayError::Fixture(e.to_string()))?;
                Ok(completion)
            }
        }
    }
}
