use std::collections::VecDeque;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{transcript_key, AgentRole, Completion, GatewayError, LlmClient, SamplingParams};

type Responder = dyn Fn(AgentRole, &str) -> Result<Completion, GatewayError> + Send + Sync;

/// In-process stand-in for a model: either a responder function or a fixed
/// queue of replies. Counts every call.
pub struct ScriptedLlm {
    responder: Box<Responder>,
    calls: AtomicUsize,
}

impl ScriptedLlm {
    pub fn new(
        f: impl Fn(AgentRole, &str) -> Result<Completion, GatewayError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            responder: Box::new(f),
            calls: AtomicUsize::new(0),
        }
    }

    /// Replies with each string in turn; errors once the queue is drained.
    pub fn queue<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        let q: Mutex<VecDeque<String>> = Mutex::new(replies.into_iter().map(Into::into).collect());
        Self::new(move |_, prompt| {
            q.lock()
                .unwrap()
                .pop_front()
                .map(Completion::stop)
                .ok_or_else(|| GatewayError::MissingFixture(transcript_key(prompt)))
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LlmClient for ScriptedLlm {
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
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.responder)(role, prompt)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub key: String,
    pub role: AgentRole,
    pub prompt: String,
    pub completion: Option<Completion>,
    pub error: Option<String>,
}

/// Wraps a client and keeps every prompt/completion pair, optionally
/// appending them as JSON lines to a file.
pub struct TranscriptLog {
    inner: Arc<dyn LlmClient>,
    path: Option<PathBuf>,
    entries: Mutex<Vec<TranscriptEntry>>,
}

impl TranscriptLog {
    pub fn new(inner: Arc<dyn LlmClient>, path: Option<PathBuf>) -> Self {
        Self {
            inner,
            path,
            entries: Mutex::new(Vec::new()),
        }
    }

    pub fn entries(&self) -> Vec<TranscriptEntry> {
        self.entries.lock().unwrap().clone()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl LlmClient for TranscriptLog {
    fn complete(
        &self,
        role: AgentRole,
        prompt: &str,
        params: &SamplingParams,
    ) -> Result<Completion, GatewayError> {
        let result = self.inner.complete(role, prompt, params);
        let entry = TranscriptEntry {
            key: transcript_key(prompt),
            role,
            prompt: prompt.to_string(),
            completion: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(ToString::to_string),
        };
        if let Some(path) = &self.path {
            let line = serde_json::to_string(&entry).expect("transcript entry serializes");
            let written = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| writeln!(f, "{line}"));
            if let Err(e) = written {
                log::warn!("could not append transcript to {}: {e}", path.display());
            }
        }
        self.entries.lock().unwrap().push(entry);
        result
    }
}
