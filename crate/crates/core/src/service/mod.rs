//! Job-oriented facade over the orchestrator, shared by the HTTP server and the CLI.

mod http;

use std::collections::BTreeMap;
use std::fs;
use std::sync::Arc;
use std::thread;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orchestrator::{
    JobConfig, JobState, JobStore, Orchestrator, OrchestratorError, PipelineStage, RevisionRequest, RevisionScope,
    StageTransition,
};

pub use http::{router, serve};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    Validation(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("{0} is not available yet")]
    NotYetAvailable(String),
    #[error("job `{0}` already has a run in progress")]
    Conflict(String),
    #[error("{scope:?} revision not possible while the job is in {stage:?}")]
    InvalidScopeForState { scope: RevisionScope, stage: PipelineStage },
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Validation(_) => "validation_error",
            Self::NotFound(_) => "not_found",
            Self::NotYetAvailable(_) => "not_yet_available",
            Self::Conflict(_) => "conflict",
            Self::InvalidScopeForState { .. } => "invalid_scope_for_state",
            Self::Internal(_) => "internal",
        }
    }
}

impl From<OrchestratorError> for ServiceError {
    fn from(e: OrchestratorError) -> Self {
        match e {
            OrchestratorError::InvalidConfig(m) | OrchestratorError::InvalidRevision(m) => Self::Validation(m),
            OrchestratorError::NotFound(id) => Self::NotFound(format!("job `{id}`")),
            OrchestratorError::Conflict(id) => Self::Conflict(id),
            OrchestratorError::InvalidScopeForState { scope, stage } => Self::InvalidScopeForState { scope, stage },
            e @ (OrchestratorError::CorruptState(_) | OrchestratorError::Io(_)) => Self::Internal(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Keywords,
    Sources,
    Candidates,
    Plan,
    PlanJson,
    Tex,
    Pdf,
    StudentPdf,
    Log,
    Transcripts,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 10] = [
        ArtifactKind::Keywords,
        ArtifactKind::Sources,
        ArtifactKind::Candidates,
        ArtifactKind::Plan,
        ArtifactKind::PlanJson,
        ArtifactKind::Tex,
        ArtifactKind::Pdf,
        ArtifactKind::StudentPdf,
        ArtifactKind::Log,
        ArtifactKind::Transcripts,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Keywords => "keywords",
            Self::Sources => "sources",
            Self::Candidates => "candidates",
            Self::Plan => "plan",
            Self::PlanJson => "plan_json",
            Self::Tex => "tex",
            Self::Pdf => "pdf",
            Self::StudentPdf => "student_pdf",
            Self::Log => "log",
            Self::Transcripts => "transcripts",
        }
    }

    pub fn content_type(self) -> &'static str {
        match self {
            Self::Pdf | Self::StudentPdf => "application/pdf",
            Self::Sources | Self::Candidates | Self::PlanJson => "application/json",
            Self::Transcripts => "application/x-ndjson",
            Self::Tex => "application/x-tex",
            Self::Keywords | Self::Plan | Self::Log => "text/plain; charset=utf-8",
        }
    }

    /// The relative path recorded for this artifact at `version`.
    pub fn locate(self, state: &JobState, version: u32) -> Option<String> {
        let a = &state.artifacts;
        let deck = a.decks.get(&version);
        match self {
            Self::Keywords => a.keywords.clone(),
            Self::Sources => a.selection.clone(),
            Self::Candidates => a.candidates.clone(),
            Self::Plan => deck.and_then(|d| d.plan.clone()),
            Self::PlanJson => a.plan_json.clone(),
            Self::Tex => deck.and_then(|d| d.tex.clone()),
            Self::Pdf => deck.and_then(|d| d.pdf.clone()),
            Self::StudentPdf => deck.and_then(|d| d.student_pdf.clone()),
            Self::Log => deck.and_then(|d| d.compile_logs.last().cloned()),
            Self::Transcripts => a.transcripts.clone(),
        }
    }
}

impl std::str::FromStr for ArtifactKind {
    type Err = ServiceError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ServiceError::NotFound(format!("artifact kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiJobView {
    pub id: String,
    pub topic: String,
    pub stage: PipelineStage,
    pub version: u32,
    pub versions: Vec<u32>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub artifacts: BTreeMap<String, bool>,
    pub error: Option<String>,
    pub failed_stage: Option<PipelineStage>,
    pub events: usize,
}

impl ApiJobView {
    pub fn project(state: &JobState) -> Self {
        let artifacts = ArtifactKind::ALL
            .into_iter()
            .map(|k| (k.name().to_string(), k.locate(state, state.version).is_some()))
            .collect();
        Self {
            id: state.id.clone(),
            topic: state.config.topic.clone(),
            stage: state.stage,
            version: state.version,
            versions: state.artifacts.decks.keys().copied().collect(),
            created_at: state.created_at,
            updated_at: state.updated_at,
            artifacts,
            error: state.failure.as_ref().map(|f| f.message.clone()),
            failed_stage: state.failure.as_ref().map(|f| f.stage),
            events: state.history.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEvent {
    pub job_id: String,
    pub index: usize,
    pub from: PipelineStage,
    pub to: PipelineStage,
    pub at: DateTime<Utc>,
    pub version: u32,
    pub detail: Option<String>,
}

impl StageEvent {
    pub fn new(job_id: &str, t: &StageTransition) -> Self {
        Self {
            job_id: job_id.to_string(),
            index: t.index,
            from: t.from,
            to: t.to,
            at: t.at,
            version: t.version,
            detail: t.detail.clone(),
        }
    }
}

/// Artifact bytes for `version` (default: the current one) and their content type.
pub fn read_artifact(
    store: &JobStore,
    id: &str,
    kind: ArtifactKind,
    version: Option<u32>,
) -> Result<(Vec<u8>, &'static str), ServiceError> {
    let state = store.load(id)?;
    let v = version.unwrap_or(state.version);
    if !state.artifacts.decks.contains_key(&v) {
        return Err(ServiceError::NotFound(format!("version {v} of job `{id}`")));
    }
    let rel = kind
        .locate(&state, v)
        .ok_or_else(|| ServiceError::NotYetAvailable(format!("{} for version {v}", kind.name())))?;
    let bytes = fs::read(store.artifact_path(id, &rel)).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ServiceError::NotYetAvailable(format!("{} for version {v}", kind.name())),
        _ => ServiceError::Internal(e.to_string()),
    })?;
    Ok((bytes, kind.content_type()))
}

#[derive(Clone)]
pub struct JobService {
    orch: Arc<Orchestrator>,
}

impl JobService {
    pub fn new(orch: Arc<Orchestrator>) -> Self {
        Self { orch }
    }

    pub fn orchestrator(&self) -> &Orchestrator {
        &self.orch
    }

    /// Persists the job at Retrieval and starts the run on a worker thread.
    pub fn create_job(&self, config: JobConfig) -> Result<String, ServiceError> {
        let state = self.orch.create(config)?;
        let guard = self.orch.lock(&state.id)?;
        let orch = self.orch.clone();
        thread::spawn(move || {
            if let Err(e) = orch.drive(&guard, usize::MAX) {
                log::error!("job {} stopped: {e}", guard.id());
            }
        });
        Ok(state.id)
    }

    /// Restarts every persisted job that is neither terminal nor running.
    pub fn resume_incomplete(&self) -> Vec<String> {
        let mut resumed = Vec::new();
        for id in self.orch.store().list() {
            let Ok(state) = self.orch.load(&id) else { continue };
            if state.stage.is_terminal() {
                continue;
            }
            let Ok(guard) = self.orch.lock(&id) else { continue };
            let orch = self.orch.clone();
            thread::spawn(move || {
                if let Err(e) = orch.drive(&guard, usize::MAX) {
                    log::error!("job {} stopped: {e}", guard.id());
                }
            });
            resumed.push(id);
        }
        resumed
    }

    pub fn get_state(&self, id: &str) -> Result<JobState, ServiceError> {
        Ok(self.orch.load(id)?)
    }

    pub fn get_status(&self, id: &str) -> Result<ApiJobView, ServiceError> {
        Ok(ApiJobView::project(&self.get_state(id)?))
    }

    pub fn is_running(&self, id: &str) -> bool {
        self.orch.store().is_locked(id)
    }

    pub fn get_artifact(
        &self,
        id: &str,
        kind: ArtifactKind,
        version: Option<u32>,
    ) -> Result<(Vec<u8>, &'static str), ServiceError> {
        read_artifact(self.orch.store(), id, kind, version)
    }

    /// Opens the next version synchronously and reruns downstream stages on
    /// a worker thread.
    pub fn post_revision(&self, id: &str, request: RevisionRequest) -> Result<u32, ServiceError> {
        if request.text.trim().is_empty() {
            return Err(ServiceError::Validation("revision text is empty".into()));
        }
        let guard = self.orch.lock(id)?;
        let state = self.orch.begin_revision(&guard, request)?;
        let orch = self.orch.clone();
        thread::spawn(move || {
            if let Err(e) = orch.drive(&guard, usize::MAX) {
                log::error!("revision of job {} stopped: {e}", guard.id());
            }
        });
        Ok(state.version)
    }

    /// Events at or after `from`, plus whether more can still arrive.
    pub fn events_since(&self, id: &str, from: usize) -> Result<(Vec<StageEvent>, bool), ServiceError> {
        let state = self.get_state(id)?;
        let events = state.history.iter().skip(from).map(|t| StageEvent::new(id, t)).collect();
        let open = !state.stage.is_terminal() || self.is_running(id);
        Ok((events, open))
    }

    /// Blocks until the job reaches a terminal stage with no run in flight.
    pub fn wait(&self, id: &str, timeout: std::time::Duration) -> Result<JobState, ServiceError> {
        let deadline = std::time::Instant::now() + timeout;
        loop {
            let state = self.get_state(id)?;
            if state.stage.is_terminal() && !self.is_running(id) {
                return Ok(state);
            }
            if std::time::Instant::now() >= deadline {
                return Err(ServiceError::Internal(format!("timed out waiting for job `{id}`")));
            }
            thread::sleep(std::time::Duration::from_millis(20));
        }
    }
}
