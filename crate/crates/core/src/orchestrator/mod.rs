//! The Moderator as a persisted state machine over the pipeline stages.

mod store;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codegen::{self, BeamerSource, CodegenError, LatexEngine, LintFinding};
use crate::corpus::CorpusIndex;
use crate::enhancer::{self, EnhanceReport};
use crate::gateway::{LlmClient, TranscriptLog};
use crate::planning::{self, PlanDiagnostics, SlidePlan, StructuralGuide};
use crate::retrieval::{
    self, dedupe_cite_keys, ArxivClient, KeywordSet, Provenance, RetrievalError, SortOrder, SourceSelection,
    SourceSummary, TextbookQuery,
};

pub use store::{JobGuard, JobStore};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid job config: {0}")]
    InvalidConfig(String),
    #[error("job `{0}` not found")]
    NotFound(String),
    #[error("corrupt job state: {0}")]
    CorruptState(String),
    #[error("{scope:?} revision not possible while the job is in {stage:?}")]
    InvalidScopeForState { scope: RevisionScope, stage: PipelineStage },
    #[error("invalid revision: {0}")]
    InvalidRevision(String),
    #[error("job `{0}` is already running")]
    Conflict(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceChoice {
    Arxiv,
    Textbook,
    #[default]
    Auto,
}

impl std::str::FromStr for SourceChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "arxiv" => Ok(Self::Arxiv),
            "textbook" => Ok(Self::Textbook),
            "auto" => Ok(Self::Auto),
            other => Err(format!("unknown source kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JobConfig {
    pub topic: String,
    pub source_kind: SourceChoice,
    pub model_id: String,
    pub max_results: usize,
    pub selection_limit: usize,
    pub max_repair_attempts: u32,
    pub enhancement_enabled: bool,
    pub textbook_k: usize,
    pub textbook_query: TextbookQuery,
    pub sort: SortOrder,
    /// Token budget for plan prompts and paper summaries.
    pub context_budget_tokens: usize,
    /// Share of topic and keyword terms the corpus must contain for `Auto`
    /// to pick the textbook.
    pub auto_coverage: f64,
    /// Minimum best BM25 score for `Auto` to pick the textbook.
    pub auto_min_score: f64,
}

impl Default for JobConfig {
    fn default() -> Self {
        Self {
            topic: String::new(),
            source_kind: SourceChoice::Auto,
            model_id: "gpt-4o".to_string(),
            max_results: 10,
            selection_limit: 3,
            max_repair_attempts: codegen::DEFAULT_MAX_ATTEMPTS,
            enhancement_enabled: true,
            textbook_k: 5,
            textbook_query: TextbookQuery::Keywords,
            sort: SortOrder::Relevance,
            context_budget_tokens: 12_000,
            auto_coverage: 0.6,
            auto_min_score: 1.0,
        }
    }
}

impl JobConfig {
    pub fn new(topic: impl Into<String>) -> Self {
        Self {
            topic: topic.into(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: &str| Err(OrchestratorError::InvalidConfig(m.to_string()));
        if self.topic.trim().is_empty() {
            return bad("topic is empty");
        }
        if !(1..=50).contains(&self.max_results) {
            return bad("max_results must be in [1, 50]");
        }
        if self.selection_limit == 0 {
            return bad("selection_limit must be at least 1");
        }
        if self.textbook_k == 0 {
            return bad("textbook_k must be at least 1");
        }
        if self.max_repair_attempts > 10 {
            return bad("max_repair_attempts must be at most 10");
        }
        if !(0.0..=1.0).contains(&self.auto_coverage) {
            return bad("auto_coverage must be in [0, 1]");
        }
        if self.context_budget_tokens < 256 {
            return bad("context budget below 256 tokens");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PipelineStage {
    Retrieval,
    Planning,
    Generation,
    Compilation,
    Enhancement,
    Finalization,
    Failed,
}

impl PipelineStage {
    pub const ORDER: [PipelineStage; 6] = [
        PipelineStage::Retrieval,
        PipelineStage::Planning,
        PipelineStage::Generation,
        PipelineStage::Compilation,
        PipelineStage::Enhancement,
        PipelineStage::Finalization,
    ];

    pub fn position(self) -> Option<usize> {
        Self::ORDER.iter().position(|s| *s == self)
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, PipelineStage::Finalization | PipelineStage::Failed)
    }

    /// Forward moves within one version: the next stage, skipping
    /// Enhancement, or Failed from any non-terminal stage.
    pub fn can_advance(from: Self, to: Self) -> bool {
        if from.is_terminal() {
            return false;
        }
        if to == PipelineStage::Failed {
            return true;
        }
        match (from.position(), to.position()) {
            (Some(a), Some(b)) => b == a + 1 || (from == PipelineStage::Compilation && to == PipelineStage::Finalization),
            _ => false,
        }
    }
}

impl fmt::Display for PipelineStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTransition {
    pub index: usize,
    pub from: PipelineStage,
    pub to: PipelineStage,
    pub at: DateTime<Utc>,
    pub version: u32,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RevisionScope {
    #[serde(alias = "plan")]
    Plan,
    #[serde(alias = "content")]
    Content,
    #[serde(alias = "enhancement")]
    Enhancement,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionRequest {
    pub text: String,
    pub scope: RevisionScope,
    #[serde(default)]
    pub target_slides: Option<Vec<usize>>,
}

impl RevisionRequest {
    pub fn note(&self) -> String {
        match &self.target_slides {
            Some(s) if !s.is_empty() => {
                let list: Vec<String> = s.iter().map(ToString::to_string).collect();
                format!("Instructor revision request (slides {}): {}", list.join(", "), self.text.trim())
            }
            _ => format!("Instructor revision request: {}", self.text.trim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureInfo {
    pub stage: PipelineStage,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DeckVersion {
    pub version: u32,
    pub revision: Option<RevisionRequest>,
    pub plan: Option<String>,
    pub generated_tex: Option<String>,
    pub compiled_tex: Option<String>,
    pub compiled_pdf: Option<String>,
    pub enhanced_tex: Option<String>,
    pub enhanced_pdf: Option<String>,
    pub tex: Option<String>,
    pub pdf: Option<String>,
    pub student_pdf: Option<String>,
    pub compile_logs: Vec<String>,
    pub repair_attempts: u32,
    pub pages: Option<u32>,
    pub lint: Vec<LintFinding>,
    pub enhancement: Option<EnhanceReport>,
    pub enhancement_skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Artifacts {
    pub keywords: Option<String>,
    pub source_kind: Option<Provenance>,
    pub candidates: Option<String>,
    pub selection: Option<String>,
    pub plan_text: Option<String>,
    pub plan_json: Option<String>,
    pub decks: BTreeMap<u32, DeckVersion>,
    pub transcripts: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobState {
    pub schema_version: u32,
    pub id: String,
    pub config: JobConfig,
    pub stage: PipelineStage,
    pub failure: Option<FailureInfo>,
    pub artifacts: Artifacts,
    pub history: Vec<StageTransition>,
    pub version: u32,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

impl JobState {
    pub fn new(id: impl Into<String>, config: JobConfig) -> Self {
        let now = Utc::now();
        let mut decks = BTreeMap::new();
        decks.insert(1, DeckVersion { version: 1, ..Default::default() });
        Self {
            schema_version: SCHEMA_VERSION,
            id: id.into(),
            config,
            stage: PipelineStage::Retrieval,
            failure: None,
            artifacts: Artifacts {
                decks,
                ..Default::default()
            },
            history: Vec::new(),
            version: 1,
            created_at: now,
            updated_at: now,
        }
    }

    pub fn deck(&self) -> &DeckVersion {
        &self.artifacts.decks[&self.version]
    }

    fn deck_mut(&mut self) -> &mut DeckVersion {
        self.artifacts.decks.get_mut(&self.version).expect("current version has a deck entry")
    }

    fn transition(&mut self, to: PipelineStage, detail: Option<String>) {
        let now = Utc::now();
        self.history.push(StageTransition {
            index: self.history.len(),
            from: self.stage,
            to,
            at: now,
            version: self.version,
            detail,
        });
        self.stage = to;
        self.updated_at = now;
    }

    /// Whether a revision may start from here.
    pub fn revisable(&self) -> bool {
        match self.stage {
            PipelineStage::Finalization => true,
            PipelineStage::Failed => self
                .failure
                .as_ref()
                .and_then(|f| f.stage.position())
                .is_some_and(|p| p > PipelineStage::Planning.position().unwrap()),
            _ => false,
        }
    }
}

/// Stage work fails with a message that is recorded in the state.
type StageResult<T> = Result<T, String>;

fn err<E: fmt::Display>(e: E) -> String {
    e.to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PlanArtifact {
    plan: SlidePlan,
    diagnostics: PlanDiagnostics,
}

pub struct Orchestrator {
    store: JobStore,
    llm: Arc<dyn LlmClient>,
    engine: Arc<dyn LatexEngine>,
    corpus: Option<Arc<CorpusIndex>>,
    arxiv: Option<Arc<ArxivClient>>,
}

impl Orchestrator {
    pub fn new(store: JobStore, llm: Arc<dyn LlmClient>, engine: Arc<dyn LatexEngine>) -> Self {
        Self {
            store,
            llm,
            engine,
            corpus: None,
            arxiv: None,
        }
    }

    pub fn with_corpus(mut self, corpus: Arc<CorpusIndex>) -> Self {
        self.corpus = Some(corpus);
        self
    }

    pub fn with_arxiv(mut self, client: Arc<ArxivClient>) -> Self {
        self.arxiv = Some(client);
        self
    }

    pub fn store(&self) -> &JobStore {
        &self.store
    }

    pub fn create(&self, config: JobConfig) -> Result<JobState, OrchestratorError> {
        config.validate()?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let mut state = JobState::new(id, config);
        state.artifacts.transcripts = Some("transcripts.jsonl".into());
        self.store.persist(&state)?;
        Ok(state)
    }

    pub fn load(&self, id: &str) -> Result<JobState, OrchestratorError> {
        self.store.load(id)
    }

    pub fn lock(&self, id: &str) -> Result<JobGuard, OrchestratorError> {
        if !self.store.exists(id) {
            return Err(OrchestratorError::NotFound(id.to_string()));
        }
        self.store.try_lock(id).ok_or_else(|| OrchestratorError::Conflict(id.to_string()))
    }

    /// Creates and drives a job to a terminal stage.
    pub fn run(&self, config: JobConfig) -> Result<JobState, OrchestratorError> {
        let state = self.create(config)?;
        self.resume(&state.id)
    }

    /// Continues a persisted job from its recorded stage.
    pub fn resume(&self, id: &str) -> Result<JobState, OrchestratorError> {
        let guard = self.lock(id)?;
        self.drive(&guard, usize::MAX)
    }

    /// Runs at most `max_steps` stages while holding `guard`.
    pub fn drive(&self, guard: &JobGuard, max_steps: usize) -> Result<JobState, OrchestratorError> {
        let mut state = self.store.load(guard.id())?;
        let mut steps = 0;
        while !state.stage.is_terminal() && steps < max_steps {
            self.step(&mut state)?;
            steps += 1;
        }
        Ok(state)
    }

    /// Executes the current stage and persists the outcome.
    pub fn step(&self, state: &mut JobState) -> Result<(), OrchestratorError> {
        let stage = state.stage;
        let llm = TranscriptLog::new(self.llm.clone(), Some(self.store.job_dir(&state.id).join("transcripts.jsonl")));
        let outcome = match stage {
            PipelineStage::Retrieval => self.retrieval(state, &llm).map(|_| (PipelineStage::Planning, None)),
            PipelineStage::Planning => self.planning(state, &llm).map(|d| (PipelineStage::Generation, d)),
            PipelineStage::Generation => self.generation(state, &llm).map(|_| (PipelineStage::Compilation, None)),
            PipelineStage::Compilation => self.compilation(state, &llm).and_then(|_| {
                let revising_enhancement =
                    matches!(state.deck().revision.as_ref().map(|r| r.scope), Some(RevisionScope::Enhancement));
                if state.config.enhancement_enabled || revising_enhancement {
                    Ok((PipelineStage::Enhancement, None))
                } else {
                    state.deck_mut().enhancement_skipped = true;
                    self.finalize(state).map(|d| (PipelineStage::Finalization, Some(format!("enhancement skipped; {d}"))))
                }
            }),
            PipelineStage::Enhancement => self
                .enhancement(state, &llm)
                .and_then(|_| self.finalize(state))
                .map(|d| (PipelineStage::Finalization, Some(d))),
            PipelineStage::Finalization | PipelineStage::Failed => return Ok(()),
        };
        match outcome {
            Ok((next, detail)) => {
                debug_assert!(PipelineStage::can_advance(stage, next));
                state.transition(next, detail);
            }
            Err(message) => {
                log::error!("job {} failed at {stage}: {message}", state.id);
                state.failure = Some(FailureInfo {
                    stage,
                    message: message.clone(),
                });
                state.transition(PipelineStage::Failed, Some(message));
            }
        }
        self.store.persist(state)
    }

    fn write(&self, state: &JobState, rel: &str, bytes: impl AsRef<[u8]>) -> StageResult<String> {
        self.store.write_artifact(&state.id, rel, bytes).map_err(err)
    }

    fn read(&self, state: &JobState, rel: &Option<String>, what: &str) -> StageResult<String> {
        let rel = rel.as_ref().ok_or_else(|| format!("{what} artifact missing"))?;
        fs::read_to_string(self.store.artifact_path(&state.id, rel)).map_err(|e| format!("{what}: {e}"))
    }

    fn selection(&self, state: &JobState) -> StageResult<SourceSelection> {
        serde_json::from_str(&self.read(state, &state.artifacts.selection, "selection")?).map_err(err)
    }

    fn notes_for(&self, state: &JobState, scope: RevisionScope) -> Vec<String> {
        match &state.deck().revision {
            Some(r) if r.scope == scope => vec![r.note()],
            _ => vec![],
        }
    }

    pub fn resolve_source_kind(&self, config: &JobConfig, keywords: &KeywordSet) -> StageResult<Provenance> {
        match config.source_kind {
            SourceChoice::Arxiv => Ok(Provenance::Arxiv),
            SourceChoice::Textbook => {
                if self.corpus.is_none() {
                    return Err("textbook source requested but no corpus is loaded".into());
                }
                Ok(Provenance::Textbook)
            }
            SourceChoice::Auto => {
                let query = retrieval::textbook_query(&config.topic, keywords, TextbookQuery::Both);
                let (coverage, best) = self
                    .corpus
                    .as_ref()
                    .map(|c| (c.coverage(&query), c.best_score(&query)))
                    .unwrap_or((0.0, 0.0));
                log::info!("auto source selection: corpus coverage {coverage:.2}, best score {best:.3}");
                Ok(if coverage >= config.auto_coverage && best >= config.auto_min_score && best > 0.0 {
                    Provenance::Textbook
                } else {
                    Provenance::Arxiv
                })
            }
        }
    }

    fn retrieval(&self, state: &mut JobState, llm: &dyn LlmClient) -> StageResult<()> {
        let cfg = state.config.clone();
        let keywords = retrieval::generate_keywords(llm, &cfg.topic).map_err(err)?;
        let kw_rel = self.write(state, "keywords.txt", keywords.as_slice().join("\n") + "\n")?;
        let kind = self.resolve_source_kind(&cfg, &keywords)?;
        let mut candidates: Vec<SourceSummary> = match kind {
            Provenance::Textbook => {
                let corpus = self.corpus.as_ref().ok_or("no corpus loaded")?;
                retrieval::retrieve_textbook(corpus, &cfg.topic, &keywords, cfg.textbook_k, cfg.textbook_query)
            }
            Provenance::Arxiv => {
                let client = self.arxiv.as_ref().ok_or("no arXiv client configured")?;
                let records = client.fetch(&keywords, cfg.sort, cfg.max_results).map_err(err)?;
                self.write(state, "sources/records.json", serde_json::to_vec_pretty(&records).unwrap())?;
                summarize_all(llm, &records, cfg.context_budget_tokens)?
            }
        };
        dedupe_cite_keys(&mut candidates);
        let cand_rel = self.write(state, "sources/candidates.json", serde_json::to_vec_pretty(&candidates).unwrap())?;
        if candidates.is_empty() {
            return Err(format!("no {kind:?} sources found for {:?}", keywords.as_slice()));
        }
        let selection = retrieval::select_sources(llm, &cfg.topic, &candidates, cfg.selection_limit).map_err(err)?;
        let sel_rel = self.write(state, "sources/selection.json", serde_json::to_vec_pretty(&selection).unwrap())?;
        let a = &mut state.artifacts;
        a.keywords = Some(kw_rel);
        a.source_kind = Some(kind);
        a.candidates = Some(cand_rel);
        a.selection = Some(sel_rel);
        Ok(())
    }

    fn planning(&self, state: &mut JobState, llm: &dyn LlmClient) -> StageResult<Option<String>> {
        let selection = self.selection(state)?;
        let kind = state.artifacts.source_kind.ok_or("source kind missing")?;
        let topic = state.config.topic.clone();
        let budget = state.config.context_budget_tokens;
        let guide = StructuralGuide::standard();
        let mut notes = self.notes_for(state, RevisionScope::Plan);
        let (_, mut plan) = planning::request_plan(llm, &topic, kind, &selection, budget, &notes).map_err(err)?;
        let mut diagnostics = planning::validate_plan(&plan, &guide);
        let mut detail = None;
        if !diagnostics.ok {
            log::warn!("plan failed validation, re-planning: {:?}", diagnostics.missing_archetypes);
            notes.push(diagnostics.feedback());
            let (_, again) = planning::request_plan(llm, &topic, kind, &selection, budget, &notes).map_err(err)?;
            plan = again;
            diagnostics = planning::validate_plan(&plan, &guide);
            detail = Some("re-planned once after validation failure".to_string());
            if !diagnostics.ok {
                let missing: Vec<_> = diagnostics.missing_archetypes.iter().map(|a| a.name()).collect();
                self.write(state, "plan-rejected.txt", plan.to_text())?;
                return Err(format!("plan is missing required sections: {}", missing.join(", ")));
            }
        }
        let text = plan.to_text();
        let json = serde_json::to_vec_pretty(&PlanArtifact { plan, diagnostics }).unwrap();
        let v = state.version;
        let versioned = self.write(state, &format!("plan-v{v}.txt"), &text)?;
        state.deck_mut().plan = Some(versioned);
        let t = self.write(state, "plan.txt", &text)?;
        let j = self.write(state, "plan.json", json)?;
        state.artifacts.plan_text = Some(t);
        state.artifacts.plan_json = Some(j);
        Ok(detail)
    }

    fn generation(&self, state: &mut JobState, llm: &dyn LlmClient) -> StageResult<()> {
        let selection = self.selection(state)?;
        let plan: PlanArtifact = serde_json::from_str(&self.read(state, &state.artifacts.plan_json, "plan")?).map_err(err)?;
        let notes = self.notes_for(state, RevisionScope::Content);
        let deck = codegen::generate_beamer(llm, &plan.plan, &selection, &state.config.topic, &notes).map_err(err)?;
        let v = state.version;
        let rel = self.write(state, &format!("generated-v{v}.tex"), &deck.raw)?;
        state.deck_mut().generated_tex = Some(rel);
        Ok(())
    }

    fn compilation(&self, state: &mut JobState, llm: &dyn LlmClient) -> StageResult<()> {
        let v = state.version;
        let raw = self.read(state, &state.deck().generated_tex, "generated deck")?;
        let source = BeamerSource::parse(raw).map_err(err)?;
        let dir = self.store.job_dir(&state.id);
        let log_dir = dir.clone();
        let outcome = codegen::build_with_repair(
            llm,
            self.engine.as_ref(),
            source,
            &dir.join(format!("build-v{v}")),
            state.config.max_repair_attempts,
            &move |k| log_dir.join(format!("compile-v{v}-{k}.log")),
        );
        let outcome = match outcome {
            Ok(o) => o,
            Err(CodegenError::MaxAttemptsExceeded { attempts, last_error, last_log }) => {
                if let Some(p) = &last_log {
                    state.deck_mut().compile_logs.push(rel_name(p));
                }
                return Err(format!(
                    "compile failed after {attempts} repair attempts: {last_error} (log: {})",
                    last_log.as_deref().map(rel_name).unwrap_or_default()
                ));
            }
            Err(e) => return Err(e.to_string()),
        };
        let tex = self.write(state, &format!("compiled-v{v}.tex"), &outcome.source.raw)?;
        let pdf = match &outcome.report.pdf_path {
            Some(p) => Some(self.write(state, &format!("compiled-v{v}.pdf"), fs::read(p).map_err(err)?)?),
            None => None,
        };
        let lint = codegen::lint(&outcome.source);
        let d = state.deck_mut();
        d.compiled_tex = Some(tex);
        d.compiled_pdf = pdf;
        d.compile_logs = outcome.logs.iter().map(|p| rel_name(p)).collect();
        d.repair_attempts = outcome.attempts;
        d.pages = outcome.report.pages;
        d.lint = lint;
        Ok(())
    }

    fn enhancement(&self, state: &mut JobState, llm: &dyn LlmClient) -> StageResult<()> {
        let v = state.version;
        let selection = self.selection(state)?;
        let raw = self.read(state, &state.deck().compiled_tex, "compiled deck")?;
        let source = BeamerSource::parse(raw).map_err(err)?;
        let notes = self.notes_for(state, RevisionScope::Enhancement);
        let (enhanced, mut report) =
            enhancer::enhance(llm, &source, &selection, &state.config.topic, &notes).map_err(err)?;
        let mut accepted = None;
        if report.figures_applied || report.comments_applied {
            let work = self.store.job_dir(&state.id).join(format!("build-v{v}-enhanced"));
            match self.engine.compile(&enhanced, &work) {
                Ok(r) if r.success => {
                    self.write(state, &format!("compile-v{v}-enhanced.log"), &r.log)?;
                    accepted = Some((enhanced, r));
                }
                Ok(r) => {
                    self.write(state, &format!("compile-v{v}-enhanced.log"), &r.log)?;
                    report.warnings.push(format!("enhanced deck did not compile ({}); kept unenhanced deck", r.error_summary()));
                }
                Err(e) => return Err(e.to_string()),
            }
        }
        let (tex, pdf) = match accepted {
            Some((deck, r)) => {
                let tex = self.write(state, &format!("enhanced-v{v}.tex"), &deck.raw)?;
                let pdf = match &r.pdf_path {
                    Some(p) => Some(self.write(state, &format!("enhanced-v{v}.pdf"), fs::read(p).map_err(err)?)?),
                    None => None,
                };
                state.deck_mut().pages = r.pages.or(state.deck().pages);
                (Some(tex), pdf)
            }
            None => (None, None),
        };
        let d = state.deck_mut();
        d.enhanced_tex = tex;
        d.enhanced_pdf = pdf;
        d.enhancement = Some(report);
        Ok(())
    }

    /// The gate into Finalization: a compiled deck, no error-level lint,
    /// and every cite key among the selected sources.
    fn finalize(&self, state: &mut JobState) -> StageResult<String> {
        let v = state.version;
        let deck = state.deck().clone();
        let (tex_rel, pdf_rel) = match (&deck.enhanced_tex, &deck.enhanced_pdf) {
            (Some(t), p) => (t.clone(), p.clone()),
            _ => (
                deck.compiled_tex.clone().ok_or("no compiled deck")?,
                deck.compiled_pdf.clone(),
            ),
        };
        let raw = self.read(state, &Some(tex_rel), "final deck")?;
        let source = BeamerSource::parse(raw.clone()).map_err(err)?;
        let findings = codegen::lint(&source);
        state.deck_mut().lint = findings.clone();
        let errors: Vec<_> = findings.iter().filter(|f| f.severity == codegen::Severity::Error).collect();
        if !errors.is_empty() {
            let list: Vec<_> = errors.iter().map(|f| f.detail.as_str()).collect();
            return Err(format!("finalization blocked by lint errors: {}", list.join("; ")));
        }
        let selection = self.selection(state)?;
        let allowed = selection.keys();
        let foreign: Vec<&String> = source
            .frames
            .iter()
            .flat_map(|f| f.cite_keys.iter())
            .filter(|k| !allowed.contains(&k.as_str()))
            .collect();
        if !foreign.is_empty() {
            return Err(format!("cite keys outside the selected sources: {foreign:?}"));
        }
        let pdf_rel = pdf_rel.ok_or("compiled deck has no PDF")?;
        let pdf_bytes = fs::read(self.store.artifact_path(&state.id, &pdf_rel)).map_err(err)?;
        let tex = self.write(state, &format!("deck-v{v}.tex"), &raw)?;
        let pdf = self.write(state, &format!("deck-v{v}.pdf"), &pdf_bytes)?;
        let has_comments = source.frames.iter().any(|f| !f.comments.is_empty());
        let student = if has_comments {
            let student_src = enhancer::student_build(&source);
            let work = self.store.job_dir(&state.id).join(format!("build-v{v}-student"));
            match self.engine.compile(&student_src, &work) {
                Ok(r) if r.success => match &r.pdf_path {
                    Some(p) => Some(self.write(state, &format!("deck-v{v}-student.pdf"), fs::read(p).map_err(err)?)?),
                    None => None,
                },
                Ok(r) => {
                    log::warn!("student build failed: {}", r.error_summary());
                    None
                }
                Err(e) => {
                    log::warn!("student build failed: {e}");
                    None
                }
            }
        } else {
            Some(self.write(state, &format!("deck-v{v}-student.pdf"), &pdf_bytes)?)
        };
        let d = state.deck_mut();
        d.tex = Some(tex);
        d.pdf = Some(pdf);
        d.student_pdf = student;
        Ok(format!("deck v{v} finalized"))
    }

    /// Validates a revision, opens the next version and persists the
    /// rewound state. The caller then drives the job with the same guard.
    pub fn begin_revision(&self, guard: &JobGuard, request: RevisionRequest) -> Result<JobState, OrchestratorError> {
        if request.text.trim().is_empty() {
            return Err(OrchestratorError::InvalidRevision("revision text is empty".into()));
        }
        let mut state = self.store.load(guard.id())?;
        let invalid = || OrchestratorError::InvalidScopeForState {
            scope: request.scope,
            stage: state.stage,
        };
        if !state.revisable() {
            return Err(invalid());
        }
        let restart = match request.scope {
            RevisionScope::Plan => PipelineStage::Planning,
            RevisionScope::Content => {
                if state.artifacts.plan_json.is_none() {
                    return Err(invalid());
                }
                PipelineStage::Generation
            }
            RevisionScope::Enhancement => {
                if state.deck().compiled_tex.is_none() || state.deck().compiled_pdf.is_none() {
                    return Err(invalid());
                }
                PipelineStage::Enhancement
            }
        };
        let prev = state.deck().clone();
        let v = state.version + 1;
        let mut next = DeckVersion {
            version: v,
            revision: Some(request.clone()),
            ..Default::default()
        };
        if request.scope != RevisionScope::Plan {
            next.plan = prev.plan.clone();
        }
        if request.scope == RevisionScope::Enhancement {
            let copy = |from: &Option<String>, to: String| -> Result<Option<String>, OrchestratorError> {
                let bytes = fs::read(self.store.artifact_path(&state.id, from.as_deref().unwrap_or_default()))?;
                Ok(Some(self.store.write_artifact(&state.id, &to, bytes)?))
            };
            next.generated_tex = prev.generated_tex.clone();
            next.compiled_tex = copy(&prev.compiled_tex, format!("compiled-v{v}.tex"))?;
            next.compiled_pdf = copy(&prev.compiled_pdf, format!("compiled-v{v}.pdf"))?;
            next.pages = prev.pages;
            next.compile_logs = prev.compile_logs.clone();
        }
        state.version = v;
        state.artifacts.decks.insert(v, next);
        state.failure = None;
        let detail = format!("revision v{v} ({:?}): {}", request.scope, request.text.trim());
        state.transition(restart, Some(detail));
        self.store.persist(&state)?;
        Ok(state)
    }

    pub fn apply_revision(&self, id: &str, request: RevisionRequest) -> Result<JobState, OrchestratorError> {
        let guard = self.lock(id)?;
        self.begin_revision(&guard, request)?;
        self.drive(&guard, usize::MAX)
    }
}

fn rel_name(p: &std::path::Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Summaries in record order; calls run concurrently, bounded by the
/// gateway's in-flight limit.
fn summarize_all(
    llm: &dyn LlmClient,
    records: &[retrieval::PaperRecord],
    budget: usize,
) -> StageResult<Vec<SourceSummary>> {
    let results: Vec<Result<SourceSummary, RetrievalError>> = std::thread::scope(|s| {
        let handles: Vec<_> = records
            .iter()
            .map(|r| s.spawn(move || retrieval::summarize(llm, r, None, budget)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("summarize thread panicked")).collect()
    });
    let mut out = Vec::new();
    for (r, res) in records.iter().zip(results) {
        match res {
            Ok(s) => out.push(s),
            Err(e @ (RetrievalError::SummaryTruncated(_) | RetrievalError::EmptyAbstract(_))) => {
                log::warn!("skipping {}: {e}", r.arxiv_id);
            }
            Err(e) => return Err(e.to_string()),
        }
    }
    Ok(out)
}
