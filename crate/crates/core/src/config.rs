//! Runtime settings read from `SLIDESMITH_*` environment variables.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use crate::codegen::compile::DEFAULT_ENGINE_COMMAND;
use crate::codegen::checker::CheckingEngine;
use crate::codegen::{EngineConfig, LatexEngine, ProcessEngine};
use crate::corpus::{read_jsonl, Bm25Params, CorpusIndex};
use crate::gateway::{FixtureStore, Gateway, GatewayMode, HttpTransport, LlmClient, TransportError};
use crate::orchestrator::{JobStore, Orchestrator};
use crate::retrieval::{ArxivClient, HttpGet, UreqGet};

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub provider_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub llm_mode: GatewayMode,
    pub fixtures_dir: Option<PathBuf>,
    pub jobs_dir: PathBuf,
    pub engine_command: String,
    pub engine_timeout: Duration,
    pub port: u16,
    pub corpus: Option<PathBuf>,
    pub arxiv_endpoint: Option<String>,
    /// A saved Atom feed served instead of the live arXiv API.
    pub arxiv_feed: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            provider_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            api_key: None,
            llm_mode: GatewayMode::Live,
            fixtures_dir: None,
            jobs_dir: PathBuf::from("jobs"),
            engine_command: DEFAULT_ENGINE_COMMAND.into(),
            engine_timeout: Duration::from_secs(120),
            port: 8080,
            corpus: None,
            arxiv_endpoint: None,
            arxiv_feed: None,
        }
    }
}

/// `SLIDESMITH_ENGINE` value selecting the in-process structural checker
/// instead of a TeX installation. Its PDFs are blank pages.
pub const CHECKER_ENGINE: &str = "checker";

fn var(name: &str) -> Option<String> {
    env::var(name).ok().filter(|v| !v.trim().is_empty())
}

impl Settings {
    pub fn from_env() -> Result<Self, String> {
        let mut s = Settings::default();
        if let Some(v) = var("SLIDESMITH_PROVIDER_URL") {
            s.provider_url = v;
        }
        if let Some(v) = var("SLIDESMITH_MODEL") {
            s.model = v;
        }
        s.api_key = var("SLIDESMITH_API_KEY").or_else(|| var("OPENAI_API_KEY"));
        s.fixtures_dir = var("SLIDESMITH_FIXTURES").map(PathBuf::from);
        s.llm_mode = match var("SLIDESMITH_LLM_MODE") {
            Some(m) => m.parse()?,
            None if s.fixtures_dir.is_some() => GatewayMode::Replay,
            None => GatewayMode::Live,
        };
        if let Some(v) = var("SLIDESMITH_JOBS_DIR") {
            s.jobs_dir = PathBuf::from(v);
        }
        if let Some(v) = var("SLIDESMITH_ENGINE") {
            s.engine_command = v;
        }
        if let Some(v) = var("SLIDESMITH_ENGINE_TIMEOUT") {
            let secs: u64 = v.parse().map_err(|_| format!("SLIDESMITH_ENGINE_TIMEOUT: `{v}` is not a number of seconds"))?;
            s.engine_timeout = Duration::from_secs(secs);
        }
        if let Some(v) = var("SLIDESMITH_PORT") {
            s.port = v.parse().map_err(|_| format!("SLIDESMITH_PORT: `{v}` is not a port"))?;
        }
        s.corpus = var("SLIDESMITH_CORPUS").map(PathBuf::from);
        s.arxiv_endpoint = var("SLIDESMITH_ARXIV_ENDPOINT");
        s.arxiv_feed = var("SLIDESMITH_ARXIV_FEED").map(PathBuf::from);
        Ok(s)
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            command: self.engine_command.clone(),
            timeout: self.engine_timeout,
            ..Default::default()
        }
    }

    pub fn gateway(&self) -> Result<Gateway, String> {
        let fixtures = || -> Result<FixtureStore, String> {
            let dir = self
                .fixtures_dir
                .as_ref()
                .ok_or("SLIDESMITH_FIXTURES must be set for replay and record modes")?;
            FixtureStore::open(dir).map_err(|e| format!("fixtures {}: {e}", dir.display()))
        };
        let transport = || Arc::new(HttpTransport::new(&self.provider_url, self.api_key.clone()));
        Ok(match self.llm_mode {
            GatewayMode::Live => Gateway::live(&self.model, transport()),
            GatewayMode::Record => Gateway::record(&self.model, transport(), fixtures()?),
            GatewayMode::Replay => Gateway::replay(fixtures()?),
        })
    }

    pub fn arxiv(&self) -> ArxivClient {
        let http: Arc<dyn HttpGet> = match &self.arxiv_feed {
            Some(path) => Arc::new(FileGet(path.clone())),
            None => Arc::new(UreqGet::new(Duration::from_secs(30))),
        };
        let mut client = ArxivClient::new(http);
        if let Some(e) = &self.arxiv_endpoint {
            client = client.with_endpoint(e.clone());
        }
        if self.arxiv_feed.is_some() {
            client = client.with_min_interval(Duration::ZERO);
        }
        client
    }

    pub fn orchestrator(&self) -> Result<Orchestrator, String> {
        let store = JobStore::open(&self.jobs_dir).map_err(|e| format!("jobs dir {}: {e}", self.jobs_dir.display()))?;
        let llm: Arc<dyn LlmClient> = Arc::new(self.gateway()?);
        let engine: Arc<dyn LatexEngine> = if self.engine_command.trim() == CHECKER_ENGINE {
            Arc::new(CheckingEngine::new())
        } else {
            Arc::new(ProcessEngine::new(self.engine_config()))
        };
        let mut orch = Orchestrator::new(store, llm, engine).with_arxiv(Arc::new(self.arxiv()));
        if let Some(path) = &self.corpus {
            orch = orch.with_corpus(Arc::new(load_corpus(path)?));
        }
        Ok(orch)
    }
}

/// Loads a saved index, or builds one from a `.jsonl` snippet file.
pub fn load_corpus(path: &Path) -> Result<CorpusIndex, String> {
    let shown = path.display();
    if path.extension().is_some_and(|e| e == "jsonl") {
        let snippets = read_jsonl(path).map_err(|e| format!("corpus {shown}: {e}"))?;
        CorpusIndex::build(snippets, Bm25Params::default()).map_err(|e| format!("corpus {shown}: {e}"))
    } else {
        CorpusIndex::load(path).map_err(|e| format!("corpus {shown}: {e}"))
    }
}

/// Serves one saved feed for every query.
struct FileGet(PathBuf);

impl HttpGet for FileGet {
    fn get(&self, _url: &str) -> Result<String, TransportError> {
        fs::read_to_string(&self.0).map_err(|e| TransportError::Connection(format!("{}: {e}", self.0.display())))
    }
}
