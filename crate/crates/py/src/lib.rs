//! Python bindings: the BM25 corpus, plan and deck checks, macro rendering,
//! and a blocking pipeline run.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use slidesmith_core::codegen::{self, BeamerSource};
use slidesmith_core::config::{load_corpus, Settings};
use slidesmith_core::corpus::{self, Bm25Params, Snippet};
use slidesmith_core::enhancer::{self, MacroCall, MacroKind};
use slidesmith_core::gateway;
use slidesmith_core::orchestrator::{JobConfig, SourceChoice};
use slidesmith_core::planning::{self, StructuralGuide};
use slidesmith_core::retrieval::Provenance;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Serializable value to plain Python objects, via the json module.
fn to_py<'py>(py: Python<'py>, v: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn provenance(source: &str) -> PyResult<Provenance> {
    match source.to_ascii_lowercase().as_str() {
        "arxiv" => Ok(Provenance::Arxiv),
        "textbook" => Ok(Provenance::Textbook),
        other => Err(value_err(format!("unknown source `{other}`, expected arxiv or textbook"))),
    }
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    corpus::tokenize(text)
}

/// BM25 index over textbook snippets.
#[pyclass(module = "slidesmith_py", frozen)]
struct CorpusIndex {
    inner: corpus::CorpusIndex,
}

#[pymethods]
impl CorpusIndex {
    /// `snippets` is a list of dicts with at least `id`, `source_title` and `text`.
    #[new]
    #[pyo3(signature = (snippets, k1 = 1.2, b = 0.75))]
    fn new(py: Python<'_>, snippets: Vec<Bound<'_, PyDict>>, k1: f64, b: f64) -> PyResult<Self> {
        let json = py.import("json")?;
        let docs = snippets
            .iter()
            .map(|d| {
                let text: String = json.call_method1("dumps", (d,))?.extract()?;
                serde_json::from_str::<Snippet>(&text).map_err(value_err)
            })
            .collect::<PyResult<Vec<_>>>()?;
        let inner = corpus::CorpusIndex::build(docs, Bm25Params { k1, b }).map_err(value_err)?;
        Ok(Self { inner })
    }

    /// A saved index, or a `.jsonl` snippet file indexed with default parameters.
    #[staticmethod]
    fn open(path: PathBuf) -> PyResult<Self> {
        load_corpus(&path).map(|inner| Self { inner }).map_err(PyIOError::new_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    /// `(id, score)` pairs, best first.
    #[pyo3(signature = (query, k = 5))]
    fn top_k(&self, query: &str, k: usize) -> Vec<(String, f64)> {
        self.inner
            .top_k(query, k)
            .into_iter()
            .map(|s| (s.snippet.id, s.score))
            .collect()
    }

    fn score(&self, query: &str, snippet_id: &str) -> PyResult<f64> {
        self.inner.score(&corpus::tokenize(query), snippet_id).map_err(value_err)
    }

    fn idf(&self, term: &str) -> f64 {
        self.inner.idf(term)
    }

    fn coverage(&self, query: &str) -> f64 {
        self.inner.coverage(query)
    }

    fn snippet<'py>(&self, py: Python<'py>, snippet_id: &str) -> PyResult<Option<Bound<'py, PyAny>>> {
        self.inner.snippet(snippet_id).map(|s| to_py(py, s)).transpose()
    }

    fn __len__(&self) -> usize {
        self.inner.n_docs()
    }
}

/// A parsed slide plan.
#[pyclass(module = "slidesmith_py", frozen)]
struct SlidePlan {
    inner: planning::SlidePlan,
}

#[pymethods]
impl SlidePlan {
    #[staticmethod]
    #[pyo3(signature = (text, topic, source = "arxiv"))]
    fn parse(text: &str, topic: &str, source: &str) -> PyResult<Self> {
        let inner = planning::parse_plan(text, topic, provenance(source)?).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn titles(&self) -> Vec<String> {
        self.inner.slides.iter().map(|s| s.title.clone()).collect()
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.parse_warnings.clone()
    }

    /// Diagnostics against the standard structural guide.
    fn validate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &planning::validate_plan(&self.inner, &StructuralGuide::standard()))
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// A Beamer document split into preamble, frames and references.
#[pyclass(module = "slidesmith_py", frozen)]
struct BeamerDeck {
    inner: BeamerSource,
}

#[pymethods]
impl BeamerDeck {
    #[new]
    fn new(raw: String) -> PyResult<Self> {
        BeamerSource::parse(raw).map(|inner| Self { inner }).map_err(value_err)
    }

    #[getter]
    fn raw(&self) -> &str {
        &self.inner.raw
    }

    #[getter]
    fn frame_titles(&self) -> Vec<String> {
        self.inner.frames.iter().map(|f| f.title.clone()).collect()
    }

    /// Frame kinds as names: Title, Content, References, ...
    #[getter]
    fn frame_kinds(&self) -> PyResult<Vec<String>> {
        self.inner
            .frames
            .iter()
            .map(|f| match serde_json::to_value(f.kind).map_err(value_err)? {
                serde_json::Value::String(s) => Ok(s),
                other => Ok(other.to_string()),
            })
            .collect()
    }

    #[getter]
    fn bib_keys(&self) -> Vec<String> {
        self.inner.bib_keys().into_iter().map(String::from).collect()
    }

    fn bullets(&self, frame: usize) -> PyResult<Vec<String>> {
        let f = self
            .inner
            .frames
            .get(frame)
            .ok_or_else(|| PyValueError::new_err(format!("no frame {frame}")))?;
        Ok(f.bullets.iter().map(|b| b.text.clone()).collect())
    }

    fn lint<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &codegen::lint(&self.inner))
    }

    fn has_lint_errors(&self) -> bool {
        codegen::has_errors(&codegen::lint(&self.inner))
    }

    fn __len__(&self) -> usize {
        self.inner.frames.len()
    }
}

/// Insertion-only check between a compiled deck and its enhanced version.
#[pyfunction]
fn validate_enhancements<'py>(py: Python<'py>, before: &BeamerDeck, after: &BeamerDeck) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &enhancer::validate_enhancements(&before.inner, &after.inner))
}

/// `kind` is one of Pipeline, InlineFormula, InlinePseudocode, ConfMat,
/// Network, GenericPlot.
#[pyfunction]
fn render_macro(kind: &str, args: Vec<String>) -> PyResult<String> {
    let kind = MacroKind::ALL
        .into_iter()
        .find(|k| format!("{k:?}").eq_ignore_ascii_case(kind) || k.command() == kind.trim_start_matches('\\'))
        .ok_or_else(|| value_err(format!("unknown macro `{kind}`")))?;
    enhancer::render_macro(&MacroCall::new(kind, args)).map_err(value_err)
}

/// A one-frame Beamer document with the macro library loaded.
#[pyfunction]
fn standalone_document(body: &str) -> String {
    enhancer::standalone_document(body)
}

/// Fixture file stem for a prompt in record/replay mode.
#[pyfunction]
fn transcript_key(prompt: &str) -> String {
    gateway::transcript_key(prompt)
}

/// Runs one job to completion and returns its persisted state.
///
/// Unset arguments fall back to the `SLIDESMITH_*` environment variables.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (topic, jobs_dir, fixtures_dir = None, corpus = None, engine = None, source = "auto", enhance = true))]
fn run_job<'py>(
    py: Python<'py>,
    topic: &str,
    jobs_dir: PathBuf,
    fixtures_dir: Option<PathBuf>,
    corpus: Option<PathBuf>,
    engine: Option<String>,
    source: &str,
    enhance: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let mut s = Settings::from_env().map_err(value_err)?;
    s.jobs_dir = jobs_dir;
    if let Some(dir) = fixtures_dir {
        s.fixtures_dir = Some(dir);
        s.llm_mode = gateway::GatewayMode::Replay;
    }
    if corpus.is_some() {
        s.corpus = corpus;
    }
    if let Some(e) = engine {
        s.engine_command = e;
    }
    let mut cfg = JobConfig::new(topic);
    cfg.source_kind = source.parse::<SourceChoice>().map_err(value_err)?;
    cfg.enhancement_enabled = enhance;
    let orch = s.orchestrator().map_err(PyRuntimeError::new_err)?;
    let state = py
        .detach(|| orch.run(cfg))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &state)
}

#[pymodule]
fn slidesmith_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<CorpusIndex>()?;
    m.add_class::<SlidePlan>()?;
    m.add_class::<BeamerDeck>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(validate_enhancements, m)?)?;
    m.add_function(wrap_pyfunction!(render_macro, m)?)?;
    m.add_function(wrap_pyfunction!(standalone_document, m)?)?;
    m.add_function(wrap_pyfunction!(transcript_key, m)?)?;
    m.add_function(wrap_pyfunction!(run_job, m)?)?;
    Ok(())
}
