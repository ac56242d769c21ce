//! The Retriever: keyword generation, arXiv or textbook retrieval,
//! summarization, and the Moderator's ranked source selection.

pub mod arxiv;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusIndex;
use crate::gateway::{
    bindings, complete_template, estimate_tokens, GatewayError, LlmClient, PromptTemplate,
    TemplateId, TransportError,
};

pub use arxiv::{ArxivClient, HttpGet, PaperRecord, SortOrder, UreqGet};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("topic is empty")]
    EmptyTopic,
    #[error("keyword completion contained no keywords")]
    EmptyKeywordSet,
    #[error("keyword `{0}` contains a comma")]
    BadKeyword(String),
    #[error("model output was truncated during {0}")]
    Truncated(&'static str),
    #[error("summary of `{0}` was truncated")]
    SummaryTruncated(String),
    #[error("paper `{0}` has no abstract")]
    EmptyAbstract(String),
    #[error("source selection matched no candidate")]
    NoneSelected,
    #[error("no candidates to select from")]
    NoCandidates,
    #[error("prompt needs {needed} tokens, budget is {budget}")]
    ContextBudgetExceeded { needed: usize, budget: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed arXiv feed: {0}")]
    MalformedFeed(String),
    #[error("arXiv transport: {0}")]
    Transport(TransportError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Ordered, non-empty list of search keywords.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct KeywordSet(Vec<String>);

impl KeywordSet {
    pub fn new(keywords: Vec<String>) -> Result<Self, RetrievalError> {
        if keywords.is_empty() {
            return Err(RetrievalError::EmptyKeywordSet);
        }
        if let Some(bad) = keywords.iter().find(|k| k.contains(',') || k.trim().is_empty()) {
            return Err(RetrievalError::BadKeyword(bad.clone()));
        }
        Ok(Self(keywords))
    }

    /// Comma-separated list; whitespace trimmed, empties dropped.
    pub fn parse(text: &str) -> Result<Self, RetrievalError> {
        let keywords: Vec<String> = text
            .split([',', '\n'])
            .map(|k| k.trim().trim_end_matches('.').trim().to_string())
            .filter(|k| !k.is_empty())
            .collect();
        Self::new(keywords)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn joined(&self) -> String {
        self.0.join(" ")
    }
}

impl TryFrom<Vec<String>> for KeywordSet {
    type Error = RetrievalError;
    fn try_from(v: Vec<String>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<KeywordSet> for Vec<String> {
    fn from(k: KeywordSet) -> Self {
        k.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Arxiv,
    Textbook,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Citation {
    /// Key used in `\cite{}` and `\bibitem{}`.
    pub key: String,
    pub title: String,
    pub authors: Vec<String>,
    pub year: String,
    pub id: String,
}

impl Citation {
    pub fn is_complete(&self) -> bool {
        !self.key.is_empty()
            && !self.title.is_empty()
            && !self.authors.is_empty()
            && !self.year.is_empty()
            && !self.id.is_empty()
    }

    /// Plain-text reference line, e.g. `Lensen, A., Xue, B. (2021). Title. arXiv:2108.09914`.
    pub fn reference(&self) -> String {
        format!("{} ({}). {}. {}", self.authors.join(", "), self.year, self.title, self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum SourceRef {
    Paper(Box<PaperRecord>),
    Snippet(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSummary {
    pub provenance: Provenance,
    pub body: String,
    pub citation: Citation,
    pub source_ref: SourceRef,
}

impl SourceSummary {
    pub fn title(&self) -> &str {
        &self.citation.title
    }

    pub fn key(&self) -> &str {
        &self.citation.key
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSelection {
    pub ranked: Vec<SourceSummary>,
    #[serde(default)]
    pub rationale: Option<String>,
}

impl SourceSelection {
    pub fn keys(&self) -> Vec<&str> {
        self.ranked.iter().map(SourceSummary::key).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.ranked.is_empty()
    }

    /// Source material as bound into the plan, codegen and enhancer prompts.
    pub fn context_text(&self) -> String {
        self.ranked
            .iter()
            .map(|s| {
                format!(
                    "Source [{}]: {} ({}, {})\n{}",
                    s.key(),
                    s.title(),
                    s.citation.authors.join(", "),
                    s.citation.year,
                    s.body.trim()
                )
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

/// Headings an arXiv summary is expected to cover.
pub const SUMMARY_SECTIONS: [&str; 4] = ["Summary", "Contributions", "Methodology", "Results"];

/// Section headings from [`SUMMARY_SECTIONS`] that do not occur in `body`.
pub fn missing_summary_sections(body: &str) -> Vec<&'static str> {
    let lower = body.to_lowercase();
    SUMMARY_SECTIONS
        .iter()
        .copied()
        .filter(|s| !lower.contains(&s.to_lowercase()))
        .collect()
}

fn key_fragment(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_lowercase()
}

/// Characters allowed in generated cite keys.
pub fn sanitize_key(s: &str) -> String {
    let k: String = s
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | ':' | '.') { c } else { '-' })
        .collect();
    k.trim_matches('-').to_lowercase()
}

pub fn paper_citation(record: &PaperRecord) -> Citation {
    let surname = record
        .authors
        .first()
        .and_then(|a| a.split_whitespace().last())
        .map(key_fragment)
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "arxiv".to_string());
    Citation {
        key: format!("{surname}{}", record.year()),
        title: record.title.clone(),
        authors: if record.authors.is_empty() {
            vec!["Anonymous".to_string()]
        } else {
            record.authors.clone()
        },
        year: record.year().to_string(),
        id: format!("arXiv:{}", record.arxiv_id),
    }
}

pub fn snippet_citation(snippet: &crate::corpus::Snippet) -> Citation {
    Citation {
        key: sanitize_key(&snippet.id),
        title: match &snippet.section {
            Some(s) => format!("{}, {}", snippet.source_title, s),
            None => snippet.source_title.clone(),
        },
        authors: if snippet.authors.is_empty() {
            vec![snippet.source_title.clone()]
        } else {
            snippet.authors.clone()
        },
        year: snippet.year.clone().unwrap_or_else(|| "n.d.".to_string()),
        id: snippet.id.clone(),
    }
}

/// Appends `b`, `c`, ... to repeated cite keys, keeping the first as is.
pub fn dedupe_cite_keys(sources: &mut [SourceSummary]) {
    let mut seen: HashMap<String, u32> = HashMap::new();
    let taken: HashSet<String> = sources.iter().map(|s| s.citation.key.clone()).collect();
    for s in sources.iter_mut() {
        let base = s.citation.key.clone();
        let n = seen.entry(base.clone()).or_insert(0);
        *n += 1;
        if *n > 1 {
            let mut suffix = b'a' + (*n as u8 - 1);
            let mut candidate = format!("{base}{}", suffix as char);
            while taken.contains(&candidate) && suffix < b'z' {
                suffix += 1;
                candidate = format!("{base}{}", suffix as char);
            }
            s.citation.key = candidate;
        }
    }
}

pub fn generate_keywords(llm: &dyn LlmClient, topic: &str) -> Result<KeywordSet, RetrievalError> {
    if topic.trim().is_empty() {
        return Err(RetrievalError::EmptyTopic);
    }
    let (_, completion) =
        complete_template(llm, TemplateId::Keywords, &bindings([("topic", topic)]))?;
    if !completion.is_usable() {
        return Err(RetrievalError::Truncated("keyword generation"));
    }
    KeywordSet::parse(&completion.text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextbookQuery {
    /// The Moderator's keywords, space-joined.
    #[default]
    Keywords,
    /// The raw topic string.
    Topic,
    /// Topic followed by keywords.
    Both,
}

pub fn textbook_query(topic: &str, keywords: &KeywordSet, mode: TextbookQuery) -> String {
    match mode {
        TextbookQuery::Keywords => keywords.joined(),
        TextbookQuery::Topic => topic.to_string(),
        TextbookQuery::Both => format!("{topic} {}", keywords.joined()),
    }
}

/// BM25 top-k snippets wrapped verbatim as summaries. Makes no model calls.
pub fn retrieve_textbook(
    index: &CorpusIndex,
    topic: &str,
    keywords: &KeywordSet,
    k: usize,
    mode: TextbookQuery,
) -> Vec<SourceSummary> {
    let query = textbook_query(topic, keywords, mode);
    index
        .top_k(&query, k.max(1))
        .into_iter()
        .map(|scored| SourceSummary {
            provenance: Provenance::Textbook,
            body: scored.snippet.text.clone(),
            citation: snippet_citation(&scored.snippet),
            source_ref: SourceRef::Snippet(scored.snippet.id.clone()),
        })
        .collect()
}

pub const TRUNCATION_MARKER: &str = "\n[... truncated to fit the context budget]";

/// Cuts `text` so that `overhead_bytes + result.len()` stays within
/// `budget_tokens` under [`estimate_tokens`].
fn fit_to_budget(text: &str, overhead_bytes: usize, budget_tokens: usize) -> Option<String> {
    let capacity = (budget_tokens * 4).checked_sub(overhead_bytes)?;
    if text.len() <= capacity {
        return Some(text.to_string());
    }
    let keep = capacity.checked_sub(TRUNCATION_MARKER.len())?;
    let mut cut = keep.min(text.len());
    while !text.is_char_boundary(cut) {
        cut -= 1;
    }
    Some(format!("{}{TRUNCATION_MARKER}", &text[..cut]))
}

/// Binds title, abstract and paper text (full text when given, else the
/// abstract) into the summarization prompt, truncating the paper text to
/// `budget_tokens`.
pub fn summarization_prompt(
    record: &PaperRecord,
    fulltext: Option<&str>,
    budget_tokens: usize,
) -> Result<String, RetrievalError> {
    let template = PromptTemplate::builtin(TemplateId::Summarize);
    let mut binds: BTreeMap<String, String> = bindings([
        ("Title", record.title.as_str()),
        ("Abstract", record.abstract_text.as_str()),
        ("Paper", ""),
    ]);
    let overhead = template.render(&binds).map_err(GatewayError::from)?.len();
    let paper = fulltext.unwrap_or(&record.abstract_text);
    let fitted = fit_to_budget(paper, overhead, budget_tokens).ok_or(
        RetrievalError::ContextBudgetExceeded {
            needed: estimate_tokens(&" ".repeat(overhead)),
            budget: budget_tokens,
        },
    )?;
    binds.insert("Paper".into(), fitted);
    let prompt = template.render(&binds).map_err(GatewayError::from)?;
    debug_assert!(estimate_tokens(&prompt) <= budget_tokens);
    Ok(prompt)
}

pub fn summarize(
    llm: &dyn LlmClient,
    record: &PaperRecord,
    fulltext: Option<&str>,
    budget_tokens: usize,
) -> Result<SourceSummary, RetrievalError> {
    if record.abstract_text.trim().is_empty() {
        return Err(RetrievalError::EmptyAbstract(record.arxiv_id.clone()));
    }
    let prompt = summarization_prompt(record, fulltext, budget_tokens)?;
    let completion = llm.complete(
        TemplateId::Summarize.role(),
        &prompt,
        &crate::gateway::SamplingParams::for_template(TemplateId::Summarize),
    )?;
    if !completion.is_usable() {
        return Err(RetrievalError::SummaryTruncated(record.arxiv_id.clone()));
    }
    let missing = missing_summary_sections(&completion.text);
    if !missing.is_empty() {
        log::warn!("summary of {} lacks sections {missing:?}", record.arxiv_id);
    }
    Ok(SourceSummary {
        provenance: Provenance::Arxiv,
        body: completion.text.trim().to_string(),
        citation: paper_citation(record),
        source_ref: SourceRef::Paper(Box::new(record.clone())),
    })
}

/// Candidate listing bound into the selection prompt.
pub fn candidate_listing(candidates: &[SourceSummary]) -> String {
    candidates
        .iter()
        .map(|c| {
            format!(
                "[{}] Title: {} ({}, {})\n{}",
                c.key(),
                c.title(),
                c.citation.authors.join(", "),
                c.citation.year,
                c.body.trim()
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn normalize(s: &str) -> String {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

fn contains_key(line: &str, key: &str) -> bool {
    let is_key_char = |c: char| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | ':' | '.');
    let lower = line.to_lowercase();
    let key = key.to_lowercase();
    lower.match_indices(&key).any(|(i, _)| {
        let before = lower[..i].chars().next_back();
        let after = lower[i + key.len()..].chars().next();
        before.is_none_or(|c| !is_key_char(c))
            && after.is_none_or(|c| !is_key_char(c) || c == '.' && lower[i + key.len() + 1..].chars().next().is_none_or(|n| !is_key_char(n)))
    })
}

/// Maps each line of the model's ranking onto a candidate: by cite key first,
/// then by normalized-title containment when that title is unique among the
/// candidates. Unmatched lines are ignored with a warning.
pub fn parse_selection(
    completion: &str,
    candidates: &[SourceSummary],
    limit: usize,
) -> Result<SourceSelection, RetrievalError> {
    let mut title_counts: HashMap<String, usize> = HashMap::new();
    for c in candidates {
        *title_counts.entry(normalize(c.title())).or_default() += 1;
    }
    let mut picked: Vec<usize> = Vec::new();
    for line in completion.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if picked.len() >= limit {
            break;
        }
        let by_key = candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| contains_key(line, c.key()))
            .max_by_key(|(_, c)| c.key().len())
            .map(|(i, _)| i);
        let matched = by_key.or_else(|| {
            let norm_line = normalize(line);
            candidates
                .iter()
                .enumerate()
                .filter(|(_, c)| {
                    let t = normalize(c.title());
                    !t.is_empty() && title_counts[&t] == 1 && format!(" {norm_line} ").contains(&format!(" {t} "))
                })
                .max_by_key(|(_, c)| c.title().len())
                .map(|(i, _)| i)
        });
        match matched {
            Some(i) if !picked.contains(&i) => picked.push(i),
            Some(_) => {}
            None => log::warn!("selection line matched no candidate: {line}"),
        }
    }
    if picked.is_empty() {
        return Err(RetrievalError::NoneSelected);
    }
    Ok(SourceSelection {
        ranked: picked.into_iter().map(|i| candidates[i].clone()).collect(),
        rationale: Some(completion.trim().to_string()),
    })
}

pub fn select_sources(
    llm: &dyn LlmClient,
    topic: &str,
    candidates: &[SourceSummary],
    limit: usize,
) -> Result<SourceSelection, RetrievalError> {
    if candidates.is_empty() {
        return Err(RetrievalError::NoCandidates);
    }
    let (_, completion) = complete_template(
        llm,
        TemplateId::SelectSources,
        &bindings([("topic", topic.to_string()), ("summaries", candidate_listing(candidates))]),
    )?;
    if !completion.is_usable() {
        return Err(RetrievalError::Truncated("source selection"));
    }
    parse_selection(&completion.text, candidates, limit.max(1))
}
