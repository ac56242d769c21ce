//! Textbook snippet corpus with BM25 ranking.
//!
//! ```text
//! score(D, Q) = Σ_{q ∈ Q} idf(q) · tf(q,D)·(k1+1) / (tf(q,D) + k1·(1 − b + b·|D|/avgdl))
//! idf(q)      = max(0, ln((N − n(q) + 0.5) / (n(q) + 0.5)))
//! ```
//!
//! Query terms are summed with multiplicity. The idf floor means a term that
//! occurs in more than half of the corpus contributes nothing, so snippets
//! that only match such terms score zero and are left out of [`CorpusIndex::top_k`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("duplicate snippet id `{0}`")]
    DuplicateId(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("snippet `{0}` has no text")]
    EmptySnippet(String),
    #[error("unknown snippet `{0}`")]
    UnknownSnippet(String),
    #[error("invalid BM25 parameters: {0}")]
    InvalidParams(String),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One passage of a textbook. Serialized as one JSON object per line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snippet {
    pub id: String,
    pub source_title: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub authors: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub year: Option<String>,
}

impl Snippet {
    pub fn new(id: impl Into<String>, source_title: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            source_title: source_title.into(),
            text: text.into(),
            section: None,
            authors: Vec::new(),
            year: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if !(self.k1 >= 0.0 && self.k1.is_finite()) {
            return Err(CorpusError::InvalidParams(format!("k1 = {} must be ≥ 0", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(CorpusError::InvalidParams(format!("b = {} must lie in [0, 1]", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSnippet {
    pub snippet: Snippet,
    pub score: f64,
}

/// Lowercases and splits on every run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Relative gap below which two scores count as tied in [`CorpusIndex::top_k`].
pub const SCORE_TIE_TOLERANCE: f64 = 1e-12;

/// Immutable once built.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusIndex {
    params: Bm25Params,
    snippets: Vec<Snippet>,
    by_id: HashMap<String, u32>,
    postings: HashMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
}

impl CorpusIndex {
    /// Single pass over `snippets`.
    pub fn build(
        snippets: impl IntoIterator<Item = Snippet>,
        params: Bm25Params,
    ) -> Result<Self, CorpusError> {
        params.validate()?;
        let mut index = CorpusIndex {
            params,
            snippets: Vec::new(),
            by_id: HashMap::new(),
            postings: HashMap::new(),
            doc_lengths: Vec::new(),
            avg_doc_length: 0.0,
        };
        let mut total_len: u64 = 0;
        for snippet in snippets {
            if index.by_id.contains_key(&snippet.id) {
                return Err(CorpusError::DuplicateId(snippet.id));
            }
            if snippet.text.split_whitespace().next().is_none() {
                return Err(CorpusError::EmptySnippet(snippet.id));
            }
            let doc = index.snippets.len() as u32;
            let tokens = tokenize(&snippet.text);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (term, count) in tf {
                index.postings.entry(term).or_default().push(Posting { doc, tf: count });
            }
            total_len += tokens.len() as u64;
            index.doc_lengths.push(tokens.len() as u32);
            index.by_id.insert(snippet.id.clone(), doc);
            index.snippets.push(snippet);
        }
        if index.snippets.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        index.avg_doc_length = total_len as f64 / index.snippets.len() as f64;
        Ok(index)
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn n_docs(&self) -> usize {
        self.snippets.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn snippet(&self, id: &str) -> Option<&Snippet> {
        self.by_id.get(id).map(|&d| &self.snippets[d as usize])
    }

    pub fn snippets(&self) -> &[Snippet] {
        &self.snippets
    }

    pub fn doc_length(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).map(|&d| self.doc_lengths[d as usize] as usize)
    }

    /// `(snippet id, term frequency)` for every snippet containing `term`.
    pub fn postings(&self, term: &str) -> Vec<(&str, u32)> {
        self.postings
            .get(term)
            .map(|ps| {
                ps.iter()
                    .map(|p| (self.snippets[p.doc as usize].id.as_str(), p.tf))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.postings.get(term).map_or(0, Vec::len) as f64;
        let total = self.snippets.len() as f64;
        ((total - n + 0.5) / (n + 0.5)).ln().max(0.0)
    }

    fn term_weight(&self, tf: u32, doc_len: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let norm = if self.avg_doc_length > 0.0 {
            doc_len as f64 / self.avg_doc_length
        } else {
            0.0
        };
        tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm))
    }

    pub fn score(&self, query: &[String], snippet_id: &str) -> Result<f64, CorpusError> {
        let doc = *self
            .by_id
            .get(snippet_id)
            .ok_or_else(|| CorpusError::UnknownSnippet(snippet_id.to_string()))?;
        let doc_len = self.doc_lengths[doc as usize];
        let mut total = 0.0;
        for term in query {
            let Some(postings) = self.postings.get(term) else { continue };
            if let Some(p) = postings.iter().find(|p| p.doc == doc) {
                total += self.idf(term) * self.term_weight(p.tf, doc_len);
            }
        }
        Ok(total)
    }

    /// Scores every snippet that shares a term with `query`.
    fn score_all(&self, query: &[String]) -> HashMap<u32, f64> {
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in query {
            let Some(postings) = self.postings.get(term) else { continue };
            let idf = self.idf(term);
            for p in postings {
                let w = idf * self.term_weight(p.tf, self.doc_lengths[p.doc as usize]);
                *scores.entry(p.doc).or_default() += w;
            }
        }
        scores
    }

    /// Highest-scoring snippets, best first; ties (within
    /// [`SCORE_TIE_TOLERANCE`]) go to the smaller id and zero scores are dropped.
    pub fn top_k(&self, query: &str, k: usize) -> Vec<ScoredSnippet> {
        let terms = tokenize(query);
        let mut ranked: Vec<(u32, f64)> = self
            .score_all(&terms)
            .into_iter()
            .filter(|&(_, s)| s > 0.0)
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        // Scores equal up to rounding form one tie group, ordered by id.
        let mut start = 0;
        while start < ranked.len() {
            let top = ranked[start].1;
            let end = start + ranked[start..].iter().take_while(|r| top - r.1 <= SCORE_TIE_TOLERANCE * top).count();
            ranked[start..end].sort_by(|a, b| self.snippets[a.0 as usize].id.cmp(&self.snippets[b.0 as usize].id));
            start = end;
        }
        ranked
            .into_iter()
            .take(k)
            .map(|(doc, score)| ScoredSnippet {
                snippet: self.snippets[doc as usize].clone(),
                score,
            })
            .collect()
    }

    /// Score of the best match, or 0 when nothing matches.
    pub fn best_score(&self, query: &str) -> f64 {
        self.top_k(query, 1).first().map_or(0.0, |s| s.score)
    }

    /// Fraction of distinct query terms that occur somewhere in the corpus.
    pub fn coverage(&self, query: &str) -> f64 {
        let terms: std::collections::BTreeSet<String> = tokenize(query).into_iter().collect();
        if terms.is_empty() {
            return 0.0;
        }
        let hits = terms.iter().filter(|t| self.postings.contains_key(t.as_str())).count();
        hits as f64 / terms.len() as f64
    }

    pub fn save(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let file = File::create(path)?;
        serde_json::to_writer(io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> io::Result<Self> {
        let file = File::open(path)?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }

    /// Term → document-frequency table, sorted by term.
    pub fn document_frequencies(&self) -> BTreeMap<&str, usize> {
        self.postings.iter().map(|(t, p)| (t.as_str(), p.len())).collect()
    }
}

/// Reads a JSON-lines corpus file. Blank lines are skipped.
pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<Snippet>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let snippet: Snippet = serde_json::from_str(&line).map_err(|e| CorpusError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(snippet.id.clone()) {
            return Err(CorpusError::DuplicateId(snippet.id));
        }
        out.push(snippet);
    }
    Ok(out)
}
