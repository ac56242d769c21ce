#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use slidesmith::codegen::LatexEngine;
use slidesmith::config::load_corpus;
use slidesmith::corpus::Snippet;
use slidesmith::gateway::{FixtureStore, Gateway, LlmClient};
use slidesmith::orchestrator::{JobStore, Orchestrator};

pub const FIXTURE_TOPIC: &str = "Neurotransmitters";

pub fn crate_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

pub fn fixture(rel: &str) -> PathBuf {
    crate_dir().join("fixtures").join(rel)
}

pub fn read_fixture(rel: &str) -> String {
    std::fs::read_to_string(fixture(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

pub fn replay_gateway() -> Gateway {
    Gateway::replay(FixtureStore::open(fixture("replay")).expect("replay fixtures"))
}

pub fn offline_orchestrator(jobs: &Path, llm: Arc<dyn LlmClient>, engine: Arc<dyn LatexEngine>) -> Orchestrator {
    let corpus = load_corpus(&fixture("corpus/neuroscience.jsonl")).expect("corpus");
    Orchestrator::new(JobStore::open(jobs).unwrap(), llm, engine).with_corpus(Arc::new(corpus))
}

/// Textbook BM25, written out term by term over raw token lists.
pub struct Oracle {
    pub ids: Vec<String>,
    pub docs: Vec<Vec<String>>,
    pub k1: f64,
    pub b: f64,
}

pub fn oracle_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

impl Oracle {
    pub fn new(snippets: &[Snippet]) -> Self {
        Self {
            ids: snippets.iter().map(|s| s.id.clone()).collect(),
            docs: snippets.iter().map(|s| oracle_tokens(&s.text)).collect(),
            k1: 1.2,
            b: 0.75,
        }
    }

    pub fn score(&self, query: &str, doc: usize) -> f64 {
        let n = self.docs.len() as f64;
        let avgdl = self.docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
        let dl = self.docs[doc].len() as f64;
        let mut s = 0.0;
        for q in oracle_tokens(query) {
            let df = self.docs.iter().filter(|d| d.contains(&q)).count() as f64;
            let idf = ((n - df + 0.5) / (df + 0.5)).ln().max(0.0);
            let tf = self.docs[doc].iter().filter(|t| **t == q).count() as f64;
            s += idf * (tf * (self.k1 + 1.0)) / (tf + self.k1 * (1.0 - self.b + self.b * dl / avgdl));
        }
        s
    }

    /// Every document scored, sorted best first with ids breaking ties.
    pub fn top_k(&self, query: &str, k: usize) -> Vec<(String, f64)> {
        let mut all: Vec<(String, f64)> = (0..self.docs.len())
            .map(|d| (self.ids[d].clone(), self.score(query, d)))
            .filter(|(_, s)| *s > 0.0)
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        // Group scores within 1e-12 (relative) of each group's best, then
        // order each group by id.
        let mut out: Vec<(String, f64)> = Vec::new();
        let mut rest = all.as_slice();
        while let Some(first) = rest.first() {
            let n = rest.iter().take_while(|r| first.1 - r.1 <= 1e-12 * first.1).count();
            let mut group = rest[..n].to_vec();
            group.sort_by(|a, b| a.0.cmp(&b.0));
            out.extend(group);
            rest = &rest[n..];
        }
        out.truncate(k);
        out
    }
}

/// A corpus of at most `max_docs` documents over a vocabulary of at most
/// `max_vocab` words, with mixed case and punctuation between tokens.
pub fn random_corpus(rng: &mut StdRng, max_docs: usize, max_vocab: usize) -> (Vec<Snippet>, Vec<String>) {
    let vocab_size = rng.random_range(1..=max_vocab);
    let vocab: Vec<String> = (0..vocab_size).map(|i| format!("w{i}")).collect();
    let n_docs = rng.random_range(1..=max_docs);
    let seps = [" ", ", ", ". ", " - ", "\n", "/"];
    let snippets = (0..n_docs)
        .map(|d| {
            let len = rng.random_range(1..=30);
            let words: Vec<String> = (0..len)
                .map(|_| {
                    let w = &vocab[rng.random_range(0..vocab_size)];
                    if rng.random_bool(0.2) { w.to_uppercase() } else { w.clone() }
                })
                .collect();
            let mut text = String::new();
            for (i, w) in words.iter().enumerate() {
                if i > 0 {
                    text.push_str(seps[rng.random_range(0..seps.len())]);
                }
                text.push_str(w);
            }
            Snippet::new(format!("d{d:02}"), "Random corpus", text)
        })
        .collect();
    (snippets, vocab)
}

pub fn random_query(rng: &mut StdRng, vocab: &[String]) -> String {
    let n = rng.random_range(1..=5);
    let mut terms: Vec<String> = (0..n).map(|_| vocab[rng.random_range(0..vocab.len())].clone()).collect();
    if rng.random_bool(0.3) {
        terms.push("absentterm".into());
    }
    terms.join(" ")
}

pub fn seeded(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Word counts, for comparing token multisets.
pub fn counts(tokens: &[String]) -> HashMap<&str, usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_default() += 1;
    }
    m
}
