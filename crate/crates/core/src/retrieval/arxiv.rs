//! arXiv export API client and Atom feed parser.

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use chrono::{DateTime, NaiveDate};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use super::{KeywordSet, RetrievalError};
use crate::gateway::TransportError;

const ATOM: &str = "http://www.w3.org/2005/Atom";
const ARXIV: &str = "http://arxiv.org/schemas/atom";

pub const DEFAULT_ENDPOINT: &str = "https://export.arxiv.org/api/query";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperRecord {
    pub title: String,
    pub arxiv_id: String,
    pub updated: NaiveDate,
    #[serde(default)]
    pub published: Option<NaiveDate>,
    pub link: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub authors: Vec<String>,
    pub category: String,
    #[serde(default)]
    pub comment: Option<String>,
    #[serde(default)]
    pub journal_ref: Option<String>,
    pub pdf_link: String,
}

impl PaperRecord {
    pub fn year(&self) -> i32 {
        use chrono::Datelike;
        self.published.unwrap_or(self.updated).year()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SortOrder {
    #[default]
    Relevance,
    Date,
}

fn id_grammar() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^(?:\d{4}\.\d{4,5}|[a-z]+(?:-[a-z]+)*(?:\.[A-Z]{2})?/\d{7})(?:v\d+)?$").unwrap()
    })
}

pub fn is_valid_arxiv_id(id: &str) -> bool {
    id_grammar().is_match(id)
}

pub fn pdf_link_for(arxiv_id: &str) -> String {
    format!("https://arxiv.org/pdf/{arxiv_id}")
}

/// `all:"kw"` terms joined with AND.
pub fn search_query(keywords: &KeywordSet) -> String {
    keywords
        .iter()
        .map(|k| {
            if k.contains(char::is_whitespace) {
                format!("all:\"{k}\"")
            } else {
                format!("all:{k}")
            }
        })
        .collect::<Vec<_>>()
        .join(" AND ")
}

pub fn query_url(
    endpoint: &str,
    keywords: &KeywordSet,
    sort: SortOrder,
    max_results: usize,
) -> String {
    let sort_by = match sort {
        SortOrder::Relevance => "relevance",
        SortOrder::Date => "submittedDate",
    };
    let max = max_results.to_string();
    url::Url::parse_with_params(
        endpoint,
        [
            ("search_query", search_query(keywords).as_str()),
            ("sortBy", sort_by),
            ("sortOrder", "descending"),
            ("start", "0"),
            ("max_results", max.as_str()),
        ],
    )
    .expect("endpoint is a valid URL")
    .to_string()
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn parse_date(s: &str) -> Result<NaiveDate, RetrievalError> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|d| d.date_naive())
        .or_else(|_| NaiveDate::parse_from_str(s.trim().get(..10).unwrap_or(""), "%Y-%m-%d"))
        .map_err(|_| RetrievalError::MalformedFeed(format!("bad date `{s}`")))
}

/// Parses an arXiv Atom response. An empty feed is `Ok(vec![])`.
pub fn parse_feed(xml: &str) -> Result<Vec<PaperRecord>, RetrievalError> {
    let doc = roxmltree::Document::parse(xml)
        .map_err(|e| RetrievalError::MalformedFeed(e.to_string()))?;
    let root = doc.root_element();
    if !root.has_tag_name((ATOM, "feed")) {
        return Err(RetrievalError::MalformedFeed("root element is not an Atom feed".into()));
    }
    let text_of = |node: roxmltree::Node, ns: &str, name: &str| -> Option<String> {
        node.children()
            .find(|c| c.has_tag_name((ns, name)))
            .map(|c| collapse(&c.text().map(str::to_string).unwrap_or_default()))
            .filter(|s| !s.is_empty())
    };
    let mut records = Vec::new();
    for entry in root.children().filter(|n| n.has_tag_name((ATOM, "entry"))) {
        let raw_id = text_of(entry, ATOM, "id")
            .ok_or_else(|| RetrievalError::MalformedFeed("entry without id".into()))?;
        if raw_id.contains("/api/errors") {
            let msg = text_of(entry, ATOM, "summary").unwrap_or(raw_id);
            return Err(RetrievalError::MalformedFeed(format!("arXiv API error: {msg}")));
        }
        let arxiv_id = raw_id
            .rsplit_once("/abs/")
            .map(|(_, id)| id.to_string())
            .unwrap_or(raw_id.clone());
        if !is_valid_arxiv_id(&arxiv_id) {
            return Err(RetrievalError::MalformedFeed(format!("bad arXiv id `{arxiv_id}`")));
        }
        let title = text_of(entry, ATOM, "title")
            .ok_or_else(|| RetrievalError::MalformedFeed(format!("{arxiv_id}: no title")))?;
        let updated = parse_date(
            &text_of(entry, ATOM, "updated")
                .ok_or_else(|| RetrievalError::MalformedFeed(format!("{arxiv_id}: no updated")))?,
        )?;
        let published = text_of(entry, ATOM, "published")
            .map(|d| parse_date(&d))
            .transpose()?;
        let abstract_text = text_of(entry, ATOM, "summary").unwrap_or_default();
        let authors = entry
            .children()
            .filter(|c| c.has_tag_name((ATOM, "author")))
            .filter_map(|a| text_of(a, ATOM, "name"))
            .collect();
        let mut link = None;
        let mut pdf_link = None;
        for l in entry.children().filter(|c| c.has_tag_name((ATOM, "link"))) {
            let href = l.attribute("href").map(str::to_string);
            if l.attribute("title") == Some("pdf") {
                pdf_link = href;
            } else if l.attribute("rel") == Some("alternate") {
                link = href;
            }
        }
        let category = entry
            .children()
            .find(|c| c.has_tag_name((ARXIV, "primary_category")))
            .or_else(|| entry.children().find(|c| c.has_tag_name((ATOM, "category"))))
            .and_then(|c| c.attribute("term"))
            .unwrap_or_default()
            .to_string();
        records.push(PaperRecord {
            link: link.unwrap_or_else(|| format!("https://arxiv.org/abs/{arxiv_id}")),
            pdf_link: pdf_link.unwrap_or_else(|| pdf_link_for(&arxiv_id)),
            title,
            updated,
            published,
            abstract_text,
            authors,
            category,
            comment: text_of(entry, ARXIV, "comment"),
            journal_ref: text_of(entry, ARXIV, "journal_ref"),
            arxiv_id,
        });
    }
    Ok(records)
}

/// Blocking HTTP GET, abstracted so tests can serve canned feeds.
pub trait HttpGet: Send + Sync {
    fn get(&self, url: &str) -> Result<String, TransportError>;
}

pub struct UreqGet {
    agent: ureq::Agent,
}

impl UreqGet {
    pub fn new(timeout: Duration) -> Self {
        Self {
            agent: ureq::Agent::config_builder()
                .timeout_global(Some(timeout))
                .http_status_as_error(false)
                .build()
                .into(),
        }
    }
}

impl HttpGet for UreqGet {
    fn get(&self, url: &str) -> Result<String, TransportError> {
        let mut resp = self.agent.get(url).call().map_err(|e| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            other => TransportError::Connection(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Decode(e.to_string()))?;
        if status >= 400 {
            return Err(TransportError::Status { code: status, body });
        }
        Ok(body)
    }
}

/// Rate-limited arXiv search client (one request per `min_interval`).
pub struct ArxivClient {
    http: Arc<dyn HttpGet>,
    endpoint: String,
    min_interval: Duration,
    last_request: Mutex<Option<Instant>>,
}

impl ArxivClient {
    pub fn new(http: Arc<dyn HttpGet>) -> Self {
        Self {
            http,
            endpoint: DEFAULT_ENDPOINT.to_string(),
            min_interval: Duration::from_secs(3),
            last_request: Mutex::new(None),
        }
    }

    pub fn with_endpoint(mut self, endpoint: impl Into<String>) -> Self {
        self.endpoint = endpoint.into();
        self
    }

    pub fn with_min_interval(mut self, interval: Duration) -> Self {
        self.min_interval = interval;
        self
    }

    pub fn fetch(
        &self,
        keywords: &KeywordSet,
        sort: SortOrder,
        max_results: usize,
    ) -> Result<Vec<PaperRecord>, RetrievalError> {
        if !(1..=50).contains(&max_results) {
            return Err(RetrievalError::InvalidArgument(format!(
                "max_results {max_results} outside [1, 50]"
            )));
        }
        let url = query_url(&self.endpoint, keywords, sort, max_results);
        {
            let mut last = self.last_request.lock().unwrap();
            if let Some(t) = *last {
                let elapsed = t.elapsed();
                if elapsed < self.min_interval {
                    std::thread::sleep(self.min_interval - elapsed);
                }
            }
            *last = Some(Instant::now());
        }
        log::info!("arXiv query: {url}");
        let body = self.http.get(&url).map_err(RetrievalError::Transport)?;
        let mut records = parse_feed(&body)?;
        if records.is_empty() {
            log::warn!("arXiv returned zero results for {:?}", keywords.as_slice());
        }
        records.truncate(max_results);
        Ok(records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_grammar_accepts_both_styles() {
        for ok in ["2108.09914", "2108.09914v2", "0704.0001", "hep-th/9901001", "math.GT/0309136v1"] {
            assert!(is_valid_arxiv_id(ok), "{ok}");
        }
        for bad in ["", "abc", "21080.9914", "2108.099"] {
            assert!(!is_valid_arxiv_id(bad), "{bad}");
        }
    }

    #[test]
    fn query_joins_with_and() {
        let kw = KeywordSet::parse("manifold learning, t-SNE").unwrap();
        assert_eq!(search_query(&kw), "all:\"manifold learning\" AND all:t-SNE");
        let url = query_url(DEFAULT_ENDPOINT, &kw, SortOrder::Date, 5);
        assert!(url.contains("sortBy=submittedDate"));
        assert!(url.contains("max_results=5"));
        assert!(url.starts_with("https://export.arxiv.org/api/query?search_query=all%3A"));
    }

    #[test]
    fn empty_feed_is_empty() {
        let xml = r#"<?xml version="1.0" encoding="UTF-8"?>
<feed xmlns="http://www.w3.org/2005/Atom" xmlns:opensearch="http://a9.com/-/spec/opensearch/1.1/">
  <title type="html">ArXiv Query: search_query=all:zzzz</title>
  <opensearch:totalResults>0</opensearch:totalResults>
</feed>"#;
        assert!(parse_feed(xml).unwrap().is_empty());
    }

    #[test]
    fn api_error_entry_is_malformed() {
        let xml = r#"<feed xmlns="http://www.w3.org/2005/Atom"><entry>
<id>http://arxiv.org/api/errors#incorrect_id_format_for_1234</id>
<title>Error</title><summary>incorrect id format for 1234</summary>
<updated>2024-01-01T00:00:00-05:00</updated></entry></feed>"#;
        assert!(matches!(parse_feed(xml), Err(RetrievalError::MalformedFeed(m)) if m.contains("incorrect id")));
    }

    #[test]
    fn not_xml_is_malformed() {
        assert!(matches!(parse_feed("<html>"), Err(RetrievalError::MalformedFeed(_))));
    }
}
