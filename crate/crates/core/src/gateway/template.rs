//! Prompt templates with `{name}` placeholders.
//!
//! Bodies follow the Python `str.format` convention the original prompts were
//! written in: `{{` and `}}` are literal braces, `{name}` is a placeholder.
//! A `{` that does not open a well-formed placeholder is kept verbatim.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::AgentRole;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("missing binding for placeholder `{0}`")]
    MissingBinding(String),
}

/// Identifies one prompt in the catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Keywords,
    Summarize,
    SelectSources,
    Plan,
    Codegen,
    Repair,
    Comments,
    Figures,
}

impl TemplateId {
    pub const ALL: [TemplateId; 8] = [
        TemplateId::Keywords,
        TemplateId::Summarize,
        TemplateId::SelectSources,
        TemplateId::Plan,
        TemplateId::Codegen,
        TemplateId::Repair,
        TemplateId::Comments,
        TemplateId::Figures,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Keywords => "keywords",
            TemplateId::Summarize => "summarize",
            TemplateId::SelectSources => "select",
            TemplateId::Plan => "plan",
            TemplateId::Codegen => "codegen",
            TemplateId::Repair => "repair",
            TemplateId::Comments => "comments",
            TemplateId::Figures => "figures",
        }
    }

    pub fn role(self) -> AgentRole {
        match self {
            TemplateId::Keywords | TemplateId::SelectSources | TemplateId::Plan => {
                AgentRole::Moderator
            }
            TemplateId::Summarize => AgentRole::Retriever,
            TemplateId::Codegen | TemplateId::Repair => AgentRole::CodeGenerator,
            TemplateId::Comments | TemplateId::Figures => AgentRole::Enhancer,
        }
    }

    fn body(self) -> &'static str {
        match self {
            TemplateId::Keywords => include_str!("../../templates/keywords.txt"),
            TemplateId::Summarize => include_str!("../../templates/summarize.txt"),
            TemplateId::SelectSources => include_str!("../../templates/select.txt"),
            TemplateId::Plan => include_str!("../../templates/plan.txt"),
            TemplateId::Codegen => include_str!("../../templates/codegen.txt"),
            TemplateId::Repair => include_str!("../../templates/repair.txt"),
            TemplateId::Comments => include_str!("../../templates/comments.txt"),
            TemplateId::Figures => include_str!("../../templates/figures.txt"),
        }
    }
}

/// Catalog revision; bump when any asset under `templates/` changes so
/// recorded fixtures can be regenerated.
pub const CATALOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: String,
    pub role: AgentRole,
    pub body: String,
    pieces: Vec<Piece>,
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, role: AgentRole, body: impl Into<String>) -> Self {
        let body = body.into();
        let pieces = split_pieces(&body);
        Self {
            id: id.into(),
            role,
            body,
            pieces,
        }
    }

    pub fn builtin(id: TemplateId) -> Self {
        Self::new(id.as_str(), id.role(), id.body())
    }

    /// Placeholder names in order of first appearance, deduplicated.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Slot(name) if seen.insert(name.as_str()) => Some(name.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Bindings that do not correspond to any placeholder.
    pub fn unused_bindings<'a>(&self, bindings: &'a BTreeMap<String, String>) -> Vec<&'a str> {
        let names: BTreeSet<&str> = self.placeholders().into_iter().collect();
        bindings
            .keys()
            .map(String::as_str)
            .filter(|k| !names.contains(k))
            .collect()
    }

    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<String, TemplateError> {
        for extra in self.unused_bindings(bindings) {
            log::warn!("template `{}`: unknown placeholder `{}` in bindings", self.id, extra);
        }
        let mut out = String::with_capacity(self.body.len());
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(name) => match bindings.get(name) {
                    Some(v) => out.push_str(v),
                    None => return Err(TemplateError::MissingBinding(name.clone())),
                },
            }
        }
        Ok(out)
    }
}

/// Convenience wrapper over [`PromptTemplate::render`].
pub fn render_template(
    template: &PromptTemplate,
    bindings: &BTreeMap<String, String>,
) -> Result<String, TemplateError> {
    template.render(bindings)
}

/// Builds a binding map from `(name, value)` pairs.
pub fn bindings<K: Into<String>, V: Into<String>>(
    pairs: impl IntoIterator<Item = (K, V)>,
) -> BTreeMap<String, String> {
    pairs
        .into_iter()
        .map(|(k, v)| (k.into(), v.into()))
        .collect()
}

fn is_name_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == ' '
}

/// Length in bytes of a placeholder starting at `s[0] == '{'`, if well formed.
fn slot_at(s: &str) -> Option<(usize, &str)> {
    let rest = &s[1..];
    let mut chars = rest.char_indices();
    match chars.next() {
        Some((_, c)) if is_name_start(c) => {}
        _ => return None,
    }
    for (i, c) in chars {
        if c == '}' {
            let name = &rest[..i];
            if name.ends_with(' ') {
                return None;
            }
            return Some((i + 2, name));
        }
        if !is_name_char(c) {
            return None;
        }
    }
    None
}

fn split_pieces(body: &str) -> Vec<Piece> {
    let mut pieces = Vec::new();
    let mut text = String::new();
    let mut i = 0;
    while i < body.len() {
        let rest = &body[i..];
        if rest.starts_with("{{") {
            text.push('{');
            i += 2;
        } else if rest.starts_with("}}") {
            text.push('}');
            i += 2;
        } else if rest.starts_with('{') {
            if let Some((len, name)) = slot_at(rest) {
                if !text.is_empty() {
                    pieces.push(Piece::Text(std::mem::take(&mut text)));
                }
                pieces.push(Piece::Slot(name.to_string()));
                i += len;
            } else {
                text.push('{');
                i += 1;
            }
        } else {
            let c = rest.chars().next().unwrap();
            text.push(c);
            i += c.len_utf8();
        }
    }
    if !text.is_empty() {
        pieces.push(Piece::Text(text));
    }
    pieces
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tpl(body: &str) -> PromptTemplate {
        PromptTemplate::new("t", AgentRole::Moderator, body)
    }

    #[test]
    fn no_placeholders_passes_through() {
        assert_eq!(tpl("X").render(&BTreeMap::new()).unwrap(), "X");
    }

    #[test]
    fn repeated_placeholder() {
        let b = bindings([("a", "z")]);
        assert_eq!(tpl("{a}{a}").render(&b).unwrap(), "zz");
        assert_eq!(tpl("{a}{a}").placeholders(), vec!["a"]);
    }

    #[test]
    fn missing_binding_is_an_error() {
        let err = tpl("hi {name}").render(&BTreeMap::new()).unwrap_err();
        assert_eq!(err, TemplateError::MissingBinding("name".into()));
    }

    #[test]
    fn extra_binding_is_not_fatal() {
        let t = tpl("hi {name}");
        let b = bindings([("name", "x"), ("other", "y")]);
        assert_eq!(t.render(&b).unwrap(), "hi x");
        assert_eq!(t.unused_bindings(&b), vec!["other"]);
    }

    #[test]
    fn doubled_braces_are_literal() {
        let t = tpl(r"\drawconfmat{{TN}}{{FP}} cite{{}} {x}");
        assert_eq!(t.placeholders(), vec!["x"]);
        let out = t.render(&bindings([("x", "1")])).unwrap();
        assert_eq!(out, r"\drawconfmat{TN}{FP} cite{} 1");
    }

    #[test]
    fn names_may_contain_spaces() {
        let t = tpl("guide: {structural guide}.");
        assert_eq!(t.placeholders(), vec!["structural guide"]);
        let out = t.render(&bindings([("structural guide", "G")])).unwrap();
        assert_eq!(out, "guide: G.");
    }

    #[test]
    fn malformed_braces_are_kept() {
        let t = tpl(r"\[ {1} { x} \]");
        assert!(t.placeholders().is_empty());
        assert_eq!(t.render(&BTreeMap::new()).unwrap(), r"\[ {1} { x} \]");
    }

    #[test]
    fn every_builtin_binds_to_one_role() {
        for id in TemplateId::ALL {
            let t = PromptTemplate::builtin(id);
            assert_eq!(t.role, id.role());
            assert!(!t.placeholders().is_empty(), "{id:?} has no slots");
        }
    }
}
