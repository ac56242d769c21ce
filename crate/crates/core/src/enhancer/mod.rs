//! The Enhancer: figure macros and togglable instructor comments, checked
//! by a structural diff so enhancement can only add.

pub mod macros;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codegen::deck::{collapse_ws, mask_comments, strip_library, BeamerSource, DeckError, Span};
use crate::codegen::sanitize_completion;
use crate::gateway::{bindings, GatewayError, LlmClient, PromptTemplate, SamplingParams, TemplateId};
use crate::retrieval::SourceSelection;

pub use macros::{library_block, macro_library, render_macro, standalone_document, MacroCall, MacroKind};

#[derive(Debug, Error)]
pub enum EnhancerError {
    #[error("{kind} takes {expected} arguments, got {got}")]
    ArityMismatch { kind: MacroKind, expected: usize, got: usize },
    #[error("{kind}: {detail}")]
    ArgParse { kind: MacroKind, detail: String },
    #[error("enhancement rejected: {}", summarize(.0))]
    ConstraintViolation(Vec<Violation>),
    #[error("enhancer output was truncated")]
    Truncated,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

fn summarize(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CommentCategory {
    Conceptual,
    TeachingStrategy,
    StudentContext,
    LectureFlow,
    TextbookIntegration,
    DiscussionActivity,
}

impl CommentCategory {
    pub const ALL: [CommentCategory; 6] = [
        CommentCategory::Conceptual,
        CommentCategory::TeachingStrategy,
        CommentCategory::StudentContext,
        CommentCategory::LectureFlow,
        CommentCategory::TextbookIntegration,
        CommentCategory::DiscussionActivity,
    ];

    fn prefixes(self) -> &'static [&'static str] {
        match self {
            CommentCategory::Conceptual => &["conceptual", "concept", "key takeaway"],
            CommentCategory::TeachingStrategy => &["teaching strategy", "teaching", "strategy"],
            CommentCategory::StudentContext => &["student context", "student"],
            CommentCategory::LectureFlow => &["lecture flow", "flow", "transition", "timing"],
            CommentCategory::TextbookIntegration => &["textbook integration", "textbook"],
            CommentCategory::DiscussionActivity => &["discussion/activity", "discussion", "activity"],
        }
    }

    fn keywords(self) -> &'static [&'static str] {
        match self {
            CommentCategory::Conceptual => &["takeaway", "key idea", "simplif", "intuition", "in other words"],
            CommentCategory::TeachingStrategy => &["ask students", "ask the class", "real-world", "application", "analogy", "example"],
            CommentCategory::StudentContext => &["misconception", "confuse", "struggle", "prerequisite", "background", "level"],
            CommentCategory::LectureFlow => &["transition", "minutes", "pace", "next slide", "recap", "time"],
            CommentCategory::TextbookIntegration => &["textbook", "chapter", "section", "reading"],
            CommentCategory::DiscussionActivity => &["discuss", "group", "case study", "activity", "pairs", "debate"],
        }
    }
}

impl fmt::Display for CommentCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

/// Category by leading label (`Lecture flow: ...`), then keywords, else
/// Conceptual.
pub fn classify_comment(text: &str) -> CommentCategory {
    let lower = text.trim().to_lowercase();
    if let Some((label, _)) = lower.split_once(':') {
        let label = label.trim();
        for c in CommentCategory::ALL {
            if c.prefixes().iter().any(|p| label == *p || label.starts_with(p)) {
                return c;
            }
        }
    }
    CommentCategory::ALL
        .into_iter()
        .find(|c| c.keywords().iter().any(|k| lower.contains(k)))
        .unwrap_or(CommentCategory::Conceptual)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructorComment {
    pub category: CommentCategory,
    pub text: String,
    pub frame_index: usize,
}

pub fn instructor_comments(source: &BeamerSource) -> Vec<InstructorComment> {
    source
        .frames
        .iter()
        .enumerate()
        .flat_map(|(i, f)| {
            f.comments.iter().map(move |c| InstructorComment {
                category: classify_comment(&c.text),
                text: c.text.clone(),
                frame_index: i,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViolationRule {
    Unparseable,
    FrameCount,
    Preamble,
    Title,
    Bullets,
    Citations,
    Bibliography,
    OtherContent,
    TooManyFigures,
    TooManyInline,
    FigureAndInline,
    FigurePlacement,
    InvalidMacro,
    CommentOutsideList,
    CommentAfterFigure,
    EmptyComment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: ViolationRule,
    pub frame: Option<usize>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.frame {
            Some(i) => write!(f, "{:?} in frame {}: {}", self.rule, i + 1, self.detail),
            None => write!(f, "{:?}: {}", self.rule, self.detail),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnhancementDiagnostics {
    pub violations: Vec<Violation>,
    pub added_macros: usize,
    pub added_comments: usize,
}

impl EnhancementDiagnostics {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

fn blank(bytes: &mut [u8], s: Span) {
    for b in &mut bytes[s] {
        *b = b' ';
    }
}

/// Frame text with annotations, figure macros and display math removed.
fn residual(source: &BeamerSource, span: Span) -> String {
    let mut bytes = mask_comments(&source.raw).into_bytes();
    for f in &source.frames {
        for m in &f.macro_calls {
            blank(&mut bytes, m.span.clone());
        }
        for c in &f.comments {
            blank(&mut bytes, c.span.clone());
        }
    }
    let text = String::from_utf8_lossy(&bytes[span]).into_owned();
    let math = regex::Regex::new(r"(?s)\\\[.*?\\\]").unwrap();
    collapse_ws(&math.replace_all(&text, " "))
}

fn non_frame_residual(source: &BeamerSource) -> String {
    source
        .segments()
        .into_iter()
        .filter(|(k, _)| matches!(k, crate::codegen::deck::Segment::Between))
        .map(|(_, s)| collapse_ws(&mask_comments(&source.raw[s])))
        .collect::<Vec<_>>()
        .join(" ")
}

fn v(rule: ViolationRule, frame: Option<usize>, detail: impl Into<String>) -> Violation {
    Violation {
        rule,
        frame,
        detail: detail.into(),
    }
}

/// Structural diff: `after` may only add macro calls, comment annotations
/// and the macro library.
pub fn validate_enhancements(before: &BeamerSource, after: &BeamerSource) -> EnhancementDiagnostics {
    let mut out = Vec::new();
    if strip_library(before.preamble_text()) != strip_library(after.preamble_text()) {
        out.push(v(ViolationRule::Preamble, None, "preamble changed"));
    }
    if after.has_library() && !after.preamble_text().contains(&library_block()) {
        out.push(v(ViolationRule::Preamble, None, "macro library block was edited"));
    }
    if before.frames.len() != after.frames.len() {
        out.push(v(
            ViolationRule::FrameCount,
            None,
            format!("{} frames became {}", before.frames.len(), after.frames.len()),
        ));
        return EnhancementDiagnostics {
            violations: out,
            ..Default::default()
        };
    }
    let mut added_macros = 0;
    let mut added_comments = 0;
    for (i, (b, a)) in before.frames.iter().zip(&after.frames).enumerate() {
        let at = Some(i);
        if b.title != a.title {
            out.push(v(ViolationRule::Title, at, format!("`{}` became `{}`", b.title, a.title)));
        }
        let bt: Vec<_> = b.bullets.iter().map(|x| &x.text).collect();
        let at_: Vec<_> = a.bullets.iter().map(|x| &x.text).collect();
        if b.cite_keys != a.cite_keys {
            out.push(v(ViolationRule::Citations, at, format!("{:?} became {:?}", b.cite_keys, a.cite_keys)));
        }
        if bt != at_ {
            out.push(v(ViolationRule::Bullets, at, "bullet text changed, added or removed"));
        } else if b.cite_keys == a.cite_keys && residual(before, b.span.clone()) != residual(after, a.span.clone()) {
            out.push(v(ViolationRule::OtherContent, at, "non-bullet content changed"));
        }
        added_macros += a.macro_calls.len().saturating_sub(b.macro_calls.len());
        added_comments += a.comments.len().saturating_sub(b.comments.len());

        if a.figure_count() > 1 {
            out.push(v(ViolationRule::TooManyFigures, at, format!("{} figure macros", a.figure_count())));
        }
        if a.inline_count() > 1 {
            out.push(v(ViolationRule::TooManyInline, at, format!("{} inline macros", a.inline_count())));
        }
        if a.figure_count() > 0 && a.inline_count() > 0 {
            out.push(v(ViolationRule::FigureAndInline, at, "inline macro on a frame with a figure"));
        }
        let content_end = a
            .lists
            .iter()
            .map(|l| l.end)
            .chain(a.bullets.iter().map(|b| b.span.end))
            .max()
            .unwrap_or(a.body.start);
        let first_figure = a.macro_calls.iter().filter(|m| m.call.kind.is_figure()).map(|m| m.span.start).min();
        for m in &a.macro_calls {
            if let Err(e) = m.call.validate() {
                out.push(v(ViolationRule::InvalidMacro, at, e.to_string()));
            }
            if m.call.kind.is_figure() && m.span.start < content_end {
                out.push(v(ViolationRule::FigurePlacement, at, format!("{} placed before the last bullet", m.call.kind)));
            }
        }
        let old_comments: Vec<&str> = b.comments.iter().map(|c| c.text.as_str()).collect();
        for c in a.comments.iter().filter(|c| !old_comments.contains(&c.text.as_str())) {
            if c.text.trim().is_empty() {
                out.push(v(ViolationRule::EmptyComment, at, "empty comment"));
            }
            if !c.in_list {
                out.push(v(ViolationRule::CommentOutsideList, at, format!("`{}`", c.text)));
            }
            if first_figure.is_some_and(|f| c.span.start > f) {
                out.push(v(ViolationRule::CommentAfterFigure, at, format!("`{}`", c.text)));
            }
        }
    }
    let bib = |s: &BeamerSource| s.bibliography.iter().map(|e| (e.key.clone(), e.text.clone())).collect::<Vec<_>>();
    if bib(before) != bib(after) {
        out.push(v(ViolationRule::Bibliography, None, "bibliography changed"));
    }
    if non_frame_residual(before) != non_frame_residual(after) {
        out.push(v(ViolationRule::OtherContent, None, "text between frames changed"));
    }
    EnhancementDiagnostics {
        violations: out,
        added_macros,
        added_comments,
    }
}

/// Inserts the library block before `\begin{document}` unless present.
pub fn with_library(source: &BeamerSource) -> BeamerSource {
    if source.has_library() {
        return source.clone();
    }
    let at = source.preamble.end;
    let mut raw = String::with_capacity(source.raw.len() + macro_library().len() + 80);
    raw.push_str(&source.raw[..at]);
    if !raw.is_empty() && !raw.ends_with('\n') {
        raw.push('\n');
    }
    raw.push_str(&library_block());
    raw.push_str(&source.raw[at..]);
    BeamerSource::parse(raw).expect("adding preamble lines keeps the deck parseable")
}

/// Same deck with instructor comments switched off.
pub fn student_build(source: &BeamerSource) -> BeamerSource {
    let lib = library_block();
    let raw = if source.raw.contains(&lib) {
        source.raw.replacen(&lib, &lib.replacen("\\instructorviewtrue", "\\instructorviewfalse", 1), 1)
    } else {
        source.raw.clone()
    };
    BeamerSource::parse(raw).expect("toggle edit keeps the deck parseable")
}

fn request(
    llm: &dyn LlmClient,
    id: TemplateId,
    source: &BeamerSource,
    context: &SourceSelection,
    topic: &str,
    notes: &[String],
) -> Result<String, EnhancerError> {
    let mut prompt = PromptTemplate::builtin(id)
        .render(&bindings([
            ("slidecode", source.raw.clone()),
            ("context", context.context_text()),
            ("topic", topic.to_string()),
        ]))
        .map_err(GatewayError::from)?;
    for n in notes.iter().filter(|n| !n.trim().is_empty()) {
        prompt.push_str("\n\n");
        prompt.push_str(n.trim());
    }
    let c = llm.complete(id.role(), &prompt, &SamplingParams::for_template(id))?;
    if !c.is_usable() {
        return Err(EnhancerError::Truncated);
    }
    Ok(c.text)
}

fn accept(before: &BeamerSource, completion: &str) -> Result<BeamerSource, EnhancerError> {
    let after = BeamerSource::parse(sanitize_completion(completion)).map_err(|e: DeckError| {
        EnhancerError::ConstraintViolation(vec![v(ViolationRule::Unparseable, None, e.to_string())])
    })?;
    let after = with_library(&after);
    let diag = validate_enhancements(before, &after);
    if diag.is_clean() {
        Ok(after)
    } else {
        Err(EnhancerError::ConstraintViolation(diag.violations))
    }
}

pub fn insert_figures(
    llm: &dyn LlmClient,
    source: &BeamerSource,
    context: &SourceSelection,
    topic: &str,
    notes: &[String],
) -> Result<BeamerSource, EnhancerError> {
    let before = with_library(source);
    let completion = request(llm, TemplateId::Figures, source, context, topic, notes)?;
    accept(&before, &completion)
}

pub fn insert_comments(
    llm: &dyn LlmClient,
    source: &BeamerSource,
    context: &SourceSelection,
    topic: &str,
    notes: &[String],
) -> Result<BeamerSource, EnhancerError> {
    let before = with_library(source);
    let completion = request(llm, TemplateId::Comments, source, context, topic, notes)?;
    accept(&before, &completion)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnhanceReport {
    pub figures_applied: bool,
    pub comments_applied: bool,
    pub warnings: Vec<String>,
}

/// Figures then comments, each kept only if it validates. Gateway errors
/// (other than truncation) are returned; constraint failures fall back to
/// the previous deck.
pub fn enhance(
    llm: &dyn LlmClient,
    source: &BeamerSource,
    context: &SourceSelection,
    topic: &str,
    notes: &[String],
) -> Result<(BeamerSource, EnhanceReport), EnhancerError> {
    let mut report = EnhanceReport {
        figures_applied: false,
        comments_applied: false,
        warnings: Vec::new(),
    };
    let mut current = with_library(source);
    match insert_figures(llm, &current, context, topic, notes) {
        Ok(s) => {
            current = s;
            report.figures_applied = true;
        }
        Err(e @ (EnhancerError::ConstraintViolation(_) | EnhancerError::Truncated)) => {
            log::warn!("figure enhancement rejected: {e}");
            report.warnings.push(format!("figures: {e}"));
        }
        Err(e) => return Err(e),
    }
    match insert_comments(llm, &current, context, topic, notes) {
        Ok(s) => {
            current = s;
            report.comments_applied = true;
        }
        Err(e @ (EnhancerError::ConstraintViolation(_) | EnhancerError::Truncated)) => {
            log::warn!("comment enhancement rejected: {e}");
            report.warnings.push(format!("comments: {e}"));
        }
        Err(e) => return Err(e),
    }
    Ok((current, report))
}
