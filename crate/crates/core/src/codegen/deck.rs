//! Span-tracking model of a Beamer document.

use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enhancer::macros::{MacroCall, MacroKind, LIBRARY_BEGIN, LIBRARY_END};

pub type Span = Range<usize>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeckError {
    #[error("no \\documentclass found")]
    NotLatex,
    #[error("parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameKind {
    Title,
    Outline,
    References,
    Content,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bullet {
    /// Whitespace-collapsed text with macro calls, comments and display
    /// math removed.
    pub text: String,
    pub cite_keys: Vec<String>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocatedMacro {
    pub call: MacroCall,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommentAnnotation {
    pub text: String,
    pub span: Span,
    /// Whether the annotation sits inside an itemize/enumerate region.
    pub in_list: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub title: String,
    pub kind: FrameKind,
    pub bullets: Vec<Bullet>,
    pub macro_calls: Vec<LocatedMacro>,
    pub comments: Vec<CommentAnnotation>,
    /// Every cite key in the frame, in order of appearance.
    pub cite_keys: Vec<String>,
    /// Whole `\begin{frame}` .. `\end{frame}` region.
    pub span: Span,
    /// Region between the frame header and `\end{frame}`.
    pub body: Span,
    /// Byte ranges of top-level list environments.
    pub lists: Vec<Span>,
}

impl Frame {
    pub fn figure_count(&self) -> usize {
        self.macro_calls.iter().filter(|m| m.call.kind.is_figure()).count()
    }

    pub fn inline_count(&self) -> usize {
        self.macro_calls.len() - self.figure_count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BibEntry {
    pub key: String,
    pub text: String,
    pub span: Span,
    pub frame_index: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    Preamble,
    Between,
    Frame(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeamerSource {
    pub raw: String,
    /// Everything before `\begin{document}`.
    pub preamble: Span,
    pub frames: Vec<Frame>,
    pub bibliography: Vec<BibEntry>,
}

/// Replaces every LaTeX comment (unescaped `%` to end of line) with spaces,
/// keeping byte offsets.
pub fn mask_comments(raw: &str) -> String {
    let bytes = raw.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' if i + 1 < bytes.len() => {
                out.push(bytes[i]);
                out.push(bytes[i + 1]);
                i += 2;
            }
            b'%' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    out.push(b' ');
                    i += 1;
                }
            }
            b => {
                out.push(b);
                i += 1;
            }
        }
    }
    // Multi-byte characters inside comments became spaces byte-for-byte.
    String::from_utf8(out).expect("masking keeps or blanks whole characters")
}

/// Index just past the group closing the delimiter at `open`.
pub(crate) fn group_end(s: &str, open: usize) -> Option<usize> {
    let bytes = s.as_bytes();
    let (o, c) = match bytes.get(open)? {
        b'{' => (b'{', b'}'),
        b'[' => (b'[', b']'),
        _ => return None,
    };
    let mut depth = 0i32;
    let mut brace = 0i32;
    let mut i = open;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => {
                i += 2;
                continue;
            }
            b'{' if o == b'[' => brace += 1,
            b'}' if o == b'[' => brace -= 1,
            x if x == o && (o == b'{' || brace == 0) => depth += 1,
            x if x == c && (o == b'{' || brace == 0) => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
        i += 1;
    }
    None
}

pub(crate) fn skip_ws(s: &str, mut i: usize) -> usize {
    let b = s.as_bytes();
    while i < b.len() && b[i].is_ascii_whitespace() {
        i += 1;
    }
    i
}

/// Optional `[..]` groups followed by one `{..}` group starting at `i`.
/// Returns the inner span of the brace group and the end index.
fn command_argument(s: &str, mut i: usize, max_optional: usize) -> Option<(Span, usize)> {
    for _ in 0..max_optional {
        let j = skip_ws(s, i);
        if s.as_bytes().get(j) == Some(&b'[') {
            i = group_end(s, j)?;
        } else {
            break;
        }
    }
    let j = skip_ws(s, i);
    if s.as_bytes().get(j) != Some(&b'{') {
        return None;
    }
    let end = group_end(s, j)?;
    Some((j + 1..end - 1, end))
}

pub fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn re(cell: &'static OnceLock<Regex>, pat: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pat).unwrap())
}

fn list_token_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"\\(begin|end)\s*\{(?:itemize|enumerate|description)\}|\\item\b")
}

fn cite_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"\\(?:cite|citep|citet|citealp|citeauthor|citeyear|parencite|textcite|autocite|nocite)\b\*?")
}

fn macro_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"\\(drawpipeline|inlineformula|inlinepseudocode|drawconfmat|drawnetwork|drawgenericplot)\b")
}

fn comment_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"\\pdf(?:margin)?comment\b")
}

fn display_math_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"(?s)\\\[.*?\\\]|\$\$.*?\$\$|\\begin\{(equation|align|gather)\*?\}.*?\\end\{(?:equation|align|gather)\*?\}")
}

pub fn is_valid_cite_key(k: &str) -> bool {
    !k.is_empty()
        && k
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | ':' | '.' | '+' | '/'))
}

/// `(key, span of the whole cite command)` for every citation in `masked[range]`.
fn cites_in(masked: &str, range: Span) -> Vec<(String, Span)> {
    let mut out = Vec::new();
    let hay = &masked[range.clone()];
    for m in cite_re().find_iter(hay) {
        let start = range.start + m.start();
        if let Some((inner, end)) = command_argument(masked, range.start + m.end(), 2) {
            if end > range.end {
                continue;
            }
            for k in masked[inner].split(',').map(str::trim) {
                if is_valid_cite_key(k) {
                    out.push((k.to_string(), start..end));
                }
            }
        }
    }
    out
}

fn macros_in(raw: &str, masked: &str, range: Span) -> Vec<LocatedMacro> {
    let mut out = Vec::new();
    let hay = &masked[range.clone()];
    for c in macro_re().captures_iter(hay) {
        let whole = c.get(0).unwrap();
        let kind = MacroKind::from_command(&c[1]).expect("regex lists the six commands");
        let start = range.start + whole.start();
        let mut pos = range.start + whole.end();
        let mut args = Vec::new();
        while args.len() < kind.arity() {
            let j = skip_ws(masked, pos);
            if j >= range.end || masked.as_bytes().get(j) != Some(&b'{') {
                break;
            }
            match group_end(masked, j) {
                Some(end) if end <= range.end => {
                    args.push(raw[j + 1..end - 1].to_string());
                    pos = end;
                }
                _ => break,
            }
        }
        out.push(LocatedMacro {
            call: MacroCall { kind, args },
            span: start..pos,
        });
    }
    out
}

fn comments_in(raw: &str, masked: &str, range: Span) -> Vec<(String, Span)> {
    let hay = &masked[range.clone()];
    comment_re()
        .find_iter(hay)
        .filter_map(|m| {
            let start = range.start + m.start();
            let (inner, end) = command_argument(masked, range.start + m.end(), 1)?;
            (end <= range.end).then(|| (collapse_ws(&raw[inner]), start..end))
        })
        .collect()
}

/// Bullet text with annotations, figure macros, display math and comments
/// removed, so that additive enhancements leave it unchanged.
fn normalize_bullet(raw: &str, masked: &str, span: Span) -> String {
    let mut cut: Vec<Span> = Vec::new();
    cut.extend(comments_in(raw, masked, span.clone()).into_iter().map(|(_, s)| s));
    cut.extend(macros_in(raw, masked, span.clone()).into_iter().map(|m| m.span));
    let hay = &masked[span.clone()];
    cut.extend(display_math_re().find_iter(hay).map(|m| span.start + m.start()..span.start + m.end()));
    cut.sort_by_key(|s| s.start);
    let mut text = String::new();
    let mut pos = span.start;
    for c in cut {
        if c.start >= pos {
            text.push_str(&masked[pos..c.start]);
            text.push(' ');
            pos = c.end;
        } else if c.end > pos {
            pos = c.end;
        }
    }
    text.push_str(&masked[pos..span.end]);
    collapse_ws(&text)
}

fn find_from(hay: &str, needle: &str, from: usize) -> Option<usize> {
    hay.get(from..)?.find(needle).map(|i| i + from)
}

const BEGIN_FRAME: &str = "\\begin{frame}";
const END_FRAME: &str = "\\end{frame}";

fn parse_frame(raw: &str, masked: &str, span: Span) -> Frame {
    let body_end = span.end - END_FRAME.len();
    // Header: <overlay> [options] {title} {subtitle}
    let mut pos = span.start + BEGIN_FRAME.len();
    let mut title = String::new();
    let j = skip_ws(masked, pos);
    if masked.as_bytes().get(j) == Some(&b'<') {
        if let Some(k) = find_from(masked, ">", j) {
            pos = k + 1;
        }
    }
    let j = skip_ws(masked, pos);
    if masked.as_bytes().get(j) == Some(&b'[') {
        if let Some(end) = group_end(masked, j) {
            pos = end;
        }
    }
    for n in 0..2 {
        let j = skip_ws(masked, pos);
        if j < body_end && masked.as_bytes().get(j) == Some(&b'{') {
            match group_end(masked, j) {
                Some(end) if end <= body_end => {
                    if n == 0 {
                        title = collapse_ws(&raw[j + 1..end - 1]);
                    }
                    pos = end;
                }
                _ => break,
            }
        } else {
            break;
        }
    }
    let body = pos..body_end;
    let frame_text = &masked[body.clone()];
    if let Some(i) = frame_text.find("\\frametitle") {
        let at = body.start + i + "\\frametitle".len();
        let mut k = skip_ws(masked, at);
        if masked.as_bytes().get(k) == Some(&b'<') {
            if let Some(e) = find_from(masked, ">", k) {
                k = e + 1;
            }
        }
        if let Some((inner, _)) = command_argument(masked, k, 1) {
            title = collapse_ws(&raw[inner]);
        }
    }

    // Lists and top-level bullets.
    let mut depth = 0usize;
    let mut lists = Vec::new();
    let mut list_start = 0;
    let mut item_starts: Vec<usize> = Vec::new();
    let mut bullet_spans: Vec<Span> = Vec::new();
    for m in list_token_re().captures_iter(frame_text) {
        let whole = m.get(0).unwrap();
        let (s, e) = (body.start + whole.start(), body.start + whole.end());
        match m.get(1).map(|g| g.as_str()) {
            Some("begin") => {
                if depth == 0 {
                    list_start = s;
                }
                depth += 1;
            }
            Some(_) => {
                if depth == 1 {
                    if let Some(st) = item_starts.pop() {
                        bullet_spans.push(st..s);
                    }
                    lists.push(list_start..e);
                }
                depth = depth.saturating_sub(1);
            }
            None if depth == 1 => {
                if let Some(st) = item_starts.pop() {
                    bullet_spans.push(st..s);
                }
                let mut after = e;
                let k = skip_ws(masked, after);
                if masked.as_bytes().get(k) == Some(&b'[') {
                    if let Some(end) = group_end(masked, k) {
                        after = end;
                    }
                }
                item_starts.push(after);
            }
            None => {}
        }
    }
    if let Some(st) = item_starts.pop() {
        bullet_spans.push(st..body.end);
    }

    let macro_calls = macros_in(raw, masked, body.clone());
    let comments: Vec<CommentAnnotation> = comments_in(raw, masked, body.clone())
        .into_iter()
        .map(|(text, sp)| CommentAnnotation {
            in_list: lists.iter().any(|l| l.start <= sp.start && sp.end <= l.end),
            text,
            span: sp,
        })
        .collect();
    // Citations inside annotations or macro arguments are not slide content.
    let mut clean = masked.as_bytes()[..body.end].to_vec();
    for sp in comments.iter().map(|c| c.span.clone()).chain(macro_calls.iter().map(|m| m.span.clone())) {
        clean[sp].fill(b' ');
    }
    let clean = String::from_utf8(clean).expect("blanked spans start and end on ASCII");
    let cite_keys = cites_in(&clean, body.clone()).into_iter().map(|(k, _)| k).collect();

    let bullets = bullet_spans
        .into_iter()
        .map(|sp| Bullet {
            text: normalize_bullet(raw, masked, sp.clone()),
            cite_keys: cites_in(&clean, sp.clone()).into_iter().map(|(k, _)| k).collect(),
            span: sp,
        })
        .collect();

    let lower_title = title.to_lowercase();
    let kind = if frame_text.contains("\\titlepage") || frame_text.contains("\\maketitle") {
        FrameKind::Title
    } else if frame_text.contains("thebibliography") || lower_title.contains("reference") || lower_title.contains("bibliograph") {
        FrameKind::References
    } else if frame_text.contains("\\tableofcontents")
        || ["roadmap", "outline", "table of contents", "agenda"].iter().any(|w| lower_title.contains(w))
    {
        FrameKind::Outline
    } else {
        FrameKind::Content
    };

    Frame {
        title,
        kind,
        bullets,
        macro_calls,
        comments,
        cite_keys,
        span,
        body,
        lists,
    }
}

impl BeamerSource {
    pub fn parse(raw: impl Into<String>) -> Result<Self, DeckError> {
        let raw = raw.into();
        let masked = mask_comments(&raw);
        if !masked.contains("\\documentclass") {
            return Err(DeckError::NotLatex);
        }
        let doc_start = masked
            .find("\\begin{document}")
            .ok_or_else(|| DeckError::Parse("no \\begin{document}".into()))?;
        let mut frames = Vec::new();
        let mut pos = doc_start;
        while let Some(start) = find_from(&masked, BEGIN_FRAME, pos) {
            let end = find_from(&masked, END_FRAME, start)
                .ok_or_else(|| DeckError::Parse(format!("frame at byte {start} has no \\end{{frame}}")))?;
            if let Some(next) = find_from(&masked, BEGIN_FRAME, start + BEGIN_FRAME.len()) {
                if next < end {
                    return Err(DeckError::Parse(format!("frame at byte {start} has no \\end{{frame}}")));
                }
            }
            let span = start..end + END_FRAME.len();
            pos = span.end;
            frames.push(parse_frame(&raw, &masked, span));
        }
        if frames.is_empty() {
            return Err(DeckError::Parse("document has no frames".into()));
        }
        let bibliography = parse_bibliography(&raw, &masked, doc_start, &frames);
        Ok(Self {
            preamble: 0..doc_start,
            raw,
            frames,
            bibliography,
        })
    }

    pub fn preamble_text(&self) -> &str {
        &self.raw[self.preamble.clone()]
    }

    /// Preamble with the inlined macro library block removed.
    pub fn preamble_without_library(&self) -> String {
        strip_library(self.preamble_text())
    }

    pub fn has_library(&self) -> bool {
        self.preamble_text().contains(LIBRARY_BEGIN)
    }

    pub fn frame_text(&self, i: usize) -> &str {
        &self.raw[self.frames[i].span.clone()]
    }

    pub fn bib_keys(&self) -> Vec<&str> {
        self.bibliography.iter().map(|b| b.key.as_str()).collect()
    }

    /// Contiguous cover of `raw`: preamble, inter-frame text, frames.
    pub fn segments(&self) -> Vec<(Segment, Span)> {
        let mut out = vec![(Segment::Preamble, self.preamble.clone())];
        let mut pos = self.preamble.end;
        for (i, f) in self.frames.iter().enumerate() {
            if f.span.start > pos {
                out.push((Segment::Between, pos..f.span.start));
            }
            out.push((Segment::Frame(i), f.span.clone()));
            pos = f.span.end;
        }
        if pos < self.raw.len() {
            out.push((Segment::Between, pos..self.raw.len()));
        }
        out
    }

    pub fn reassemble(&self) -> String {
        self.segments().into_iter().map(|(_, s)| &self.raw[s]).collect()
    }

    /// Title, bullet text, cite key triples in document order.
    pub fn content_triples(&self) -> Vec<(String, String, String)> {
        let mut out = Vec::new();
        for f in &self.frames {
            for b in &f.bullets {
                if b.cite_keys.is_empty() {
                    out.push((f.title.clone(), b.text.clone(), String::new()));
                }
                for k in &b.cite_keys {
                    out.push((f.title.clone(), b.text.clone(), k.clone()));
                }
            }
        }
        out
    }
}

fn parse_bibliography(raw: &str, masked: &str, from: usize, frames: &[Frame]) -> Vec<BibEntry> {
    static R: OnceLock<Regex> = OnceLock::new();
    let bib_re = re(&R, r"\\bibitem\b|\\end\{thebibliography\}");
    let hay = &masked[from..];
    let marks: Vec<(usize, usize, bool)> = bib_re
        .find_iter(hay)
        .map(|m| (from + m.start(), from + m.end(), m.as_str().starts_with("\\bibitem")))
        .collect();
    let mut out = Vec::new();
    for (n, &(start, after, is_item)) in marks.iter().enumerate() {
        if !is_item {
            continue;
        }
        let Some((key_span, key_end)) = command_argument(masked, after, 1) else { continue };
        let limit = marks
            .get(n + 1)
            .map(|m| m.0)
            .into_iter()
            .chain(frames.iter().map(|f| f.span.end - END_FRAME.len()).filter(|e| *e > start))
            .min()
            .unwrap_or(raw.len());
        let end = limit.max(key_end);
        out.push(BibEntry {
            key: masked[key_span].trim().to_string(),
            text: collapse_ws(&masked[key_end..end]),
            span: start..end,
            frame_index: frames.iter().position(|f| f.span.start <= start && start < f.span.end),
        });
    }
    out
}

pub fn strip_library(preamble: &str) -> String {
    match (preamble.find(LIBRARY_BEGIN), preamble.find(LIBRARY_END)) {
        (Some(a), Some(b)) if b > a => {
            let mut end = b + LIBRARY_END.len();
            if preamble[end..].starts_with('\n') {
                end += 1;
            }
            format!("{}{}", &preamble[..a], &preamble[end..])
        }
        _ => preamble.to_string(),
    }
}
