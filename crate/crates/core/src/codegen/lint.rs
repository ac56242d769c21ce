//! Structural and citation checks on a parsed deck.

use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::deck::{group_end, mask_comments, skip_ws, BeamerSource, FrameKind, Span};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LintRule {
    BulletCount,
    MissingCite,
    UnresolvedCiteKey,
    UnescapedSpecial,
    EmptyFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    Warning,
    Error,
}

impl LintRule {
    /// Only unresolved cite keys block finalization.
    pub fn severity(self) -> Severity {
        match self {
            LintRule::UnresolvedCiteKey => Severity::Error,
            _ => Severity::Warning,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintFinding {
    pub rule: LintRule,
    pub severity: Severity,
    /// `None` locates the finding in the bibliography.
    pub frame_index: Option<usize>,
    pub detail: String,
}

pub const MIN_BULLETS: usize = 3;
pub const MAX_BULLETS: usize = 5;

fn finding(rule: LintRule, frame_index: Option<usize>, detail: String) -> LintFinding {
    LintFinding {
        rule,
        severity: rule.severity(),
        frame_index,
        detail,
    }
}

fn strip_commands(text: &str) -> String {
    static R: OnceLock<Regex> = OnceLock::new();
    let re = R.get_or_init(|| Regex::new(r"\\(?:cite[a-z]*|ref|label|url|href)\*?(?:\[[^\]]*\])*\{[^}]*\}|\\[A-Za-z]+\*?|[{}$]").unwrap());
    re.replace_all(text, " ").into_owned()
}

/// A bullet states a checkable fact when it contains a digit or a
/// capitalized word past the first one.
pub fn looks_factual(text: &str) -> bool {
    let plain = strip_commands(text);
    if plain.chars().any(|c| c.is_ascii_digit()) {
        return true;
    }
    plain
        .split(|c: char| !c.is_alphanumeric() && c != '-')
        .filter(|w| !w.is_empty())
        .skip(1)
        .any(|w| w.len() > 1 && w.chars().next().is_some_and(char::is_uppercase))
}

/// Blanks math, verbatim-like environments, tabular-like environments and
/// arguments of commands whose content is not typeset text.
fn mask_non_text(masked: &str) -> String {
    static ENV: OnceLock<Regex> = OnceLock::new();
    static INLINE: OnceLock<Regex> = OnceLock::new();
    static ARG: OnceLock<Regex> = OnceLock::new();
    let env = ENV.get_or_init(|| {
        Regex::new(r"(?s)\\begin\{(verbatim|lstlisting|minted|equation\*?|align\*?|gather\*?|multline\*?|tabular\*?|tabularx|array|matrix|pmatrix|bmatrix|tikzpicture|axis|algorithm)\}.*?\\end\{(?:verbatim|lstlisting|minted|equation\*?|align\*?|gather\*?|multline\*?|tabular\*?|tabularx|array|matrix|pmatrix|bmatrix|tikzpicture|axis|algorithm)\}").unwrap()
    });
    let inline = INLINE.get_or_init(|| Regex::new(r"(?s)\$\$.*?\$\$|\\\[.*?\\\]|\\\(.*?\\\)|\$(?:\\.|[^$\\])*\$").unwrap());
    let arg = ARG.get_or_init(|| {
        Regex::new(r"\\(?:cite[a-z]*|ref|eqref|label|url|href|includegraphics|bibitem|input|include|usepackage|usetheme|usecolortheme|setbeamertemplate|hypersetup|drawpipeline|inlineformula|inlinepseudocode|drawconfmat|drawnetwork|drawgenericplot|pdfcomment|pdfmargincomment)\b\*?").unwrap()
    });
    let mut bytes = masked.as_bytes().to_vec();
    let mut blank = |s: Span| {
        for b in &mut bytes[s] {
            if b.is_ascii() && *b != b'\n' {
                *b = b' ';
            }
        }
    };
    for m in env.find_iter(masked).chain(inline.find_iter(masked)) {
        blank(m.range());
    }
    for m in arg.find_iter(masked) {
        let mut pos = m.end();
        loop {
            let j = skip_ws(masked, pos);
            match masked.as_bytes().get(j) {
                Some(b'{') | Some(b'[') => match group_end(masked, j) {
                    Some(e) => {
                        blank(j..e);
                        pos = e;
                    }
                    None => break,
                },
                _ => break,
            }
        }
    }
    String::from_utf8(bytes).expect("only ASCII bytes were blanked")
}

fn unescaped_specials(raw: &str, span: Span) -> Vec<String> {
    static PCT: OnceLock<Regex> = OnceLock::new();
    let pct = PCT.get_or_init(|| Regex::new(r"[0-9] ?%").unwrap());
    let mut out = Vec::new();
    let text = &raw[span.clone()];
    // A percent sign right after a number is almost always meant literally,
    // and silently comments out the rest of the line.
    for m in pct.find_iter(text) {
        let at = m.end() - 1;
        if at == 0 || text.as_bytes()[at - 1] != b'\\' {
            let line_start = text[..at].rfind('\n').map_or(0, |i| i + 1);
            let line_end = text[at..].find('\n').map_or(text.len(), |i| at + i);
            out.push(format!("unescaped % in `{}`", text[line_start..line_end].trim()));
        }
    }
    let masked = mask_non_text(&mask_comments(text));
    let b = masked.as_bytes();
    for (i, &c) in b.iter().enumerate() {
        if (c == b'&' || c == b'_') && (i == 0 || b[i - 1] != b'\\') {
            let line_start = masked[..i].rfind('\n').map_or(0, |k| k + 1);
            let line_end = text[i..].find('\n').map_or(text.len(), |k| i + k);
            out.push(format!("unescaped {} in `{}`", c as char, text[line_start..line_end].trim()));
        }
    }
    out
}

pub fn lint(source: &BeamerSource) -> Vec<LintFinding> {
    let mut out = Vec::new();
    let bib: HashSet<&str> = source.bib_keys().into_iter().collect();
    for (i, f) in source.frames.iter().enumerate() {
        let content = f.kind == FrameKind::Content;
        if content {
            let n = f.bullets.len();
            if n == 0 && f.macro_calls.is_empty() && source.raw[f.body.clone()].trim().is_empty() {
                out.push(finding(LintRule::EmptyFrame, Some(i), format!("frame `{}` is empty", f.title)));
            } else if !(MIN_BULLETS..=MAX_BULLETS).contains(&n) {
                out.push(finding(
                    LintRule::BulletCount,
                    Some(i),
                    format!("frame `{}` has {n} bullets, expected {MIN_BULLETS}-{MAX_BULLETS}", f.title),
                ));
            }
            for (j, b) in f.bullets.iter().enumerate() {
                if b.cite_keys.is_empty() && looks_factual(&b.text) {
                    out.push(finding(
                        LintRule::MissingCite,
                        Some(i),
                        format!("bullet {} states a fact without a citation: {}", j + 1, b.text),
                    ));
                }
            }
        } else if f.kind != FrameKind::Title && source.raw[f.body.clone()].trim().is_empty() {
            out.push(finding(LintRule::EmptyFrame, Some(i), format!("frame `{}` is empty", f.title)));
        }
        let mut seen = HashSet::new();
        for k in &f.cite_keys {
            if !bib.contains(k.as_str()) && seen.insert(k) {
                out.push(finding(
                    LintRule::UnresolvedCiteKey,
                    Some(i),
                    format!("\\cite{{{k}}} has no \\bibitem"),
                ));
            }
        }
        for d in unescaped_specials(&source.raw, f.body.clone()) {
            out.push(finding(LintRule::UnescapedSpecial, Some(i), d));
        }
    }
    let mut keys = HashSet::new();
    for b in &source.bibliography {
        if !keys.insert(b.key.as_str()) {
            out.push(finding(
                LintRule::UnresolvedCiteKey,
                None,
                format!("\\bibitem{{{}}} is defined twice", b.key),
            ));
        }
    }
    out
}

pub fn has_errors(findings: &[LintFinding]) -> bool {
    findings.iter().any(|f| f.severity == Severity::Error)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn deck(body: &str) -> BeamerSource {
        BeamerSource::parse(format!(
            "\\documentclass{{beamer}}\n\\begin{{document}}\n{body}\n\\begin{{frame}}{{References}}\n\\begin{{thebibliography}}{{9}}\n\\bibitem{{a2020}} A. (2020). T.\n\\end{{thebibliography}}\n\\end{{frame}}\n\\end{{document}}\n"
        ))
        .unwrap()
    }

    fn items(n: usize, text: &str) -> String {
        (0..n).map(|_| format!("\\item {text}\n")).collect()
    }

    #[test]
    fn clean_deck() {
        let d = deck(&format!(
            "\\begin{{frame}}{{Intro}}\\begin{{itemize}}\n{}\\end{{itemize}}\\end{{frame}}",
            items(3, "a point \\cite{a2020}")
        ));
        assert_eq!(lint(&d), []);
    }

    #[test]
    fn six_bullets() {
        let d = deck(&format!(
            "\\begin{{frame}}{{Intro}}\\begin{{itemize}}\n{}\\end{{itemize}}\\end{{frame}}",
            items(6, "plain point")
        ));
        let f = lint(&d);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].rule, LintRule::BulletCount);
        assert_eq!(f[0].frame_index, Some(0));
    }

    #[test]
    fn unresolved_key_is_error() {
        let d = deck(&format!(
            "\\begin{{frame}}{{Intro}}\\begin{{itemize}}\n{}\\end{{itemize}}\\end{{frame}}",
            items(3, "point \\cite{lensen2021}")
        ));
        let f = lint(&d);
        assert!(f.iter().any(|x| x.rule == LintRule::UnresolvedCiteKey && x.severity == Severity::Error));
        assert!(has_errors(&f));
    }

    #[test]
    fn facts_need_cites() {
        assert!(looks_factual("accuracy reached 95\\%"));
        assert!(looks_factual("developed by Tenenbaum"));
        assert!(!looks_factual("Manifolds are smooth"));
        assert!(!looks_factual("\\textbf{Key} idea is smooth"));
    }

    #[test]
    fn specials() {
        let d = deck(
            "\\begin{frame}{Intro}\\begin{itemize}\n\\item \\textbf{95% accurate}\n\\item R&D and x_1 \\cite{a2020}\n\\item ok $x_1$ and 5\\% \\cite{a2020}\n\\end{itemize}\\end{frame}",
        );
        let f: Vec<_> = lint(&d).into_iter().filter(|x| x.rule == LintRule::UnescapedSpecial).collect();
        assert_eq!(f.len(), 3, "{f:?}");
    }

    #[test]
    fn empty_frame() {
        let d = deck("\\begin{frame}{Nothing}\n\\end{frame}");
        assert!(lint(&d).iter().any(|x| x.rule == LintRule::EmptyFrame));
    }
}
