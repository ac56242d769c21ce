//! In-process stand-in for a TeX engine: rejects the structural faults a
//! real engine rejects (braces, environments, undefined control sequences)
//! and writes a blank PDF with one page per frame.

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;
use std::time::Instant;

use regex::Regex;

use super::compile::{log_excerpt, parse_first_error, parse_page_count, CompileReport, LatexEngine};
use super::deck::{mask_comments, BeamerSource};
use super::CodegenError;
use crate::enhancer::macros::MacroKind;

/// Control sequences a standard Beamer installation defines, plus the
/// macro library and the packages it loads.
const KNOWN: &[&str] = &[
    "documentclass", "usepackage", "RequirePackage", "usetheme", "usecolortheme", "usefonttheme", "useinnertheme",
    "useoutertheme", "setbeamertemplate", "setbeamercolor", "setbeamerfont", "title", "subtitle", "author",
    "date", "institute", "today", "begin", "end", "frametitle", "framesubtitle", "titlepage", "maketitle",
    "tableofcontents", "section", "subsection", "subsubsection", "item", "textbf", "textit", "textsc", "texttt",
    "textrm", "textsf", "emph", "underline", "textcolor", "color", "colorbox", "cite", "bibitem", "newblock",
    "bibliographystyle", "bibliography", "tiny", "scriptsize", "footnotesize", "small", "normalsize", "large",
    "Large", "LARGE", "huge", "Huge", "centering", "raggedright", "raggedleft", "hfill", "vfill", "vspace",
    "hspace", "par", "newline", "linebreak", "pagebreak", "newpage", "label", "ref", "eqref", "url", "href",
    "includegraphics", "caption", "footnote", "pause", "only", "onslide", "uncover", "visible", "invisible",
    "alert", "structure", "column", "textwidth", "linewidth", "columnwidth", "paperwidth", "textheight",
    "quad", "qquad", "ldots", "dots", "cdots", "textendash", "textemdash", "textasciitilde", "textasciicircum",
    "textbackslash", "textbar", "textless", "textgreater", "S", "P", "copyright", "dag", "ddag", "noindent",
    "smallskip", "medskip", "bigskip", "hline", "cline", "toprule", "midrule", "bottomrule", "multicolumn",
    "newcommand", "renewcommand", "providecommand", "def", "let", "newif", "makeatletter", "makeatother",
    "AtBeginDocument", "AtBeginSection", "ifx", "fi", "else", "relax", "detokenize", "if", "numexpr",
    "the", "arabic", "roman", "thepage", "insertframenumber", "inserttotalframenumber", "pdfcomment",
    "pdfmargincomment", "pdftooltip", "drawpipeline", "inlineformula", "inlinepseudocode", "drawconfmat",
    "drawnetwork", "drawgenericplot", "instructorviewtrue", "instructorviewfalse", "ifinstructorview",
    "usetikzlibrary", "pgfplotsset", "tikz", "node", "draw", "fill", "path", "foreach", "addplot",
    "addlegendentry", "SetKwInOut", "KwIn", "KwOut", "KwData", "KwResult", "For", "While", "If", "ElseIf",
    "Else", "Return", "Repeat", "ForEach", "SetAlgoLined", "DontPrintSemicolon", "SetKwFunction", "caption",
];

fn cs_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| Regex::new(r"\\([A-Za-z@]+)").unwrap())
}

fn definition_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| {
        Regex::new(r"\\(?:(?:re)?newcommand|providecommand|DeclareMathOperator)\*?\s*\{?\\([A-Za-z@]+)|\\def\s*\\([A-Za-z@]+)|\\newif\s*\\if([A-Za-z@]+)")
            .unwrap()
    })
}

fn env_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| Regex::new(r"\\(begin|end)\s*\{([^}]*)\}").unwrap())
}

fn line_of(text: &str, at: usize) -> usize {
    text[..at].bytes().filter(|b| *b == b'\n').count() + 1
}

/// Byte ranges of `$...$`, `\[...\]` and `\(...\)` in `masked`.
fn math_ranges(masked: &str) -> Vec<std::ops::Range<usize>> {
    let b = masked.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        match b[i] {
            b'\\' if i + 1 < b.len() && (b[i + 1] == b'[' || b[i + 1] == b'(') => {
                let close = if b[i + 1] == b'[' { "\\]" } else { "\\)" };
                let end = masked[i + 2..].find(close).map_or(b.len(), |p| i + 2 + p + 2);
                out.push(i..end);
                i = end;
            }
            b'\\' => i += 2,
            b'$' => {
                let double = b.get(i + 1) == Some(&b'$');
                let open = if double { 2 } else { 1 };
                let close = if double { "$$" } else { "$" };
                let end = masked[i + open..].find(close).map_or(b.len(), |p| i + open + p + open);
                out.push(i..end);
                i = end;
            }
            _ => i += 1,
        }
    }
    out
}

/// Argument spans of the figure and inline macros, whose bodies hold
/// TikZ or algorithm2e code the library expands.
fn macro_arg_ranges(masked: &str) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    for m in cs_re().find_iter(masked) {
        let name = &masked[m.start() + 1..m.end()];
        if MacroKind::from_command(name).is_none() {
            continue;
        }
        let mut pos = m.end();
        loop {
            let rest = &masked[pos..];
            let skip = rest.len() - rest.trim_start().len();
            if !rest[skip..].starts_with('{') {
                break;
            }
            let open = pos + skip;
            let Some(close) = super::deck::group_end(masked, open) else { break };
            out.push(open..close);
            pos = close;
        }
    }
    out
}

#[derive(Debug)]
struct Fault {
    line: usize,
    message: String,
    context: String,
}

fn check(raw: &str) -> Result<(), Fault> {
    let masked = mask_comments(raw);
    let fault = |at: usize, message: String| {
        let line = line_of(raw, at);
        let context = raw.lines().nth(line - 1).unwrap_or("").trim().to_string();
        Fault { line, message, context }
    };

    let mut depth: Vec<usize> = Vec::new();
    let bytes = masked.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 1,
            b'{' => depth.push(i),
            b'}' if depth.pop().is_none() => return Err(fault(i, "Too many }'s.".into())),
            _ => {}
        }
        i += 1;
    }
    if let Some(open) = depth.first() {
        return Err(fault(*open, "File ended while scanning use of a group (missing } inserted).".into()));
    }

    let mut envs: Vec<(String, usize)> = Vec::new();
    for c in env_re().captures_iter(&masked) {
        let at = c.get(0).unwrap().start();
        let name = c[2].trim().to_string();
        if &c[1] == "begin" {
            envs.push((name, at));
        } else {
            match envs.pop() {
                Some((open, _)) if open == name => {}
                Some((open, open_at)) => {
                    return Err(fault(
                        at,
                        format!(
                            "LaTeX Error: \\begin{{{open}}} on input line {} ended by \\end{{{name}}}.",
                            line_of(raw, open_at)
                        ),
                    ));
                }
                None => return Err(fault(at, format!("LaTeX Error: \\begin{{document}} ended by \\end{{{name}}}."))),
            }
        }
    }
    if let Some((open, at)) = envs.last() {
        return Err(fault(*at, format!("LaTeX Error: \\begin{{{open}}} ended by \\end{{document}} (no matching \\end).")));
    }
    let Some(body_start) = masked.find("\\begin{document}") else {
        return Err(fault(0, "LaTeX Error: Missing \\begin{document}.".into()));
    };

    let mut known: HashSet<&str> = KNOWN.iter().copied().collect();
    let defined: Vec<String> = definition_re()
        .captures_iter(&masked)
        .flat_map(|c| {
            if let Some(n) = c.get(1).or(c.get(2)) {
                vec![n.as_str().to_string()]
            } else {
                let n = c.get(3).unwrap().as_str();
                vec![format!("if{n}"), format!("{n}true"), format!("{n}false")]
            }
        })
        .collect();
    known.extend(defined.iter().map(String::as_str));
    let mut skip = math_ranges(&masked);
    skip.extend(macro_arg_ranges(&masked));
    for m in cs_re().find_iter(&masked[body_start..]) {
        let at = body_start + m.start();
        let name = &masked[at + 1..body_start + m.end()];
        if known.contains(name) || skip.iter().any(|r| r.contains(&at)) {
            continue;
        }
        return Err(fault(at, "Undefined control sequence.".into()));
    }
    Ok(())
}

/// A minimal PDF with `pages` blank pages.
pub fn blank_pdf(pages: u32) -> Vec<u8> {
    let pages = pages.max(1);
    let mut objects: Vec<String> = vec!["<< /Type /Catalog /Pages 2 0 R >>".into()];
    let kids: Vec<String> = (0..pages).map(|p| format!("{} 0 R", p + 3)).collect();
    objects.push(format!("<< /Type /Pages /Kids [{}] /Count {pages} >>", kids.join(" ")));
    for _ in 0..pages {
        objects.push("<< /Type /Page /Parent 2 0 R /MediaBox [0 0 364 273] >>".into());
    }
    let mut out = b"%PDF-1.4\n".to_vec();
    let mut offsets = Vec::new();
    for (i, body) in objects.iter().enumerate() {
        offsets.push(out.len());
        out.extend_from_slice(format!("{} 0 obj\n{body}\nendobj\n", i + 1).as_bytes());
    }
    let xref = out.len();
    out.extend_from_slice(format!("xref\n0 {}\n0000000000 65535 f \n", objects.len() + 1).as_bytes());
    for o in offsets {
        out.extend_from_slice(format!("{o:010} 00000 n \n").as_bytes());
    }
    out.extend_from_slice(
        format!("trailer\n<< /Size {} /Root 1 0 R >>\nstartxref\n{xref}\n%%EOF\n", objects.len() + 1).as_bytes(),
    );
    out
}

/// Engine double for offline runs and tests.
#[derive(Debug, Default)]
pub struct CheckingEngine {
    calls: AtomicUsize,
}

impl CheckingEngine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LatexEngine for CheckingEngine {
    fn compile(&self, source: &BeamerSource, workdir: &Path) -> Result<CompileReport, CodegenError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let started = Instant::now();
        fs::create_dir_all(workdir)?;
        fs::write(workdir.join("deck.tex"), &source.raw)?;
        let pdf = workdir.join("deck.pdf");
        let _ = fs::remove_file(&pdf);
        let mut log = String::from("This is CheckingEngine (structural TeX check)\n(./deck.tex\n");
        let ok = match check(&source.raw) {
            Ok(()) => {
                let pages = source.frames.len() as u32;
                let bytes = blank_pdf(pages);
                fs::write(&pdf, &bytes)?;
                log.push_str(&format!(")\nOutput written on deck.pdf ({pages} pages, {} bytes).\n", bytes.len()));
                true
            }
            Err(f) => {
                log.push_str(&format!("./deck.tex:{}: {}\nl.{} {}\n\n!  ==> Fatal error occurred, no output PDF file produced!\n", f.line, f.message, f.line, f.context));
                false
            }
        };
        fs::write(workdir.join("deck.log"), &log)?;
        Ok(CompileReport {
            success: ok,
            log_excerpt: log_excerpt(&log, 30),
            first_error: if ok { None } else { parse_first_error(&log, "deck.tex") },
            duration_secs: started.elapsed().as_secs_f64(),
            pages: if ok { parse_page_count(&log) } else { None },
            pdf_path: ok.then_some(pdf),
            log,
        })
    }
}
