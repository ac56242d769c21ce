//! The Code Generator: Beamer generation, compilation, bounded repair and
//! lint.

pub mod checker;
pub mod compile;
pub mod deck;
pub mod lint;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::gateway::{bindings, GatewayError, LlmClient, TemplateId};
use crate::planning::SlidePlan;
use crate::retrieval::SourceSelection;

pub use compile::{compile, CompileErrorLine, CompileReport, EngineConfig, LatexEngine, ProcessEngine};
pub use deck::{BeamerSource, BibEntry, Bullet, DeckError, Frame, FrameKind};
pub use lint::{has_errors, lint, LintFinding, LintRule, Severity};

pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;

#[derive(Debug, Error)]
pub enum CodegenError {
    #[error("completion is not LaTeX (no \\documentclass)")]
    NotLatex,
    #[error("could not parse generated LaTeX: {0}")]
    Parse(String),
    #[error("LaTeX engine `{0}` not found")]
    EngineMissing(String),
    #[error("repair changed the frame count from {before} to {after}")]
    RepairRejected { before: usize, after: usize },
    #[error("compile still failing after {attempts} repair attempts: {last_error}")]
    MaxAttemptsExceeded {
        attempts: u32,
        last_error: String,
        last_log: Option<PathBuf>,
    },
    #[error("code generation output was truncated")]
    Truncated,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<DeckError> for CodegenError {
    fn from(e: DeckError) -> Self {
        match e {
            DeckError::NotLatex => CodegenError::NotLatex,
            DeckError::Parse(m) => CodegenError::Parse(m),
        }
    }
}

/// Removes markdown fences and any prose around the document.
pub fn sanitize_completion(text: &str) -> String {
    let mut body = text.to_string();
    if text.contains("```") {
        // Prefer the fenced block holding the document.
        let blocks: Vec<&str> = text.split("```").collect();
        let inner = blocks
            .iter()
            .skip(1)
            .step_by(2)
            .find(|b| b.contains("\\documentclass"))
            .copied();
        body = match inner {
            Some(b) => {
                let b = b.strip_prefix("latex").or_else(|| b.strip_prefix("tex")).unwrap_or(b);
                b.to_string()
            }
            None => text
                .lines()
                .filter(|l| !l.trim_start().starts_with("```"))
                .collect::<Vec<_>>()
                .join("\n"),
        };
    }
    let start = body.find("\\documentclass").unwrap_or(0);
    let end = body
        .rfind("\\end{document}")
        .map(|i| i + "\\end{document}".len())
        .filter(|e| *e > start)
        .unwrap_or(body.len());
    let mut out = body[start..end].trim().to_string();
    out.push('\n');
    out
}

/// `\bibitem` lines for the selected sources.
pub fn bibliography_hint(selection: &SourceSelection) -> String {
    selection
        .ranked
        .iter()
        .map(|s| format!("\\bibitem{{{}}} {}", s.key(), escape_latex(&s.citation.reference())))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Context bound into the codegen prompt: source texts plus the exact cite
/// keys and reference entries to use.
pub fn codegen_context(selection: &SourceSelection) -> String {
    format!(
        "{}\n\nCite sources only with these keys, and end the presentation with a References slide holding a thebibliography environment with exactly these entries:\n{}",
        selection.context_text(),
        bibliography_hint(selection)
    )
}

pub fn escape_latex(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '%' | '&' | '_' | '#' | '$' | '{' | '}' => {
                out.push('\\');
                out.push(c);
            }
            '~' => out.push_str("\\textasciitilde{}"),
            '^' => out.push_str("\\textasciicircum{}"),
            '\\' => out.push_str("\\textbackslash{}"),
            c => out.push(c),
        }
    }
    out
}

pub fn codegen_prompt(plan: &SlidePlan, selection: &SourceSelection, topic: &str, notes: &[String]) -> Result<String, CodegenError> {
    let mut prompt = crate::gateway::PromptTemplate::builtin(TemplateId::Codegen)
        .render(&bindings([
            ("plan", plan.to_text()),
            ("context", codegen_context(selection)),
            ("topic", topic.to_string()),
        ]))
        .map_err(GatewayError::from)?;
    for n in notes.iter().filter(|n| !n.trim().is_empty()) {
        prompt.push_str("\n\n");
        prompt.push_str(n.trim());
    }
    Ok(prompt)
}

pub fn generate_beamer(
    llm: &dyn LlmClient,
    plan: &SlidePlan,
    selection: &SourceSelection,
    topic: &str,
    notes: &[String],
) -> Result<BeamerSource, CodegenError> {
    let prompt = codegen_prompt(plan, selection, topic, notes)?;
    let completion = llm.complete(
        TemplateId::Codegen.role(),
        &prompt,
        &crate::gateway::SamplingParams::for_template(TemplateId::Codegen),
    )?;
    if !completion.is_usable() {
        return Err(CodegenError::Truncated);
    }
    if !completion.text.contains("\\documentclass") {
        return Err(CodegenError::NotLatex);
    }
    Ok(BeamerSource::parse(sanitize_completion(&completion.text))?)
}

/// Fix hints keyed on the engine's error message and on lint findings.
pub fn repair_suggestions(source: &BeamerSource, report: &CompileReport) -> Vec<String> {
    let msg = report
        .first_error
        .as_ref()
        .map(|e| e.message.to_lowercase())
        .unwrap_or_default();
    let mut out = Vec::new();
    let table: &[(&[&str], &str)] = &[
        (&["undefined control sequence"], "Remove the undefined command or replace it with a standard LaTeX or Beamer command."),
        (
            &["missing } inserted", "runaway argument", "file ended while scanning", "paragraph ended before", "extra }", "missing { inserted"],
            "Check that every { has a matching } and every \\begin has a matching \\end.",
        ),
        (&["misplaced alignment tab"], "Escape literal ampersands as \\&."),
        (&["missing $ inserted"], "Escape literal underscores as \\_ or wrap the expression in $...$."),
        (&["ended by \\end", "\\begin{", "environment"], "Balance \\begin{...} and \\end{...} pairs."),
        (&["timed out"], "Simplify any TikZ drawing or loop that does not terminate."),
    ];
    for (needles, hint) in table {
        if needles.iter().any(|n| msg.contains(n)) {
            out.push(hint.to_string());
        }
    }
    for f in lint(source).into_iter().filter(|f| f.rule == LintRule::UnescapedSpecial) {
        if f.detail.contains('%') {
            out.push(format!("Escape percent signs as \\%: {}", f.detail));
        } else {
            out.push(format!("Escape special characters: {}", f.detail));
        }
    }
    if out.is_empty() {
        out.push("Fix the reported error with the smallest possible change.".to_string());
    }
    out
}

pub fn repair_prompt(source: &BeamerSource, report: &CompileReport, attempt: u32) -> Result<String, CodegenError> {
    let suggestions = repair_suggestions(source, report)
        .into_iter()
        .map(|s| format!("- {s}"))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(crate::gateway::PromptTemplate::builtin(TemplateId::Repair)
        .render(&bindings([
            ("attempt", attempt.to_string()),
            ("error", report.error_summary()),
            ("log", report.log_excerpt.clone()),
            ("suggestions", suggestions),
            ("slidecode", source.raw.clone()),
        ]))
        .map_err(GatewayError::from)?)
}

/// One repair round. Rejects a result whose frame count moved by more
/// than one.
pub fn repair(
    llm: &dyn LlmClient,
    source: &BeamerSource,
    report: &CompileReport,
    attempt: u32,
) -> Result<BeamerSource, CodegenError> {
    let prompt = repair_prompt(source, report, attempt)?;
    let completion = llm.complete(
        TemplateId::Repair.role(),
        &prompt,
        &crate::gateway::SamplingParams::for_template(TemplateId::Repair),
    )?;
    if !completion.is_usable() {
        return Err(CodegenError::Truncated);
    }
    let fixed = BeamerSource::parse(sanitize_completion(&completion.text))?;
    let (before, after) = (source.frames.len(), fixed.frames.len());
    if before.abs_diff(after) > 1 {
        return Err(CodegenError::RepairRejected { before, after });
    }
    Ok(fixed)
}

#[derive(Debug, Clone)]
pub struct BuildOutcome {
    pub source: BeamerSource,
    pub report: CompileReport,
    /// Repair attempts used (0 when the first compile succeeded).
    pub attempts: u32,
    pub logs: Vec<PathBuf>,
}

/// Compile, and on failure repair and recompile, at most `max_attempts`
/// repairs. Each compile log is written to `log_path(k)` for k = 0, 1, ...
pub fn build_with_repair(
    llm: &dyn LlmClient,
    engine: &dyn LatexEngine,
    source: BeamerSource,
    workdir: &Path,
    max_attempts: u32,
    log_path: &dyn Fn(u32) -> PathBuf,
) -> Result<BuildOutcome, CodegenError> {
    let mut current = source;
    let mut logs = Vec::new();
    let mut attempt = 0;
    loop {
        let report = engine.compile(&current, workdir)?;
        let path = log_path(attempt);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&path, &report.log)?;
        logs.push(path.clone());
        if report.success {
            return Ok(BuildOutcome {
                source: current,
                report,
                attempts: attempt,
                logs,
            });
        }
        if attempt >= max_attempts {
            return Err(CodegenError::MaxAttemptsExceeded {
                attempts: attempt,
                last_error: report.error_summary(),
                last_log: Some(path),
            });
        }
        attempt += 1;
        log::info!("compile failed ({}), repair attempt {attempt}", report.error_summary());
        match repair(llm, &current, &report, attempt) {
            Ok(fixed) => current = fixed,
            Err(e @ (CodegenError::RepairRejected { .. } | CodegenError::Truncated | CodegenError::Parse(_) | CodegenError::NotLatex)) => {
                log::warn!("repair attempt {attempt} discarded: {e}");
            }
            Err(e) => return Err(e),
        }
    }
}
