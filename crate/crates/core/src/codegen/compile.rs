//! External LaTeX engine invocation and log parsing.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use super::deck::BeamerSource;
use super::CodegenError;

pub const DEFAULT_ENGINE_COMMAND: &str =
    "pdflatex -interaction=nonstopmode -halt-on-error -file-line-error {input}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Whitespace-separated command template; `{input}` is the `.tex` file
    /// name and `{jobname}` its stem.
    pub command: String,
    pub timeout: Duration,
    /// Engine passes per compile (a second pass resolves the outline).
    pub runs: u32,
    pub jobname: String,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            command: DEFAULT_ENGINE_COMMAND.to_string(),
            timeout: Duration::from_secs(120),
            runs: 2,
            jobname: "deck".to_string(),
        }
    }
}

impl EngineConfig {
    pub fn program(&self) -> &str {
        self.command.split_whitespace().next().unwrap_or("")
    }

    pub fn argv(&self) -> Vec<String> {
        let input = format!("{}.tex", self.jobname);
        self.command
            .split_whitespace()
            .map(|t| t.replace("{input}", &input).replace("{jobname}", &self.jobname))
            .collect()
    }

    /// Whether the engine program resolves on `PATH` (or as a path).
    pub fn is_available(&self) -> bool {
        let program = self.program();
        if program.is_empty() {
            return false;
        }
        if program.contains('/') {
            return Path::new(program).is_file();
        }
        std::env::var_os("PATH")
            .map(|paths| std::env::split_paths(&paths).any(|d| d.join(program).is_file()))
            .unwrap_or(false)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileErrorLine {
    pub file: String,
    pub line: Option<u32>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompileReport {
    pub success: bool,
    pub log_excerpt: String,
    pub first_error: Option<CompileErrorLine>,
    pub duration_secs: f64,
    pub pages: Option<u32>,
    pub pdf_path: Option<PathBuf>,
    /// Full engine log.
    pub log: String,
}

impl CompileReport {
    pub fn error_summary(&self) -> String {
        match &self.first_error {
            Some(e) => match e.line {
                Some(l) => format!("{}:{}: {}", e.file, l, e.message),
                None => format!("{}: {}", e.file, e.message),
            },
            None => "compile failed without a recognizable error line".to_string(),
        }
    }
}

/// Anything that turns a deck into a PDF in a working directory.
pub trait LatexEngine: Send + Sync {
    fn compile(&self, source: &BeamerSource, workdir: &Path) -> Result<CompileReport, CodegenError>;
}

/// Runs the configured command as a child process.
#[derive(Debug, Clone, Default)]
pub struct ProcessEngine {
    pub config: EngineConfig,
}

impl ProcessEngine {
    pub fn new(config: EngineConfig) -> Self {
        Self { config }
    }
}

impl LatexEngine for ProcessEngine {
    fn compile(&self, source: &BeamerSource, workdir: &Path) -> Result<CompileReport, CodegenError> {
        compile(source, workdir, &self.config)
    }
}

fn file_line_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| Regex::new(r"(?m)^([^\s:][^:\n]*\.(?:tex|sty|cls|def|cfg)):(\d+): (.+)$").unwrap())
}

fn bang_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| Regex::new(r"(?m)^! (.+)$").unwrap())
}

fn line_ref_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| Regex::new(r"(?m)^l\.(\d+)").unwrap())
}

fn pages_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| Regex::new(r"Output written on .*?\((\d+) pages?").unwrap())
}

/// First error in a TeX log, in either `file:line: message` or `! message`
/// + `l.N` form.
pub fn parse_first_error(log: &str, default_file: &str) -> Option<CompileErrorLine> {
    let fl = file_line_re().captures(log);
    let bang = bang_re().captures(log);
    let fl_pos = fl.as_ref().map(|c| c.get(0).unwrap().start());
    let bang_pos = bang.as_ref().map(|c| c.get(0).unwrap().start());
    match (fl, bang) {
        (Some(c), _) if bang_pos.is_none_or(|b| fl_pos.unwrap() <= b) => Some(CompileErrorLine {
            file: c[1].trim_start_matches("./").to_string(),
            line: c[2].parse().ok(),
            message: c[3].trim().to_string(),
        }),
        (_, Some(c)) => {
            let after = c.get(0).unwrap().end();
            let line = line_ref_re().captures(&log[after..]).and_then(|l| l[1].parse().ok());
            Some(CompileErrorLine {
                file: default_file.to_string(),
                line,
                message: c[1].trim().to_string(),
            })
        }
        _ => None,
    }
}

pub fn parse_page_count(log: &str) -> Option<u32> {
    pages_re().captures(log).and_then(|c| c[1].parse().ok())
}

/// Lines around the first error, or the log tail when there is none.
pub fn log_excerpt(log: &str, max_lines: usize) -> String {
    let lines: Vec<&str> = log.lines().collect();
    let start = lines
        .iter()
        .position(|l| l.starts_with("! ") || file_line_re().is_match(l))
        .unwrap_or(lines.len().saturating_sub(max_lines));
    lines[start..lines.len().min(start + max_lines)].join("\n")
}

fn read_pipe(p: Option<impl Read>) -> String {
    let mut s = String::new();
    if let Some(mut r) = p {
        let mut buf = Vec::new();
        let _ = r.read_to_end(&mut buf);
        s = String::from_utf8_lossy(&buf).into_owned();
    }
    s
}

/// Writes the deck into `workdir` and runs the engine there. All engine
/// outputs stay inside `workdir`.
pub fn compile(source: &BeamerSource, workdir: &Path, config: &EngineConfig) -> Result<CompileReport, CodegenError> {
    let argv = config.argv();
    let Some((program, args)) = argv.split_first() else {
        return Err(CodegenError::EngineMissing(String::new()));
    };
    fs::create_dir_all(workdir)?;
    let input = format!("{}.tex", config.jobname);
    let pdf = workdir.join(format!("{}.pdf", config.jobname));
    let log_file = workdir.join(format!("{}.log", config.jobname));
    fs::write(workdir.join(&input), &source.raw)?;
    let _ = fs::remove_file(&pdf);
    let started = Instant::now();
    let mut exit_ok = true;
    let mut output = String::new();
    let mut timed_out = false;
    for _ in 0..config.runs.max(1) {
        let mut child = match Command::new(program)
            .args(args)
            .current_dir(workdir)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
        {
            Ok(c) => c,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(CodegenError::EngineMissing(program.clone()));
            }
            Err(e) => return Err(e.into()),
        };
        // Drain stdout on a thread so a chatty engine cannot block on a full pipe.
        let stdout = child.stdout.take();
        let reader = std::thread::spawn(move || read_pipe(stdout));
        let remaining = config.timeout.saturating_sub(started.elapsed());
        let status = match child.wait_timeout(remaining)? {
            Some(s) => s,
            None => {
                let _ = child.kill();
                let _ = child.wait();
                timed_out = true;
                output = reader.join().unwrap_or_default();
                break;
            }
        };
        output = reader.join().unwrap_or_default();
        output.push_str(&read_pipe(child.stderr.take()));
        if !status.success() {
            exit_ok = false;
            break;
        }
    }
    let duration_secs = started.elapsed().as_secs_f64();
    let log = fs::read(&log_file)
        .map(|b| String::from_utf8_lossy(&b).into_owned())
        .unwrap_or(output);
    if timed_out {
        return Ok(CompileReport {
            success: false,
            log_excerpt: log_excerpt(&log, 30),
            first_error: Some(CompileErrorLine {
                file: input,
                line: None,
                message: format!("engine timed out after {:.0} s", config.timeout.as_secs_f64()),
            }),
            duration_secs,
            pages: None,
            pdf_path: None,
            log,
        });
    }
    let success = exit_ok && pdf.is_file();
    let first_error = if success { None } else { parse_first_error(&log, &input) };
    let mut log_excerpt = log_excerpt(&log, 30);
    if !success && first_error.is_none() && log_excerpt.trim().is_empty() {
        log_excerpt = "engine exited with failure and produced no log".to_string();
    }
    Ok(CompileReport {
        success,
        pages: if success { parse_page_count(&log) } else { None },
        pdf_path: success.then_some(pdf),
        log_excerpt,
        first_error,
        duration_secs,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const LOG: &str = "This is pdfTeX\n(./deck.tex\n./deck.tex:12: Undefined control sequence.\nl.12 \\foo\n\nOutput written on deck.pdf (9 pages, 1234 bytes).";

    #[test]
    fn file_line_error() {
        let e = parse_first_error(LOG, "deck.tex").unwrap();
        assert_eq!(e.file, "deck.tex");
        assert_eq!(e.line, Some(12));
        assert_eq!(e.message, "Undefined control sequence.");
        assert_eq!(parse_page_count(LOG), Some(9));
    }

    #[test]
    fn bang_error() {
        let log = "stuff\n! Missing } inserted.\n<inserted text>\n}\nl.40 \\end{frame}\n";
        let e = parse_first_error(log, "deck.tex").unwrap();
        assert_eq!(e.line, Some(40));
        assert_eq!(e.message, "Missing } inserted.");
        assert!(log_excerpt(log, 3).starts_with("! Missing"));
        assert!(parse_first_error("all fine", "deck.tex").is_none());
    }

    #[test]
    fn argv_substitution() {
        let c = EngineConfig::default();
        assert_eq!(c.argv().last().unwrap(), "deck.tex");
        assert_eq!(c.program(), "pdflatex");
    }

    #[test]
    fn missing_engine() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = EngineConfig {
            command: "definitely-not-a-latex-engine {input}".into(),
            ..Default::default()
        };
        assert!(!cfg.is_available());
        let src = BeamerSource::parse("\\documentclass{beamer}\\begin{document}\\begin{frame}{A}\\end{frame}\\end{document}").unwrap();
        assert!(matches!(compile(&src, dir.path(), &cfg), Err(CodegenError::EngineMissing(_))));
        assert!(dir.path().join("deck.tex").exists());
    }

    #[cfg(unix)]
    #[test]
    fn fake_engine_via_shell() {
        let dir = tempfile::tempdir().unwrap();
        let script = dir.path().join("fake-engine.sh");
        fs::write(
            &script,
            "#!/bin/sh\nstem=${1%.tex}\nprintf '%%PDF-1.4\\n' > \"$stem.pdf\"\nprintf 'Output written on %s.pdf (3 pages, 10 bytes).\\n' \"$stem\" > \"$stem.log\"\n",
        )
        .unwrap();
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(&script, fs::Permissions::from_mode(0o755)).unwrap();
        let cfg = EngineConfig {
            command: format!("{} {{input}}", script.display()),
            runs: 1,
            ..Default::default()
        };
        let work = dir.path().join("build");
        let src = BeamerSource::parse("\\documentclass{beamer}\\begin{document}\\begin{frame}{A}\\end{frame}\\end{document}").unwrap();
        let r = compile(&src, &work, &cfg).unwrap();
        assert!(r.success, "{r:?}");
        assert_eq!(r.pages, Some(3));
        assert!(work.join("deck.pdf").is_file());
    }

    #[cfg(unix)]
    #[test]
    fn timeout_is_a_failed_compile() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = EngineConfig {
            command: "sleep 5".into(),
            timeout: Duration::from_millis(200),
            runs: 1,
            ..Default::default()
        };
        let src = BeamerSource::parse("\\documentclass{beamer}\\begin{document}\\begin{frame}{A}\\end{frame}\\end{document}").unwrap();
        let r = compile(&src, dir.path(), &cfg).unwrap();
        assert!(!r.success);
        assert!(r.first_error.unwrap().message.contains("timed out"));
    }
}
