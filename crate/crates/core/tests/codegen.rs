mod common;

use std::sync::{Arc, Mutex};

use proptest::prelude::*;

use common::read_fixture;
use slidesmith::codegen::checker::CheckingEngine;
use slidesmith::codegen::{build_with_repair, has_errors, lint, BeamerSource, CodegenError, FrameKind, LatexEngine, LintRule};
use slidesmith::gateway::{Completion, ScriptedLlm};

const INJECTED: [(&str, &str); 3] = [
    ("missing_brace", "Check that every { has a matching }"),
    ("undefined_control_sequence", "Remove the undefined command"),
    ("unescaped_percent", "Escape percent signs"),
];

/// Answers every repair prompt with `reply`, keeping the prompts.
fn repairer(reply: String) -> (ScriptedLlm, Arc<Mutex<Vec<String>>>) {
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let llm = ScriptedLlm::new(move |_, prompt| {
        log.lock().unwrap().push(prompt.to_string());
        Ok(Completion::stop(reply.clone()))
    });
    (llm, seen)
}

#[test]
fn injected_errors_fail_to_compile_as_is() {
    let engine = CheckingEngine::new();
    let dir = tempfile::tempdir().unwrap();
    for name in ["missing_brace", "undefined_control_sequence", "unescaped_percent", "unfixable"] {
        let src = BeamerSource::parse(read_fixture(&format!("broken/{name}.tex"))).unwrap();
        let report = engine.compile(&src, &dir.path().join(name)).unwrap();
        assert!(!report.success, "{name} compiled");
        assert!(report.first_error.is_some(), "{name}: no error parsed from log");
    }
}

#[test]
fn repair_loop_converges_on_each_injected_error() {
    let engine = CheckingEngine::new();
    for (name, hint) in INJECTED {
        let dir = tempfile::tempdir().unwrap();
        let broken = BeamerSource::parse(read_fixture(&format!("broken/{name}.tex"))).unwrap();
        let fixed = read_fixture(&format!("broken/{name}.fixed.tex"));
        let (llm, prompts) = repairer(fixed.clone());
        let logs = dir.path().to_path_buf();
        let out = build_with_repair(&llm, &engine, broken, &dir.path().join("build"), 3, &|k| logs.join(format!("compile-{k}.log")))
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(out.report.success);
        assert_eq!(out.attempts, 1, "{name}");
        assert_eq!(out.source.raw, fixed);
        assert_eq!(out.logs.len(), 2);
        assert!(out.logs.iter().all(|p| p.exists()));
        let prompts = prompts.lock().unwrap();
        assert!(prompts[0].contains(hint), "{name}: repair prompt lacks hint `{hint}`");
        assert!(prompts[0].contains("deck.tex:"), "{name}: repair prompt lacks the error line");
    }
}

#[test]
fn unfixable_deck_exhausts_attempts_and_keeps_its_log() {
    let engine = CheckingEngine::new();
    let dir = tempfile::tempdir().unwrap();
    let raw = read_fixture("broken/unfixable.tex");
    let (llm, _) = repairer(raw.clone());
    let logs = dir.path().to_path_buf();
    let err = build_with_repair(&llm, &engine, BeamerSource::parse(raw).unwrap(), &dir.path().join("b"), 3, &|k| {
        logs.join(format!("compile-{k}.log"))
    })
    .unwrap_err();
    match err {
        CodegenError::MaxAttemptsExceeded { attempts, last_error, last_log } => {
            assert_eq!(attempts, 3);
            assert!(last_error.contains("Undefined control sequence"), "{last_error}");
            let log = std::fs::read_to_string(last_log.unwrap()).unwrap();
            assert!(log.contains("\\neuropeptidefigure"), "{log}");
        }
        other => panic!("expected MaxAttemptsExceeded, got {other}"),
    }
    assert_eq!(llm.calls(), 3);
    assert_eq!(engine.calls(), 4);
}

#[test]
fn repair_that_drops_frames_is_discarded() {
    let engine = CheckingEngine::new();
    let dir = tempfile::tempdir().unwrap();
    let broken = read_fixture("broken/missing_brace.tex");
    let gutted = "\\documentclass{beamer}\n\\begin{document}\n\\begin{frame}{Only}\nx\n\\end{frame}\n\\end{document}\n";
    let fixed = read_fixture("broken/missing_brace.fixed.tex");
    let llm = ScriptedLlm::queue([gutted.to_string(), fixed.clone()]);
    let logs = dir.path().to_path_buf();
    let out = build_with_repair(&llm, &engine, BeamerSource::parse(broken).unwrap(), &dir.path().join("b"), 3, &|k| {
        logs.join(format!("compile-{k}.log"))
    })
    .unwrap();
    assert_eq!(out.attempts, 2);
    assert_eq!(out.source.raw, fixed);
}

/// Frames and cite keys found with plain regexes over the raw text.
fn oracle_frames(raw: &str) -> Vec<(String, usize, Vec<String>)> {
    let frame = regex::Regex::new(r"(?s)\\begin\{frame\}(?:\[[^\]]*\])?(?:\{([^}]*)\})?(.*?)\\end\{frame\}").unwrap();
    let cite = regex::Regex::new(r"\\cite\{([^}]*)\}").unwrap();
    let nocomment = regex::Regex::new(r"(?m)(^|[^\\])%.*$").unwrap();
    let raw = nocomment.replace_all(raw, "$1");
    frame
        .captures_iter(&raw)
        .map(|c| {
            let body = &c[2];
            let keys = cite
                .captures_iter(body)
                .flat_map(|k| k[1].split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>())
                .collect();
            (c.get(1).map_or("", |m| m.as_str()).to_string(), body.matches("\\item").count(), keys)
        })
        .collect()
}

#[test]
fn authored_deck_passes_lint_and_agrees_with_regex_counts() {
    let raw = read_fixture("enhance/after.tex");
    let deck = BeamerSource::parse(raw.clone()).unwrap();
    let findings = lint(&deck);
    assert!(!has_errors(&findings), "{findings:?}");
    let oracle = oracle_frames(&raw);
    assert_eq!(oracle.len(), deck.frames.len());
    let bib: Vec<&str> = deck.bib_keys();
    for (f, (title, items, keys)) in deck.frames.iter().zip(&oracle) {
        if f.kind == FrameKind::Content {
            assert_eq!(f.bullets.len(), *items, "frame {title}");
            assert!((3..=5).contains(items), "frame {title} has {items} bullets");
        }
        for k in keys {
            assert!(bib.contains(&k.as_str()), "{k} unresolved");
        }
    }
}

#[test]
fn unresolved_cite_is_an_error() {
    let raw = read_fixture("enhance/before.tex").replacen("\\cite{npe-ch04-01", "\\cite{nowhere2020", 1);
    let findings = lint(&BeamerSource::parse(raw).unwrap());
    assert!(findings.iter().any(|f| f.rule == LintRule::UnresolvedCiteKey && f.detail.contains("nowhere2020")));
    assert!(has_errors(&findings));
}

fn word() -> impl Strategy<Value = String> {
    "[A-Za-z][a-z]{0,8}"
}

fn deck_strategy() -> impl Strategy<Value = String> {
    let bullet = (prop::collection::vec(word(), 1..6), prop::option::of("[a-z]{2,6}20[0-9]{2}"));
    let frame = (prop::collection::vec(word(), 1..4), prop::collection::vec(bullet, 0..6), any::<bool>());
    (prop::collection::vec(frame, 1..6), "[ \n%a-z]{0,12}").prop_map(|(frames, gap)| {
        let gap = gap.replace('%', "\n% ");
        let mut s = String::from("\\documentclass{beamer}\n\\title{T}\n\\begin{document}\n");
        for (title, bullets, fragile) in frames {
            s.push_str(if fragile { "\\begin{frame}[fragile]{" } else { "\\begin{frame}{" });
            s.push_str(&title.join(" "));
            s.push_str("}\n  \\begin{itemize}\n");
            for (words, key) in bullets {
                s.push_str("    \\item ");
                s.push_str(&words.join(" "));
                if let Some(k) = key {
                    s.push_str(&format!(" \\cite{{{k}}}"));
                }
                s.push('\n');
            }
            s.push_str("  \\end{itemize}\n\\end{frame}\n");
            s.push_str(&gap);
            s.push('\n');
        }
        s.push_str("\\end{document}\n");
        s
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parse_reassemble_round_trip(raw in deck_strategy()) {
        let deck = BeamerSource::parse(raw.clone()).unwrap();
        prop_assert_eq!(deck.reassemble(), raw.clone());
        let oracle = oracle_frames(&raw);
        prop_assert_eq!(deck.frames.len(), oracle.len());
        for (f, (title, items, keys)) in deck.frames.iter().zip(&oracle) {
            prop_assert_eq!(&f.title, title);
            prop_assert_eq!(f.bullets.len(), *items);
            prop_assert_eq!(&f.cite_keys, keys);
        }
    }
}
