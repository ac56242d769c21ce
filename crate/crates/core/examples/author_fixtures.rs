//! Records the replay fixtures for the offline "Neurotransmitters" run.
//!
//! Every completion comes from a scripted transport that answers each
//! pipeline prompt with hand-written material from `fixtures/authoring/`.
//! The pipeline itself runs in record mode, so the fixture keys are exactly
//! the prompts a replay run will send.
//!
//!     cargo run --example author_fixtures -- fixtures/replay

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use regex::Regex;

use slidesmith::codegen::checker::CheckingEngine;
use slidesmith::config::load_corpus;
use slidesmith::gateway::{ChatRequest, Completion, FixtureStore, Gateway, Transport, TransportError};
use slidesmith::orchestrator::{JobConfig, JobStore, Orchestrator, PipelineStage, RevisionRequest, RevisionScope};

pub const TOPIC: &str = "Neurotransmitters";
const SELECTED: [&str; 3] = ["fcn-ch05-05", "fcn-ch05-10", "npe-ch04-01"];

struct Author {
    dir: PathBuf,
}

impl Author {
    fn read(&self, name: &str) -> String {
        fs::read_to_string(self.dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
    }

    fn answer(&self, prompt: &str) -> String {
        if prompt.starts_with("You are an expert tasked with planning") {
            self.read("keywords.txt")
        } else if prompt.starts_with("Given the following summaries") {
            let listed: Vec<&str> = Regex::new(r"(?m)^\[([^\]]+)\]")
                .unwrap()
                .captures_iter(prompt)
                .map(|c| c.get(1).unwrap().as_str())
                .collect();
            for key in SELECTED {
                assert!(listed.contains(&key), "candidate {key} not offered; listed {listed:?}");
            }
            SELECTED.map(|k| format!("[{k}]")).join("\n")
        } else if prompt.starts_with("You are tasked with generating a slide-by-slide plan") {
            self.read("plan.txt")
        } else if prompt.starts_with("You are tasked with generating a full LaTeX Beamer") {
            self.deck(prompt)
        } else if prompt.starts_with("You are an expert in scientific presentation design") {
            insert_figure(&slide_code(prompt, "\n\nAdditional Context:"))
        } else if prompt.starts_with("You are an expert enhancing a set of graduate-level slides") {
            insert_comments(&slide_code(prompt, "\n- Additional Context:"))
        } else {
            panic!("no scripted answer for prompt starting {:?}", &prompt[..prompt.len().min(80)])
        }
    }

    fn deck(&self, prompt: &str) -> String {
        let bibitems: Vec<String> = prompt
            .lines()
            .filter(|l| l.starts_with("\\bibitem{"))
            .map(|l| format!("    {l}"))
            .collect();
        assert_eq!(bibitems.len(), SELECTED.len(), "bibliography hint missing from codegen prompt");
        let mut deck = self.read("deck.tex").replace("%%BIBLIOGRAPHY%%", &bibitems.join("\n"));
        if prompt.contains("Instructor revision request") && prompt.contains("slide 7") {
            let anchor = "    \\item \\textbf{Reuptake} and \\textbf{degradation} end the signal \\cite{npe-ch04-01, fcn-ch05-10}\n";
            assert!(deck.contains(anchor));
            deck = deck.replace(
                anchor,
                &format!("{anchor}    \\item Example: acetylcholine is released, binds its receptors and is hydrolysed by acetylcholinesterase \\cite{{fcn-ch05-10}}\n"),
            );
        }
        deck
    }
}

fn slide_code(prompt: &str, end_marker: &str) -> String {
    let start = prompt.find("\\documentclass").expect("slide code in prompt");
    let end = prompt[start..].find(end_marker).map_or(prompt.len(), |p| start + p);
    prompt[start..end].trim_end().to_string() + "\n"
}

fn frame_end_after(deck: &str, title: &str) -> usize {
    let at = deck.find(&format!("{{{title}}}")).unwrap_or_else(|| panic!("frame {title}"));
    at + deck[at..].find("\\end{frame}").unwrap()
}

fn insert_figure(deck: &str) -> String {
    let at = frame_end_after(deck, "Steps of Synaptic Transmission");
    let mut out = deck.to_string();
    out.insert_str(at, "  \\drawpipeline{4}{Synthesis, Storage and release, Receptor binding, Clearance}\n");
    out
}

fn insert_comments(deck: &str) -> String {
    let notes = [
        ("Why Neurotransmitters Matter", "Teaching strategy: ask students which step of transmission a familiar drug such as caffeine or alcohol might act on."),
        ("Amino Acids, Monoamines and Acetylcholine", "Misconception: students often assume each neuron releases a single transmitter; revisit this with co-transmission."),
        ("Ending the Signal", "Lecture flow: this slide sets up the drug examples on the next slide, so pause for questions here."),
    ];
    let mut out = deck.to_string();
    for (title, note) in notes {
        let frame_end = frame_end_after(&out, title);
        let list_end = out[..frame_end].rfind("  \\end{itemize}").unwrap();
        out.insert_str(list_end, &format!("    \\pdfcomment{{{note}}}\n"));
    }
    out
}

impl Transport for Author {
    fn send(&self, request: &ChatRequest) -> Result<Completion, TransportError> {
        Ok(Completion::stop(self.answer(&request.prompt)))
    }
}

fn main() {
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| crate_dir.join("fixtures/replay"));
    let _ = fs::remove_dir_all(&out);
    let fixtures = FixtureStore::open(&out).expect("fixture dir");
    let author = Arc::new(Author {
        dir: crate_dir.join("fixtures/authoring"),
    });
    let gateway = Gateway::record("authoring", author, fixtures);
    let corpus = load_corpus(&crate_dir.join("fixtures/corpus/neuroscience.jsonl")).expect("corpus");
    let jobs = tempfile::tempdir().expect("tempdir");
    let orch = Orchestrator::new(
        JobStore::open(jobs.path()).unwrap(),
        Arc::new(gateway),
        Arc::new(CheckingEngine::new()),
    )
    .with_corpus(Arc::new(corpus));

    let state = orch.run(JobConfig::new(TOPIC)).expect("run");
    assert_eq!(state.stage, PipelineStage::Finalization, "{:?}", state.failure);
    let revisions = [
        (RevisionScope::Content, "Add an example to slide 7", Some(vec![7])),
        (RevisionScope::Plan, "Keep the plan but stress clinical relevance in the conclusion", None),
        (RevisionScope::Enhancement, "Revisit the figures and instructor comments", None),
    ];
    for (scope, text, slides) in revisions {
        let request = RevisionRequest {
            text: text.into(),
            scope,
            target_slides: slides,
        };
        let state = orch.apply_revision(&state.id, request).expect("revision");
        assert_eq!(state.stage, PipelineStage::Finalization, "{:?}", state.failure);
    }
    let n = fs::read_dir(&out).unwrap().count();
    println!("recorded {n} fixtures into {}", out.display());
}
