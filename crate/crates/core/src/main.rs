use std::fs;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use slidesmith::config::{load_corpus, Settings};
use slidesmith::corpus::{read_jsonl, Bm25Params, CorpusIndex};
use slidesmith::orchestrator::{JobConfig, JobState, JobStore, PipelineStage, RevisionRequest, RevisionScope, SourceChoice};
use slidesmith::service::{read_artifact, ApiJobView, ArtifactKind, JobService};

/// Topic in, compiled Beamer deck out.
///
/// Settings come from SLIDESMITH_* environment variables (see README).
#[derive(Parser)]
#[command(name = "slidesmith", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a new job to completion.
    Generate {
        #[arg(long)]
        topic: String,
        #[arg(long, default_value = "auto")]
        source: SourceChoice,
        #[arg(long)]
        max_results: Option<usize>,
        #[arg(long)]
        selection_limit: Option<usize>,
        #[arg(long)]
        max_repair_attempts: Option<u32>,
        #[arg(long)]
        no_enhance: bool,
        #[arg(long)]
        json: bool,
    },
    /// Continue an interrupted job from its last persisted stage.
    Resume {
        id: String,
        #[arg(long)]
        json: bool,
    },
    /// Show a job's current state.
    Status {
        id: String,
        #[arg(long)]
        json: bool,
    },
    /// Copy an artifact to a file or stdout.
    Fetch {
        id: String,
        /// keywords, sources, candidates, plan, plan_json, tex, pdf, student_pdf, log, transcripts
        kind: String,
        #[arg(long)]
        version: Option<u32>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Request a revision and rerun the affected stages.
    Revise {
        id: String,
        /// plan, content or enhancement
        #[arg(long)]
        scope: String,
        #[arg(long)]
        text: String,
        /// Comma-separated 1-based slide numbers.
        #[arg(long, value_delimiter = ',')]
        slides: Vec<usize>,
        #[arg(long)]
        json: bool,
    },
    /// Textbook corpus tools.
    Corpus {
        #[command(subcommand)]
        command: CorpusCommand,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Index a JSONL snippet file.
    Build {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = 1.2)]
        k1: f64,
        #[arg(long, default_value_t = 0.75)]
        b: f64,
    },
    /// Rank snippets for a query.
    Query {
        index: PathBuf,
        query: String,
        #[arg(short, default_value_t = 5)]
        k: usize,
    },
}

fn parse_scope(s: &str) -> Result<RevisionScope, String> {
    match s.to_ascii_lowercase().as_str() {
        "plan" => Ok(RevisionScope::Plan),
        "content" => Ok(RevisionScope::Content),
        "enhancement" => Ok(RevisionScope::Enhancement),
        other => Err(format!("unknown revision scope `{other}`")),
    }
}

fn report(state: &JobState, json: bool) -> Result<ExitCode, String> {
    let view = ApiJobView::project(state);
    if json {
        println!("{}", serde_json::to_string_pretty(&view).map_err(|e| e.to_string())?);
    } else {
        println!("job {}  stage {}  version {}", view.id, view.stage, view.version);
        for t in &state.history {
            println!(
                "  [{}] v{} {} -> {}{}",
                t.index,
                t.version,
                t.from,
                t.to,
                t.detail.as_deref().map(|d| format!("  ({d})")).unwrap_or_default()
            );
        }
        if let Some(f) = &state.failure {
            println!("failed at {}: {}", f.stage, f.message);
        }
        if let Some(pdf) = &state.deck().pdf {
            println!("pdf: {}", pdf);
        }
    }
    Ok(if state.stage == PipelineStage::Failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    let settings = Settings::from_env()?;
    match cli.command {
        Command::Generate {
            topic,
            source,
            max_results,
            selection_limit,
            max_repair_attempts,
            no_enhance,
            json,
        } => {
            let mut config = JobConfig::new(topic);
            config.source_kind = source;
            config.model_id = settings.model.clone();
            config.enhancement_enabled = !no_enhance;
            if let Some(v) = max_results {
                config.max_results = v;
            }
            if let Some(v) = selection_limit {
                config.selection_limit = v;
            }
            if let Some(v) = max_repair_attempts {
                config.max_repair_attempts = v;
            }
            let orch = settings.orchestrator()?;
            let state = orch.run(config).map_err(|e| e.to_string())?;
            report(&state, json)
        }
        Command::Resume { id, json } => {
            let state = settings.orchestrator()?.resume(&id).map_err(|e| e.to_string())?;
            report(&state, json)
        }
        Command::Status { id, json } => {
            let store = JobStore::open(&settings.jobs_dir).map_err(|e| e.to_string())?;
            let state = store.load(&id).map_err(|e| e.to_string())?;
            report(&state, json).map(|_| ExitCode::SUCCESS)
        }
        Command::Fetch { id, kind, version, out } => {
            let kind: ArtifactKind = kind.parse().map_err(|e: slidesmith::service::ServiceError| e.to_string())?;
            let store = JobStore::open(&settings.jobs_dir).map_err(|e| e.to_string())?;
            let (bytes, _) = read_artifact(&store, &id, kind, version).map_err(|e| e.to_string())?;
            match out {
                Some(path) => fs::write(&path, bytes).map_err(|e| format!("{}: {e}", path.display()))?,
                None => {
                    use std::io::Write;
                    std::io::stdout().write_all(&bytes).map_err(|e| e.to_string())?;
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Revise { id, scope, text, slides, json } => {
            let request = RevisionRequest {
                text,
                scope: parse_scope(&scope)?,
                target_slides: (!slides.is_empty()).then_some(slides),
            };
            let state = settings.orchestrator()?.apply_revision(&id, request).map_err(|e| e.to_string())?;
            report(&state, json)
        }
        Command::Corpus { command } => match command {
            CorpusCommand::Build { input, output, k1, b } => {
                let snippets = read_jsonl(&input).map_err(|e| format!("{}: {e}", input.display()))?;
                let index = CorpusIndex::build(snippets, Bm25Params { k1, b }).map_err(|e| e.to_string())?;
                index.save(&output).map_err(|e| format!("{}: {e}", output.display()))?;
                println!("indexed {} snippets into {}", index.n_docs(), output.display());
                Ok(ExitCode::SUCCESS)
            }
            CorpusCommand::Query { index, query, k } => {
                let index = load_corpus(&index)?;
                for hit in index.top_k(&query, k) {
                    println!("{:>10.4}  {}  {}", hit.score, hit.snippet.id, hit.snippet.source_title);
                }
                Ok(ExitCode::SUCCESS)
            }
        },
        Command::Serve { port, host } => {
            let svc = JobService::new(Arc::new(settings.orchestrator()?));
            let resumed = svc.resume_incomplete();
            if !resumed.is_empty() {
                log::info!("resumed {} interrupted jobs", resumed.len());
            }
            let addr: SocketAddr = format!("{host}:{}", port.unwrap_or(settings.port))
                .parse()
                .map_err(|e| format!("bad listen address: {e}"))?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            rt.block_on(slidesmith::service::serve(svc, addr)).map_err(|e| e.to_string())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
