use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dialogic::book::{read_bundle_with_status, write_bundle, BookStatus, Library};
use dialogic::config::{build_service, ServiceConfig};
use dialogic::dashboard::{compute_dashboard, KnowledgeRule};
use dialogic::fixtures;
use dialogic::grade::GradeLevel;
use dialogic::knowledge_base::{load_knowledge_graph_file, KnowledgeGraph};
use dialogic::learner::grade_for_age;
use dialogic::persistence::EventLog;
use dialogic::providers::http::HttpEmbedder;
use dialogic::providers::Embedder;
use dialogic::retrieval::Retriever;
use dialogic::session::render_transcript;

#[derive(Parser)]
#[command(name = "dialogic", version, about = "Dialogic story-reading companion service and tools")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Knowledge base JSON file (defaults to the bundled fixture).
    #[arg(long, global = true)]
    kb: Option<PathBuf>,
    /// Directory for books, event logs and audio.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Use deterministic mock providers; no network access.
    #[arg(long, global = true)]
    offline: bool,
    /// Similarity threshold for knowledge matching.
    #[arg(long, global = true)]
    threshold: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Knowledge base tools.
    Kb {
        #[command(subcommand)]
        command: KbCommand,
    },
    /// Match a story section against the knowledge base.
    Match {
        /// Child age in years; sets the grade cap.
        #[arg(long, conflicts_with = "grade")]
        age: Option<u8>,
        /// Grade cap, e.g. Kindergarten or Grade2.
        #[arg(long)]
        grade: Option<GradeLevel>,
        /// Section text; read from stdin when omitted.
        text: Option<String>,
    },
    /// Book bundle tools.
    Book {
        #[command(subcommand)]
        command: BookCommand,
    },
    /// Print a child's dashboard as JSON.
    Dashboard {
        child_id: String,
        #[arg(long, value_enum)]
        knowledge_rule: Option<RuleArg>,
        #[arg(long)]
        include_setup_time: bool,
    },
    /// Print the transcript of a logged session.
    Transcript { session_id: String },
    /// Run a bundled or file-based scripted session and print its transcript.
    Replay {
        /// Bundled script name or path to a script JSON file.
        script: String,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
    },
}

#[derive(Subcommand)]
enum KbCommand {
    /// Load the knowledge base and print entry counts per grade.
    Validate,
}

#[derive(Subcommand)]
enum BookCommand {
    /// Import a bundle directory into the library.
    Import { dir: PathBuf },
    /// Export a library book as a bundle directory.
    Export { id: String, dir: PathBuf },
    /// List library books.
    List,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum RuleArg {
    Surfaced,
    AnsweredCorrectly,
}

impl GlobalArgs {
    fn config(&self) -> Result<ServiceConfig> {
        let mut cfg = match &self.config {
            Some(path) => ServiceConfig::load(path)?,
            None => ServiceConfig::default(),
        };
        if self.kb.is_some() {
            cfg.kb = self.kb.clone();
        }
        if self.data_dir.is_some() {
            cfg.data_dir = self.data_dir.clone();
        }
        if self.offline {
            cfg.offline = true;
        }
        if let Some(t) = self.threshold {
            cfg.retrieval.threshold = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn graph(cfg: &ServiceConfig) -> Result<KnowledgeGraph> {
    Ok(match &cfg.kb {
        Some(path) => load_knowledge_graph_file(path).with_context(|| format!("loading {}", path.display()))?,
        None => fixtures::knowledge_graph(),
    })
}

fn data_dir(cfg: &ServiceConfig) -> Result<PathBuf> {
    cfg.data_dir.clone().ok_or_else(|| anyhow!("this command needs --data-dir (or data_dir in the config file)"))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = cli.global.config()?;
    match cli.command {
        Command::Kb { command: KbCommand::Validate } => {
            let g = graph(&cfg)?;
            println!("{} entries", g.len());
            for (grade, n) in g.histogram() {
                println!("  {:<13} {n}", grade.display_name());
            }
        }
        Command::Match { age, grade, text } => {
            let cap = match (age, grade) {
                (Some(a), _) => grade_for_age(a)?,
                (None, Some(g)) => g,
                (None, None) => bail!("give --age or --grade"),
            };
            let text = match text {
                Some(t) => t,
                None => std::io::read_to_string(std::io::stdin())?,
            };
            let embedder: Arc<dyn Embedder> = if cfg.offline {
                Arc::new(fixtures::embedder())
            } else {
                let c = cfg.providers.embed.clone().ok_or_else(|| anyhow!("no embed provider configured; use --offline"))?;
                Arc::new(HttpEmbedder::new(c)?)
            };
            let g = Arc::new(graph(&cfg)?);
            let retriever = Retriever::new(g.clone(), embedder);
            let matches = retriever.match_section("cli", &text, cap, &cfg.retrieval_config())?;
            for m in matches {
                let statement = g.get(&m.entry_id).map(|e| e.statement.as_str()).unwrap_or("");
                println!(
                    "{}",
                    serde_json::json!({
                        "entry_id": m.entry_id, "grade": m.grade, "keyword": m.keyword.surface,
                        "similarity": m.similarity, "statement": statement,
                    })
                );
            }
        }
        Command::Book { command } => {
            let library = Library::open(data_dir(&cfg)?.join("books"))?;
            match command {
                BookCommand::Import { dir } => {
                    let (book, status) = read_bundle_with_status(&dir)?;
                    let id = book.id.clone();
                    match status {
                        BookStatus::Confirmed => library.add_confirmed(book)?,
                        BookStatus::Draft => library.add_draft(book)?,
                    }
                    println!("imported {id}");
                }
                BookCommand::Export { id, dir } => {
                    let entry = library.get(&id).ok_or_else(|| anyhow!("book `{id}` not found"))?;
                    write_bundle(&entry.book, &dir)?;
                    println!("exported {id} to {}", dir.display());
                }
                BookCommand::List => {
                    for e in library.list() {
                        println!("{}\t{:?}\t{} pages\t{}", e.book.id, e.status, e.book.page_count(), e.book.title);
                    }
                }
            }
        }
        Command::Dashboard { child_id, knowledge_rule, include_setup_time } => {
            let log = EventLog::open(data_dir(&cfg)?.join("events"))?;
            let mut opts = cfg.dashboard_options();
            opts.include_setup_time |= include_setup_time;
            if let Some(rule) = knowledge_rule {
                opts.knowledge_rule = match rule {
                    RuleArg::Surfaced => KnowledgeRule::Surfaced,
                    RuleArg::AnsweredCorrectly => KnowledgeRule::AnsweredCorrectly,
                };
            }
            opts.now = Some(chrono::Utc::now());
            let summary = compute_dashboard(&child_id, &log.child_streams(&child_id), &opts);
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Transcript { session_id } => {
            let log = EventLog::open(data_dir(&cfg)?.join("events"))?;
            let events = log.stream(&session_id);
            if events.is_empty() {
                bail!("no session `{session_id}` in the log");
            }
            print!("{}", render_transcript(&events));
        }
        Command::Replay { script } => {
            let script = match fixtures::session_script(&script) {
                Some(s) => s,
                None => {
                    let raw = std::fs::read_to_string(&script).with_context(|| format!("reading {script}"))?;
                    fixtures::SessionScript::from_json(&raw)?
                }
            };
            let run = fixtures::run_script(&script)?;
            print!("{}", render_transcript(&run.events));
        }
        Command::Serve { port } => {
            let mut cfg = cfg;
            if let Some(p) = port {
                cfg.port = p;
            }
            let service = Arc::new(build_service(&cfg)?);
            let addr = std::net::SocketAddr::from(([0, 0, 0, 0], cfg.port));
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(dialogic::server::serve(service, addr, |a| {
                println!("dialogic listening on http://{a}{}", if cfg.offline { " (offline)" } else { "" });
            }))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "dialogic=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
