use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use faqrag_core::generation::Pipeline;
use faqrag_core::harness::{
    self, engine::chat_client, engine::token_embedder, evaluate, render, run_systems, systems, Engine,
    Report, ReportFormat, RunArtifacts, RunConfig,
};
use faqrag_core::jsonl::write_jsonl;
use faqrag_core::load_test_collection;
use faqrag_core::metrics::EvalReport;
use faqrag_core::remote::InFlightLimiter;

#[derive(Parser)]
#[command(name = "faqrag", version, about = "FAQ answering: intent matching and retrieval-augmented generation")]
struct Cli {
    /// JSON run configuration. Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Log verbosity (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Selection {
    /// Pipeline(s) to use; overrides the config.
    #[arg(long = "pipeline", value_parser = parse_pipeline)]
    pipelines: Vec<Pipeline>,

    /// Ranking cutoff(s); overrides the config.
    #[arg(long = "cutoff")]
    cutoffs: Vec<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the collection, build every configured model and write them to disk.
    Index {
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank passages for a query.
    Search {
        #[arg(long, value_parser = parse_pipeline, default_value = "rag-bm25")]
        pipeline: Pipeline,
        #[arg(long, default_value_t = 5)]
        cutoff: usize,
        query: String,
    },
    /// Answer one question.
    Ask {
        #[arg(long, value_parser = parse_pipeline, default_value = "ib")]
        pipeline: Pipeline,
        #[arg(long, default_value_t = 3)]
        cutoff: usize,
        #[arg(long, default_value = "table")]
        format: ReportFormat,
        question: String,
    },
    /// Generate paraphrases of each Known question with the configured paraphraser.
    Augment {
        /// Output JSONL file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        max_n: usize,
    },
    /// Answer every question with every selected system and write run artifacts.
    RunBatch {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        selection: Selection,
    },
    /// Score run artifacts against the collection.
    Eval {
        /// Directory written by `run-batch`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "table")]
        format: ReportFormat,
    },
    /// Significance tests across one or more evaluation reports.
    Compare {
        /// `eval.json` files written by `eval`.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "table")]
        format: ReportFormat,
    },
    /// Serve the chat API and the web client.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Directory with the built web client.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        #[command(flatten)]
        selection: Selection,
    },
}

fn parse_pipeline(s: &str) -> Result<Pipeline, String> {
    s.parse().map_err(|e: faqrag_core::Error| e.to_string())
}

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn apply(config: &mut RunConfig, selection: &Selection) -> anyhow::Result<()> {
    if !selection.pipelines.is_empty() {
        config.pipelines = selection.pipelines.clone();
    }
    if !selection.cutoffs.is_empty() {
        config.cutoffs = selection.cutoffs.clone();
    }
    config.validate()?;
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn json<T: serde::Serialize>(value: &T) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Index { out } => {
            let collection = load_test_collection(&config.collection)?;
            let report = collection.validate();
            let counts = collection.type_counts();
            println!(
                "{} passages, {} questions (known {}, inferred {}, out-of-KB {}), fingerprint {}",
                collection.passages().len(),
                counts.total(),
                counts.known,
                counts.inferred,
                counts.out_of_kb,
                collection.fingerprint()
            );
            if !report.is_empty() {
                print!("{report}");
                bail!("collection has {} invariant violations", report.len());
            }
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let engine = Engine::with_collection(config, collection)?;
            if let Some(index) = engine.bm25_index() {
                write_file(&out.join("index.json"), &json(index)?)?;
                println!("bm25 index: {} terms, avgdl {:.2}", index.postings.len(), index.avg_doc_length);
            }
            if let Some(model) = engine.intent_model() {
                model.save(out.join("intent.json"))?;
                println!("intent model: {} intents", model.intents().len());
            }
            println!("written to {}", out.display());
        }
        Command::Search {
            pipeline,
            cutoff,
            query,
        } => {
            if pipeline == Pipeline::Ib {
                bail!("search needs a retrieval pipeline (rag-bm25 or rag-dense)");
            }
            config.pipelines = vec![pipeline];
            let engine = Engine::build(config)?;
            let (_, ranking) = engine.answer(pipeline, "query", &query, cutoff)?;
            for (i, e) in ranking.entries.iter().enumerate() {
                let text = engine.collection().passages().get(&e.passage_id).map_or("", |p| p.text.as_str());
                println!("{:>2}  {:<8} {:>9.4}  {}", i + 1, e.passage_id, e.score, text);
            }
        }
        Command::Ask {
            pipeline,
            cutoff,
            format,
            question,
        } => {
            config.pipelines = vec![pipeline];
            let engine = Engine::build(config)?;
            let (answer, ranking) = engine.answer(pipeline, "ask", &question, cutoff)?;
            match format {
                ReportFormat::Json => print!("{}", json(&serde_json::json!({ "answer": answer, "ranking": ranking }))?),
                ReportFormat::Table => {
                    println!("{}", answer.text);
                    for (i, e) in ranking.entries.iter().enumerate() {
                        println!("  [{}] {} ({:.4})", i + 1, e.passage_id, e.score);
                    }
                }
            }
        }
        Command::Augment { out, max_n } => {
            let Some(paraphraser) = config.paraphraser.clone() else {
                bail!("augment needs a `paraphraser` endpoint in the config");
            };
            let collection = load_test_collection(&config.collection)?;
            let limiter = InFlightLimiter::new(paraphraser.remote.max_in_flight);
            let client = chat_client(&paraphraser, &limiter)?;
            let records = harness::augment(&collection, client.as_ref(), max_n)?;
            write_jsonl(&out, &records)?;
            println!("wrote {} topics to {}", records.len(), out.display());
        }
        Command::RunBatch { out, selection } => {
            apply(&mut config, &selection)?;
            let selected = systems(&config.pipelines, &config.cutoff_set());
            let engine = Engine::build(config)?;
            let artifacts = run_systems(&engine, &selected, &out)?;
            for s in &artifacts.manifest.systems {
                println!("{:<12} {:>4} answers, {} failures", s.label, s.questions, s.failures);
            }
            let failures = artifacts.manifest.failures();
            if failures > 0 {
                eprintln!("warning: {failures} questions failed; see the answer files");
            }
        }
        Command::Eval { run, out, format } => {
            let artifacts = RunArtifacts::open(&run)?;
            let collection = load_test_collection(&config.collection)?;
            let limiter = InFlightLimiter::new(4);
            let embedder = token_embedder(&config.metrics.token_embedder, &limiter)?;
            let report = evaluate(&artifacts, &collection, &config.metrics, embedder.as_ref())?;
            write_file(&out.join("eval.json"), &json(&report)?)?;
            let rendered = Report::build(std::slice::from_ref(&report), config.alpha)?;
            write_file(&out.join("eval.txt"), &render(&rendered, ReportFormat::Table)?)?;
            print!("{}", render(&rendered, format)?);
        }
        Command::Compare {
            reports,
            alpha,
            out,
            format,
        } => {
            let alpha = alpha.unwrap_or(config.alpha);
            let loaded = reports
                .iter()
                .map(|p| -> anyhow::Result<EvalReport> {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            let report = Report::build(&loaded, alpha)?;
            write_file(&out.join("report.json"), &render(&report, ReportFormat::Json)?)?;
            write_file(&out.join("report.txt"), &render(&report, ReportFormat::Table)?)?;
            print!("{}", render(&report, format)?);
        }
        Command::Serve {
            addr,
            static_dir,
            selection,
        } => {
            apply(&mut config, &selection)?;
            faqrag_server::serve_blocking(config, addr, static_dir)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level)),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
