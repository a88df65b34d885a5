use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hmrag::candidate::Source;
use hmrag::config::{defaults_text, Config, CONFIG_ENV};
use hmrag::ingest::{ingest_corpus, read_corpus, Stores};
use hmrag::orchestrator::eval::run_eval;
use hmrag::orchestrator::{Pipeline, QueryTrace};

#[derive(Parser)]
#[command(name = "hmrag", version, about = "Multi-agent retrieval-augmented question answering")]
struct Cli {
    /// Configuration file (key = value lines).
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,

    /// Override one configuration key, e.g. --set graph.tau=0.4
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Caption, chunk, embed, and extract a corpus into a store directory.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Answer one question.
    Query {
        #[command(flatten)]
        run: RunArgs,
        /// Write the trace here instead of stdout; the answer goes to stdout.
        #[arg(long)]
        trace: Option<PathBuf>,
        question: String,
    },
    /// Score a multiple-choice dataset.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Show configuration.
    Config {
        #[arg(long)]
        print_defaults: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    store: PathBuf,
    /// Turn off a retrieval agent (repeatable).
    #[arg(long = "disable-agent", value_name = "vector|graph|web")]
    disabled: Vec<Source>,
    /// Skip arbitration and take one agent's answer (web, then vector, then graph).
    #[arg(long)]
    no_decision: bool,
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let body = serde_json::to_string_pretty(value)?;
    std::fs::write(path, body + "\n").with_context(|| format!("writing {}", path.display()))
}

async fn pipeline(cfg: Config, run: &RunArgs) -> Result<Pipeline> {
    let mut pcfg = cfg.pipeline.clone();
    for s in &run.disabled {
        pcfg.enabled_agents.remove(s);
    }
    if run.no_decision {
        pcfg.decision_enabled = false;
    }
    let stores = Stores::load(&run.store).with_context(|| format!("loading store {}", run.store.display()))?;
    let backends = cfg.build_backends()?;
    Ok(Pipeline::new(Arc::new(stores), backends, cfg.prompts, pcfg).await?)
}

fn emit_trace(trace: &QueryTrace, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => write_json(p, trace),
        None => {
            println!("{}", serde_json::to_string_pretty(trace)?);
            Ok(())
        }
    }
}

async fn run(cli: Cli) -> Result<ExitCode> {
    if let Command::Config { print_defaults } = cli.command {
        if !print_defaults {
            bail!("nothing to do; pass --print-defaults");
        }
        print!("{}", defaults_text());
        return Ok(ExitCode::SUCCESS);
    }
    let cfg = Config::load(cli.config.as_deref(), &cli.overrides).context("loading configuration")?;

    match cli.command {
        Command::Ingest { corpus, out } => {
            let records = read_corpus(&corpus)?;
            let backends = cfg.build_backends()?;
            let output = ingest_corpus(
                &records,
                backends.chat.as_ref(),
                backends.embedder.as_ref(),
                backends.captioner.as_ref(),
                &cfg.prompts,
                &cfg.ingest,
            )
            .await?;
            output.stores.save(&out)?;
            let summary = serde_json::json!({
                "documents": output.documents.len(),
                "chunks": output.chunks,
                "entities": output.stores.graph.entities().len(),
                "triplets": output.stores.graph.triplets().len(),
                "extraction_skipped": output.extraction.skipped,
                "out": out,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Query { run, trace, question } => {
            let p = pipeline(cfg, &run).await?;
            match p.run_query(&question).await {
                Ok(t) => {
                    emit_trace(&t, trace.as_deref())?;
                    if trace.is_some() {
                        println!("{}", t.final_answer.as_deref().unwrap_or_default());
                    }
                    Ok(ExitCode::SUCCESS)
                }
                Err(f) => {
                    emit_trace(&f.trace, trace.as_deref())?;
                    eprintln!("error: {}", f.error);
                    Ok(ExitCode::FAILURE)
                }
            }
        }
        Command::Eval { run, dataset, report } => {
            let p = pipeline(cfg, &run).await?;
            let r = run_eval(&p, &dataset).await?;
            write_json(&report, &r)?;
            println!(
                "accuracy {:.4} ({}/{}), skipped {}",
                r.accuracy,
                r.correct,
                r.total,
                r.skipped.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Config { .. } => unreachable!(),
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
