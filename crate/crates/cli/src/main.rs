use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, bad inputs, failed validation. Exit code 2.
    Usage(String),
    /// Backend or filesystem trouble. Exit code 3.
    Env(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Env(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "dscre",
    version,
    about = "Domain-specific Chinese relation extraction toolkit"
)]
struct Cli {
    /// Config file of `key = value` lines; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

/// `--x` / `--no-x` pairs; the later flag wins.
#[derive(Args, Debug, Default)]
struct Knobs {
    /// Mark entity mentions with brackets (default on).
    #[arg(long, overrides_with = "no_em")]
    em: bool,
    #[arg(long)]
    no_em: bool,
    /// Append the query triplet to the input (default on).
    #[arg(long, overrides_with = "no_at")]
    at: bool,
    #[arg(long)]
    no_at: bool,
    /// Emit triplets rather than bare labels (default on).
    #[arg(long, overrides_with = "no_tr")]
    tr: bool,
    #[arg(long)]
    no_tr: bool,
    #[arg(long)]
    instruction: Option<String>,
}

fn pair(on: bool, off: bool) -> Option<bool> {
    match (on, off) {
        (true, _) => Some(true),
        (_, true) => Some(false),
        _ => None,
    }
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Build an instruction dataset from a dataset split.
    Build {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        split: String,
        #[command(flatten)]
        knobs: Knobs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a seeded fraction of a canonical JSONL file.
    Sample {
        #[arg(long = "in")]
        input: PathBuf,
        /// `0.4`, `40%` or `2/5`.
        #[arg(long)]
        fraction: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Query a backend for every instance of a split and write a run file.
    Infer {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        split: String,
        /// finetuned, classify_then_extract or generate_then_retrieval.
        #[arg(long)]
        paradigm: Option<String>,
        /// Overrides the manifest's relation set.
        #[arg(long)]
        relation_set: Option<PathBuf>,
        #[arg(long)]
        backend_url: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        max_tokens: Option<u64>,
        #[arg(long)]
        timeout_secs: Option<f64>,
        #[arg(long)]
        max_retries: Option<u64>,
        #[arg(long)]
        parallelism: Option<u64>,
        /// chat or completion.
        #[arg(long)]
        wire: Option<String>,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Score a run file against gold instances.
    Eval {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        relation_set: PathBuf,
        #[arg(long)]
        exclude_na: bool,
        /// Write the full report as JSON here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Side-by-side P/R/F1 of several runs on the same gold file.
    Compare {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        relation_set: PathBuf,
        /// `name=path`, repeated.
        #[arg(long = "run", required = true)]
        runs: Vec<String>,
        #[arg(long)]
        exclude_na: bool,
    },
    /// Train a toy LoRA decoder on a copy task and check its gradients.
    LoraDemo {
        #[arg(long)]
        steps: Option<u64>,
        /// Query/key/value width.
        #[arg(long)]
        d: Option<u64>,
        /// Embedding width.
        #[arg(long)]
        k: Option<u64>,
        #[arg(long)]
        rank: Option<u64>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Parse a generated answer into triplets.
    Parse {
        /// Read from standard input when absent.
        text: Option<String>,
        #[arg(long)]
        strict: bool,
    },
    /// Rank relation-set labels against a free-form relation.
    Align {
        relation: String,
        #[arg(long)]
        relation_set: PathBuf,
        #[arg(long, default_value_t = 3)]
        top: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = match &e {
                CliError::Usage(m) | CliError::Env(m) => m,
            };
            eprintln!("error: {msg}");
            ExitCode::from(e.code())
        }
    }
}
