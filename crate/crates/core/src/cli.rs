//! Command-line interface: one subcommand per pipeline step plus `pipeline`
//! to run them all. Exit codes: 0 success, 1 bad input (including argument
//! parse failures), 2 runtime failure.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind as ClapErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::config::PipelineConfig;
use crate::error::{ErrorKind, Result};
use crate::instructions::InstructionGroup;
use crate::par;
use crate::pipeline::{self, Workdir};

#[derive(Parser)]
#[command(
    name = "hetriever",
    version,
    about = "Instruction-aware dense retrieval over heterogeneous evidence"
)]
struct Cli {
    /// TOML config file (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory holding all pipeline artifacts.
    #[arg(long, global = true, default_value = "workdir")]
    workdir: PathBuf,
    /// Override the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the data-parallel paths (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and question set.
    Synth,
    /// Import corpus and question files into the workdir.
    Ingest(SourceArgs),
    /// Build (structured evidence, verbalized sentence) pairs.
    Pairs,
    /// Build the vocabulary and pretrain the encoder by masked reconstruction.
    Pretrain,
    /// Align structured evidence with its verbalized text.
    Align,
    /// Fine-tune on instruction-prefixed queries with typed hard negatives.
    Finetune,
    /// Encode the corpus into a searchable index.
    Index,
    /// Query the index.
    Search(SearchArgs),
    /// Score the holdout questions; write run and metric files.
    Eval,
    /// Print corpus composition statistics.
    Stats,
    /// Run every step in order (synthesizing unless a source is configured).
    Pipeline(SourceArgs),
}

#[derive(Args)]
struct SourceArgs {
    /// Corpus JSONL to import.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Questions JSONL to import.
    #[arg(long)]
    questions: Option<PathBuf>,
}

#[derive(Args)]
struct SearchArgs {
    /// Question text.
    #[arg(long)]
    query: String,
    /// Instruction group: I_All, I_Text, I_KG, I_Table or I_Info.
    #[arg(long, default_value = "I_All")]
    group: String,
    /// Question domain (books, movies, music, tvseries, football) or empty.
    #[arg(long, default_value = "")]
    domain: String,
    /// Number of results.
    #[arg(long, default_value_t = 10)]
    k: usize,
}

/// Parse and execute, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    par::init_threads(cli.threads);
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e.kind() {
                ErrorKind::Validation => 1,
                ErrorKind::Runtime => 2,
            }
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let wd = Workdir::acquire(&cli.workdir)?;
    match cli.command {
        Command::Synth => pipeline::cmd_synth(&wd, &cfg),
        Command::Ingest(a) => {
            pipeline::cmd_ingest(&wd, &cfg, a.corpus.as_deref(), a.questions.as_deref())
        }
        Command::Pairs => pipeline::cmd_pairs(&wd, &cfg),
        Command::Pretrain => pipeline::cmd_pretrain(&wd, &cfg),
        Command::Align => pipeline::cmd_align(&wd, &cfg),
        Command::Finetune => pipeline::cmd_finetune(&wd, &cfg),
        Command::Index => pipeline::cmd_index(&wd, &cfg),
        Command::Search(a) => {
            let group = InstructionGroup::parse(&a.group)?;
            pipeline::cmd_search(&wd, &cfg, &a.query, group, &a.domain, a.k)
        }
        Command::Eval => pipeline::cmd_eval(&wd, &cfg),
        Command::Stats => pipeline::cmd_stats(&wd),
        Command::Pipeline(a) => {
            pipeline::cmd_pipeline(&wd, &cfg, a.corpus.as_deref(), a.questions.as_deref())
        }
    }
}
