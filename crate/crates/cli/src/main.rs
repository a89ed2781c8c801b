mod commands;
mod config;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cdsm::ingest::Scheme;
use cdsm::stats::{Correction, CorrectionScope};

use config::{ConfigFile, Settings};

/// Differential sequence mining on programming-process logs.
#[derive(Debug, Parser)]
#[command(name = "cdsm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Options,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a ProgSnap2 event table into categorized sequences.
    Ingest,
    /// Mine and classify differential patterns for one trial.
    Mine,
    /// Build raw and discretized pattern features from mined patterns.
    Featurize,
    /// Train the boosted-stump model on the discretized features.
    Train,
    /// Cross-validate CDSM and the baselines for one trial.
    Evaluate,
    /// Rank the labeled patterns and write the interpretation report.
    Report,
    /// Generate a synthetic dataset with planted patterns.
    Synth(SynthArgs),
    /// Run every stage for trials M1..MK and print the summary table.
    Pipeline,
}

/// Options shared by all subcommands. Each one can also be set in the
/// config file under the same name without the leading dashes.
#[derive(Debug, Default, Args)]
pub struct Options {
    /// Flat `key = value` config file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// ProgSnap2 event table (.csv) or ingested sequences (.jsonl).
    #[arg(long, global = true, value_name = "FILE")]
    events: Option<PathBuf>,
    /// Grade file: SubjectID plus one column per assignment.
    #[arg(long, global = true, value_name = "FILE")]
    labels: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Event categorization scheme: general or contextual.
    #[arg(long, global = true)]
    scheme: Option<Scheme>,
    /// Minimum fraction of a group's sequences that must contain a pattern.
    #[arg(long, global = true)]
    min_support: Option<f64>,
    /// Largest number of events allowed between consecutive pattern events.
    #[arg(long, global = true)]
    max_gap: Option<usize>,
    /// Longest pattern mined.
    #[arg(long, global = true)]
    max_length: Option<usize>,
    /// Significance level for both test layers.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Boosting rounds.
    #[arg(long, global = true)]
    rounds: Option<usize>,
    /// Seed for fold assignment (and for `synth`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Trial index i: use assignments A1..Ai (for `pipeline`, run M1..Mi).
    #[arg(long, global = true)]
    trial: Option<usize>,
    /// Fraction of patterns per group kept in the report.
    #[arg(long, global = true)]
    top_fraction: Option<f64>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Multiple-comparison correction: none, bonferroni or bh.
    #[arg(long, global = true)]
    correction: Option<Correction>,
    /// Correction family: assignment or trial.
    #[arg(long, global = true)]
    correction_scope: Option<CorrectionScope>,
    /// Apply Yates' continuity correction to the chi-square layer.
    #[arg(long, global = true)]
    yates: bool,
}

#[derive(Debug, Default, Args)]
pub struct SynthArgs {
    #[arg(long)]
    n_high: Option<usize>,
    #[arg(long)]
    n_low: Option<usize>,
    /// Comma-separated assignment ids.
    #[arg(long)]
    assignments: Option<String>,
    #[arg(long)]
    length_mean: Option<f64>,
    #[arg(long)]
    length_spread: Option<f64>,
    /// Planted pattern, e.g. `FH@0.8,0.2:EDIT-PST VAR FILE` or
    /// `DL@1,0,3:FILE EDIT-DEL VAR`. Repeatable.
    #[arg(long)]
    plant: Vec<String>,
}

/// A failed invocation: bad input or parameters (exit 1) or a filesystem
/// problem (exit 2).
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Io(String),
}

impl Failure {
    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        Failure::Io(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Io(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Io(m) => f.write_str(m),
        }
    }
}

impl From<cdsm::Error> for Failure {
    fn from(e: cdsm::Error) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

fn init_threads(threads: Option<usize>) -> Result<(), Failure> {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot configure {n} threads: {e}")))?;
    }
    #[cfg(not(feature = "parallel"))]
    if threads.is_some() {
        log::warn!("--threads has no effect in a build without the parallel feature");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = match &cli.opts.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let settings = Settings::resolve(&cli.opts, &config)?;
    init_threads(settings.threads)?;
    match &cli.command {
        Command::Ingest => commands::ingest(&settings),
        Command::Mine => commands::mine(&settings),
        Command::Featurize => commands::featurize(&settings),
        Command::Train => commands::train(&settings),
        Command::Evaluate => commands::evaluate(&settings),
        Command::Report => commands::report(&settings),
        Command::Synth(args) => {
            commands::synth(&config::synth_config(args, &settings, &config)?, &settings)
        }
        Command::Pipeline => commands::pipeline(&settings),
    }
}

fn one_line(message: &str) -> String {
    message.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            eprintln!("cdsm: {}", one_line(first.trim_start_matches("error: ")));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cdsm: {}", one_line(&e.to_string()));
            ExitCode::from(e.exit_code())
        }
    }
}
