//! `deskaid`: drives the hazard desk-assessment pipeline stage by stage.
//! Every subcommand reads one JSON config (plus `--set` overrides), writes
//! its artifacts into a fixed layout under `--out`, and leaves a run log
//! sufficient to re-execute it.

mod config;
mod runlog;
mod stages;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::PipelineConfig;
use stages::Ctx;

#[derive(Parser)]
#[command(name = "deskaid", version, about = "Hazard desk assessment from open geodata layers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config JSON; defaults apply for every omitted field.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config field, e.g. --set model.kind=fnn. Values parse
    /// as JSON, falling back to strings. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Run directory that holds every artifact this pipeline writes.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,

    /// Overwrite outputs that already exist.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world with a planted contamination signal.
    Synth(Common),
    /// Draw positive and negative samples and split them train/test.
    Sample(Common),
    /// Turn samples into a feature matrix using the catalog layers.
    Featurize(Common),
    /// Fit the configured model on the training rows.
    Train(Common),
    /// Score held-out rows: report, confusion matrix, ROC curve.
    Evaluate(Common),
    /// Write per-sample probabilities for the whole matrix.
    Predict(Common),
    /// Paint a banded risk lattice over the region and export it.
    Riskmap(Common),
    /// Feature diagnostics: correlations, VIF, forest importance.
    Report(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Synth(c)
            | Command::Sample(c)
            | Command::Featurize(c)
            | Command::Train(c)
            | Command::Evaluate(c)
            | Command::Predict(c)
            | Command::Riskmap(c)
            | Command::Report(c) => c,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Sample(_) => "sample",
            Command::Featurize(_) => "featurize",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
            Command::Predict(_) => "predict",
            Command::Riskmap(_) => "riskmap",
            Command::Report(_) => "report",
        }
    }
}

/// Failures grouped by exit code: 2 for configuration and usage problems,
/// 3 for data that cannot be processed, 4 for numerical breakdown inside
/// the pipeline.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Core(deskaid_core::Error),
}

impl CliError {
    pub fn config(msg: String) -> CliError {
        CliError::Config(msg)
    }

    pub fn data(msg: String) -> CliError {
        CliError::Data(msg)
    }

    fn exit_code(&self) -> u8 {
        use deskaid_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Core(e) => match e {
                E::InvalidParameter(_) | E::OutOfRange(_) | E::KTooLarge { .. } | E::UnsupportedModelKind(_) => 2,
                E::NonFinite(_) | E::Diverged(_) | E::RankDeficient { .. } => 4,
                _ => 3,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Data(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<deskaid_core::Error> for CliError {
    fn from(e: deskaid_core::Error) -> CliError {
        CliError::Core(e)
    }
}

/// DESKAID_THREADS caps the rayon pool; unset leaves the default. Results
/// do not depend on this, only wall time does.
fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("DESKAID_THREADS") else { return Ok(()) };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| CliError::config(format!("DESKAID_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let common = cli.command.common();
    let cfg = PipelineConfig::resolve(common.config.as_deref(), &common.set)?;
    let ctx = Ctx { cfg, out: common.out.clone(), force: common.force };
    match &cli.command {
        Command::Synth(_) => stages::synth(&ctx),
        Command::Sample(_) => stages::sample(&ctx),
        Command::Featurize(_) => stages::featurize(&ctx),
        Command::Train(_) => stages::train(&ctx),
        Command::Evaluate(_) => stages::evaluate(&ctx),
        Command::Predict(_) => stages::predict(&ctx),
        Command::Riskmap(_) => stages::riskmap(&ctx),
        Command::Report(_) => stages::report(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let name = cli.command.name();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("deskaid {name}: error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
