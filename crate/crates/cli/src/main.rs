mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Flow-divergence guided compression of small neural networks.
#[derive(Debug, Parser)]
#[command(name = "flowprune", version)]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model on a dataset.
    Train(Common),
    /// Compute the divergence profile of a model.
    Analyze(Common),
    /// Iterative divergence-aware filter pruning.
    PruneFilters(Common),
    /// Flow-guided layer truncation.
    TruncateLayers(Common),
    /// Full two-phase compression pipeline.
    Compress(Common),
    /// Render a tracker file as a report table.
    Report(ReportArgs),
    /// Write a synthetic dataset.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset (`.csv` table or tensor container).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Validation dataset; without it the data is split 70/30 in file order.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Input checkpoint.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report or profile output; stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Tracker JSON written by `compress`, `prune-filters` or `truncate-layers`.
    pub tracker: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub kind: DataKind,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    /// Image side length for `bars`.
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DataKind {
    /// Two Gaussian blobs in the plane.
    Blobs,
    /// 2-class bar images.
    Bars,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    let result = match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Analyze(a) => commands::analyze(&a),
        Command::PruneFilters(a) => commands::prune_filters(&a),
        Command::TruncateLayers(a) => commands::truncate_layers(&a),
        Command::Compress(a) => commands::compress(&a),
        Command::Report(a) => commands::report(&a),
        Command::Generate(a) => commands::generate(&a),
    };
    match result {
        Ok(commands::Outcome::Done) => ExitCode::SUCCESS,
        Ok(commands::Outcome::BudgetWarning(msg)) => {
            eprintln!("warning: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
