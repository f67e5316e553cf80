use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

mod analyze;
mod blocks;
mod config;
mod experiments;
mod report;

use config::{CommonArgs, Settings};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parse failure: {0}")]
    Parse(String),
    #[error("pipeline mismatch: {0}")]
    Mismatch(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Parse(_) => 3,
            CliError::Mismatch(_) => 4,
            CliError::Io(_) | CliError::Failed(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "blockcompat", version = report::VERSION, about = "JPEG block compatibility analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score JPEG images with the likelihood-ratio detector.
    Analyze(AnalyzeArgs),
    /// Search antecedents for blocks of a coefficient file.
    Antecedent(AntecedentArgs),
    /// Estimate P(unsolved | m) from synthetic or image covers.
    LikelihoodBuild(LikelihoodArgs),
    /// Unsolved ratio per modified coefficient position.
    Heatmap(HeatmapArgs),
    /// Simulated detection: ROC, P_E and zero-false-alarm power.
    Simulate(SimulateArgs),
    /// Write the integer feasibility model of one block in LP format.
    IlpExport(IlpExportArgs),
    /// Exhaustive 1x2 toy pipeline, checked against search and ILP.
    ToyDemo(ToyArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// JPEG files or directories of them.
    pub inputs: Vec<PathBuf>,
    /// Likelihood table from `likelihood-build`.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Block selection: random, variance or sca.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Fraction of candidate blocks to test, in (0, 1].
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Stego prior: uniform, pmap, or custom:p0,p1,...
    #[arg(long)]
    pub prior: Option<String>,
    /// Directory holding `<stem>.pmap` for each image.
    #[arg(long)]
    pub pmaps: Option<PathBuf>,
    /// Report unreadable files and keep going instead of exiting with 3.
    #[arg(long)]
    pub continue_on_error: bool,
}

#[derive(Debug, Args)]
pub struct AntecedentArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Coefficient file (text, or binary with a `.bcfx` extension).
    pub coefficients: PathBuf,
    /// Only this block (0-based).
    #[arg(long)]
    pub block: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Cover source: uniform, smooth, or `images` to tile --image files.
    #[arg(long)]
    pub source: Option<String>,
    /// Grayscale image to tile into 8x8 covers (repeatable).
    #[arg(long = "image")]
    pub images: Vec<PathBuf>,
    /// Cover blocks per experiment cell.
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct LikelihoodArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub source: SourceArgs,
    /// Largest modification count.
    #[arg(long)]
    pub m_max: Option<usize>,
    /// Convergence traces (TSV).
    #[arg(long)]
    pub traces: Option<PathBuf>,
    /// One line per search (TSV).
    #[arg(long)]
    pub records: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub source: SourceArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// LSBM payloads in bits per coefficient, comma-separated.
    #[arg(long)]
    pub payloads: Option<String>,
    /// Selected fractions, comma-separated.
    #[arg(long)]
    pub fractions: Option<String>,
    /// Selection strategies, comma-separated: random, sca.
    #[arg(long)]
    pub selections: Option<String>,
    /// Embed with fixed per-block p-maps from this file instead of LSBM.
    #[arg(long)]
    pub pmap_file: Option<PathBuf>,
    /// Simulated images per class.
    #[arg(long)]
    pub images: Option<usize>,
    /// Blocks per simulated LSBM image.
    #[arg(long)]
    pub blocks_per_image: Option<usize>,
    /// Full ROC curves (TSV).
    #[arg(long)]
    pub roc: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IlpExportArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    pub coefficients: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub block: usize,
    /// Also solve with this many branch-and-bound nodes; verdict on stderr.
    #[arg(long)]
    pub solve: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Quantization steps `DC,AC`.
    #[arg(long, default_value = "1,1")]
    pub steps: String,
    /// Per-block verdicts over the whole box (TSV).
    #[arg(long)]
    pub map: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = match &cli.command {
        Command::Analyze(a) => &a.common,
        Command::Antecedent(a) => &a.common,
        Command::LikelihoodBuild(a) => &a.common,
        Command::Heatmap(a) => &a.common,
        Command::Simulate(a) => &a.common,
        Command::IlpExport(a) => &a.common,
        Command::ToyDemo(a) => &a.common,
    };
    let settings = Settings::load(common)?;
    if let Some(n) = settings.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match &cli.command {
        Command::Analyze(a) => analyze::run(a, &settings),
        Command::Antecedent(a) => blocks::antecedent(a, &settings),
        Command::LikelihoodBuild(a) => experiments::likelihood(a, &settings),
        Command::Heatmap(a) => experiments::heatmap(a, &settings),
        Command::Simulate(a) => experiments::simulate(a, &settings),
        Command::IlpExport(a) => blocks::ilp_export(a, &settings),
        Command::ToyDemo(a) => blocks::toy_demo(a, &settings),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("blockcompat: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
