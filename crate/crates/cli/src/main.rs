//! `fsl`: batch driver for the triplet few-shot repair pipeline.
//!
//! Each stage reads the previous stage's artifacts from a run directory and
//! writes its own. `synth` and `ingest` create the run directory; later
//! stages use `--run DIR` or the newest run under `--runs-dir`.

mod error;
mod run;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fsl_core::ingest::UncertainPolicy;
use fsl_core::trainer::{LossKind, TrainMode};

#[derive(Parser, Debug)]
#[command(name = "fsl", version, about = "Triplet few-shot repair of a multi-label chest X-ray classifier")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Seed for every random choice. Later stages default to the run's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory to read and write. Defaults to the newest run in --runs-dir.
    #[arg(long, global = true)]
    pub run: Option<PathBuf>,
    /// Parent directory of run directories.
    #[arg(long, global = true, default_value = "runs")]
    pub runs_dir: PathBuf,
    /// Replace this stage's existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset and split it into a new run directory.
    Synth(SynthArgs),
    /// Load a CheXpert-style manifest and split it into a new run directory.
    Ingest(IngestArgs),
    /// Train the baseline classifier and record its inferences on the evaluation split.
    Baseline(BaselineArgs),
    /// Build training and validation triplets from the baseline's failures.
    Triplets(TripletArgs),
    /// Retrain embedding heads on the triplets.
    Train(TrainArgs),
    /// Re-decide validation failures by prototype and write before/after reports.
    Eval(EvalArgs),
    /// Compare before and after reports (runs `eval` first if needed).
    Compare(CompareArgs),
    /// Serve the review queue and retraining API for a run.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1600)]
    pub n_images: usize,
    #[arg(long, default_value_t = 64)]
    pub image_size: u32,
    /// Number of pathologies that carry a marker (the rest are always negative).
    #[arg(long, default_value_t = 2)]
    pub pathologies: usize,
    #[arg(long, default_value_t = 0.5)]
    pub prevalence: f64,
    /// Fraction of images used to train the baseline; the rest are evaluated.
    #[arg(long, default_value_t = 0.25)]
    pub train_fraction: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PolicyArg {
    Negative,
    Positive,
}

impl From<PolicyArg> for UncertainPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Negative => UncertainPolicy::TreatAsNegative,
            PolicyArg::Positive => UncertainPolicy::TreatAsPositive,
        }
    }
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// CSV with a Path column and the 14 observation columns.
    #[arg(long)]
    pub manifest: PathBuf,
    /// How uncertain (-1) labels are read.
    #[arg(long, value_enum, default_value = "negative")]
    pub uncertain: PolicyArg,
    #[arg(long, default_value_t = 320)]
    pub resize: u32,
    #[arg(long, default_value_t = 224)]
    pub crop: u32,
    #[arg(long, default_value_t = 0.25)]
    pub train_fraction: f64,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    /// Use this classifier checkpoint instead of training one.
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    pub epochs: usize,
    #[arg(long, default_value_t = 2e-3)]
    pub learning_rate: f64,
    /// Fraction of each pathology's training positives pushed below the
    /// threshold after training. 0 keeps the trained classifier as is.
    #[arg(long, default_value_t = 0.55)]
    pub miss_rate: f64,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Args, Debug)]
pub struct TripletArgs {
    /// Training triplets per pathology.
    #[arg(long = "n", default_value_t = 150, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    /// Pathology name, `P<index>`, or `all`.
    #[arg(long, default_value = "all")]
    pub pathology: String,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Tfsl,
    Incremental,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Tfsl => TrainMode::Tfsl,
            ModeArg::Incremental => TrainMode::Incremental,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LossArg {
    MarginRanking,
    TripletMargin,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::MarginRanking => LossKind::MarginRanking,
            LossArg::TripletMargin => LossKind::TripletMargin,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    /// Pathology name, `P<index>`, or `all`.
    #[arg(long, default_value = "all")]
    pub pathology: String,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 1.0)]
    pub margin: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value = "margin-ranking")]
    pub loss: LossArg,
    /// Train only the embedding head.
    #[arg(long)]
    pub freeze_backbone: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Which trained models to evaluate. Optional when only one mode was trained.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Baseline-correct images averaged into each prototype.
    #[arg(long, default_value_t = 64)]
    pub support_size: usize,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => stages::synth(&cli.common, &a),
        Command::Ingest(a) => stages::ingest(&cli.common, &a),
        Command::Baseline(a) => stages::baseline(&cli.common, &a),
        Command::Triplets(a) => stages::triplets(&cli.common, &a),
        Command::Train(a) => stages::train(&cli.common, &a),
        Command::Eval(a) => stages::eval(&cli.common, &a),
        Command::Compare(a) => stages::compare(&cli.common, &a),
        Command::Serve(a) => stages::serve(&cli.common, &a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.report());
            ExitCode::from(1)
        }
    }
}
