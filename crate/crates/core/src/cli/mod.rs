//! Command-line front end. Every command writes machine-readable outputs
//! plus a `<output>.manifest.json` run record.

mod commands;
mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Error;
use crate::training::TrainConfig;
use crate::units::UnitKind;

pub use report::RunManifest;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "dcg", version, about = "Deep causal graphs: fit, intervene, explain, audit")]
pub struct Cli {
    /// Seed for every random choice of the command.
    #[arg(long, global = true, env = "DCG_SEED", default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic salary dataset and its ground-truth graph.
    GenSalary(GenSalaryArgs),
    /// Write a complete-graph spec for a CSV file.
    CompleteSpec(CompleteSpecArgs),
    /// Train a graph and write a checkpoint.
    Fit(FitArgs),
    /// K-fold cross-validated test nll.
    Eval(EvalArgs),
    /// Draw samples, optionally under interventions.
    Sample(SampleArgs),
    /// Interventional samples or a quantile sweep with its observational curve.
    Intervene(IntervenArgs),
    /// Counterfactuals for one data row.
    Counterfactual(CounterfactualArgs),
    /// Counterfactual-fairness audit or CU_2-regularized training.
    #[command(subcommand)]
    Fairness(FairnessCommand),
    /// Density curves of a node under interventions on another node.
    Sanity(SanityArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ContinuousKind {
    Flow,
    Normal,
    Ald,
    Glm,
}

impl From<ContinuousKind> for UnitKind {
    fn from(k: ContinuousKind) -> Self {
        match k {
            ContinuousKind::Flow => UnitKind::Flow,
            ContinuousKind::Normal => UnitKind::Normal,
            ContinuousKind::Ald => UnitKind::Ald,
            ContinuousKind::Glm => UnitKind::Glm,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenSalaryArgs {
    #[arg(long)]
    pub n: usize,
    /// Selection-bias strength.
    #[arg(long, default_value_t = crate::data::CALIBRATED_BETA)]
    pub beta: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the ground-truth graph spec.
    #[arg(long)]
    pub spec_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompleteSpecArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = ContinuousKind::Flow)]
    pub kind: ContinuousKind,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long = "lr", default_value_t = 1e-3)]
    pub learning_rate: f64,
    /// Confounder draws per batch.
    #[arg(long, default_value_t = 100)]
    pub m: usize,
    #[arg(long, default_value_t = 10.0)]
    pub clip_norm: f64,
    #[arg(long)]
    pub patience: Option<usize>,
}

impl TrainArgs {
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            m: self.m,
            seed,
            clip_norm: self.clip_norm,
            patience: self.patience,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch training curve CSV.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = crate::training::DEFAULT_FOLDS)]
    pub folds: usize,
    /// Replace the kind of every continuous node.
    #[arg(long, value_enum)]
    pub continuous_kind: Option<ContinuousKind>,
    /// Per-fold nll CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Intervention `node=value`; repeat for several nodes.
    #[arg(long = "do", value_name = "NODE=VALUE")]
    pub doing: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IntervenArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long = "do", value_name = "NODE=VALUE")]
    pub doing: Vec<String>,
    /// Samples per intervention (per grid point in sweep mode).
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Sweep `NODE` over its empirical quantiles from `LO` to `HI` in `STEPS` points.
    #[arg(long, num_args = 4, value_names = ["NODE", "LO", "HI", "STEPS"])]
    pub quantile_sweep: Option<Vec<String>>,
    /// Node whose mean is reported in sweep mode.
    #[arg(long)]
    pub target: Option<String>,
    /// Data for empirical quantiles and the observational curve.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CounterfactualArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub row: usize,
    #[arg(long = "do", value_name = "NODE=VALUE", required = true)]
    pub doing: Vec<String>,
    /// Counterfactual samples.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Confounder draws.
    #[arg(long, default_value_t = 1000)]
    pub m: usize,
    /// Weighted counterfactual rows.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-feature summary JSON.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Predictor file; adds factual and counterfactual predictions.
    #[arg(long)]
    pub predictor: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PolicyArgs {
    #[arg(long)]
    pub protected: String,
    /// Explicit intervention values (comma separated) for non-binary nodes.
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<String>,
    /// Counterfactual samples per row.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Confounder draws per counterfactual.
    #[arg(long, default_value_t = 100)]
    pub m: usize,
}

#[derive(Debug, Subcommand)]
pub enum FairnessCommand {
    /// CU_1, CU_2 and per-group Spearman of a predictor.
    Audit(AuditArgs),
    /// Train an MLP predictor with and without the CU_2 penalty.
    Train(FairTrainArgs),
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub policy: PolicyArgs,
    /// Target column for per-group Spearman.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, conflicts_with = "black_box_batch", required_unless_present = "black_box_batch")]
    pub predictor: Option<PathBuf>,
    /// Directory for the external-predictor exchange: writes `cf-inputs.csv`,
    /// or scores `cf-preds.csv` once it is there.
    #[arg(long)]
    pub black_box_batch: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FairTrainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[arg(long)]
    pub target: String,
    #[arg(long, value_delimiter = ',', required = true)]
    pub features: Vec<String>,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [16usize, 16])]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long = "lr", default_value_t = 3e-3)]
    pub learning_rate: f64,
    /// Counterfactual draws per training row.
    #[arg(long, default_value_t = crate::fairness::DEFAULT_N_CF)]
    pub n_cf: usize,
    /// Held-out share of the rows used for the reports.
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    /// Where to write the regularized predictor.
    #[arg(long)]
    pub predictor_out: PathBuf,
    /// Where to write the unregularized predictor.
    #[arg(long)]
    pub baseline_out: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SanityArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub node: String,
    #[arg(long)]
    pub condition_on: String,
    /// Intervention values for `--condition-on`.
    #[arg(long, value_delimiter = ',', required_unless_present = "grid_quantiles")]
    pub grid: Vec<f64>,
    /// Quantile levels of `--condition-on` in `--data`, instead of `--grid`.
    #[arg(long, value_delimiter = ',', requires = "data")]
    pub grid_quantiles: Vec<f64>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Points of the value grid.
    #[arg(long, default_value_t = 200)]
    pub points: usize,
    /// Ancestral draws averaged into each density.
    #[arg(long, default_value_t = 500)]
    pub draws: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_numeric() {
        return EXIT_NUMERIC;
    }
    match err {
        Error::Config(_) => EXIT_USAGE,
        Error::Io(_)
        | Error::Csv(_)
        | Error::Json(_)
        | Error::Data(_)
        | Error::Checkpoint(_)
        | Error::Protocol(_)
        | Error::UnknownNode(_)
        | Error::InvalidGraph(_)
        | Error::Cycle(_)
        | Error::DegenerateColumn(_)
        | Error::Support { .. } => EXIT_INPUT,
        _ => 1,
    }
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let flags: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match commands::dispatch(&cli, flags) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
