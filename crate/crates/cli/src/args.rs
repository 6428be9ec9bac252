use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "tcheby", version, about = "Multi-objective offline preference optimization on a toy sequence model")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. Flags override config keys.
#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// TOML config, or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Preference vectors, `;`-separated, e.g. `1/3,2/3;1/2,1/2`.
    #[arg(long, global = true)]
    pub lambda: Option<String>,

    /// Comma-separated algorithms: dpo-lin, odpo-lin, odpo-stz, odpo-sq, stomp.
    #[arg(long, global = true)]
    pub algo: Option<String>,

    #[arg(long, global = true)]
    pub tau: Option<f64>,

    #[arg(long, global = true)]
    pub gamma: Option<f64>,

    #[arg(long, global = true)]
    pub alpha: Option<f64>,

    #[arg(long, global = true)]
    pub beta: Option<f64>,

    #[arg(long, global = true)]
    pub delta: Option<f64>,

    /// Comma-separated checkpoint fractions in (0, 1].
    #[arg(long, global = true)]
    pub checkpoints: Option<String>,

    /// Sequence alphabet of every dataset and policy.
    #[arg(long, global = true)]
    pub alphabet: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic reward landscape (train.csv, test.csv).
    Synth,
    /// Per-objective spreads, log-partition estimates and equal-means weights.
    Stats(DataArgs),
    /// Maximum-likelihood reference policy.
    Pretrain(DataArgs),
    /// Train one run per algorithm and preference vector.
    Train(TrainArgs),
    /// Importance-weighted expected rewards of every checkpoint.
    Eval(EvalArgs),
    /// Pareto front and hypervolume of a point set.
    Front(FrontArgs),
    /// Sample sequences from a policy.
    Generate(GenerateArgs),
    /// Fit one GP reward model per objective.
    GpFit(DataArgs),
    /// Expected hypervolume of candidate subsets under fitted GP models.
    GpEhv(GpEhvArgs),
    /// Per-item scalarized rewards.
    Scalarize(DataArgs),
    /// Summary table from an eval directory.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Reward dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Reference policy JSON.
    #[arg(long)]
    pub policy: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Output directory of `train`.
    #[arg(long)]
    pub runs: PathBuf,
    /// Reference policy the training data was drawn from.
    #[arg(long)]
    pub policy: PathBuf,
    /// Held-out reward dataset.
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated hypervolume reference point.
    #[arg(long, allow_hyphen_values = true)]
    pub ref_point: Option<String>,
}

#[derive(Args, Debug)]
pub struct FrontArgs {
    /// CSV whose first column is a label and remaining columns are objectives.
    #[arg(long, conflicts_with = "concave", required_unless_present = "concave")]
    pub points: Option<PathBuf>,
    /// Use `n` points of the built-in concave front instead.
    #[arg(long)]
    pub concave: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub ref_point: Option<String>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenerateMethod {
    Gwg,
    Sample,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub policy: PathBuf,
    /// Dataset providing the contexts (and the wild type, unless given).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "gwg")]
    pub method: GenerateMethod,
    #[arg(long)]
    pub wild_type: Option<String>,
}

#[derive(Args, Debug)]
pub struct GpEhvArgs {
    /// gp.json from `gp-fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// CSV with a `sequence` column.
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub ref_point: Option<String>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Output directory of `eval`.
    #[arg(long)]
    pub eval: PathBuf,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Stats(_) => "stats",
            Command::Pretrain(_) => "pretrain",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Front(_) => "front",
            Command::Generate(_) => "generate",
            Command::GpFit(_) => "gp-fit",
            Command::GpEhv(_) => "gp-ehv",
            Command::Scalarize(_) => "scalarize",
            Command::Report(_) => "report",
        }
    }
}
