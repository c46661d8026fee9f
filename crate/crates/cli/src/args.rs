use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use survey_hazard::glm::PenaltyKind;

#[derive(Debug, Parser)]
#[command(name = "survey-hazard", version, about = "Daily survey-response hazard models", args_override_self = true)]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    /// Key-value file whose entries act as `--key value` flags; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the date-indexed covariate table from weather, trend and holiday inputs.
    Ingest(IngestArgs),
    /// Expand cases into person-period rows.
    Expand(ExpandArgs),
    /// Collapse cases or person-period rows into period-level counts.
    Collapse(CollapseArgs),
    /// Fit one model and write it to a model file.
    Fit(FitCmdArgs),
    /// Predict daily hazards with a saved model.
    Predict(PredictArgs),
    /// Fit and score several models on held-out cohorts.
    Evaluate(EvaluateArgs),
    /// Permutation importance on held-out cohorts.
    Importance(ImportanceArgs),
    /// Chain overlapping trend samples into one daily series.
    CalibrateGt(CalibrateArgs),
    /// Simulate fieldwork from a scenario file.
    Simulate(SimulateArgs),
    /// Metrics, coefficients, curves and importance in one directory.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PenaltyArg {
    Lasso,
    Adaptive,
    Ridge,
    None,
}

impl From<PenaltyArg> for PenaltyKind {
    fn from(p: PenaltyArg) -> Self {
        match p {
            PenaltyArg::Lasso => PenaltyKind::Lasso,
            PenaltyArg::Adaptive => PenaltyKind::Adaptive,
            PenaltyArg::Ridge => PenaltyKind::Ridge,
            PenaltyArg::None => PenaltyKind::None,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Strict,
    Partial,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SampleFormat {
    Long,
    Wide,
}

#[derive(Debug, Args)]
pub struct SeedArgs {
    /// Root seed; every random step derives its own seed from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_enum, default_value = "adaptive")]
    pub penalty: PenaltyArg,
    #[arg(long, default_value_t = 10)]
    pub k_folds: usize,
    #[arg(long, default_value_t = 100)]
    pub lambda_count: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lambda_min_ratio: f64,
    #[command(flatten)]
    pub seed: SeedArgs,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Case CSV; expanded and collapsed on the fly.
    #[arg(long, value_name = "FILE", conflicts_with = "period_level")]
    pub cases: Option<PathBuf>,
    /// Period-level CSV.
    #[arg(long, value_name = "FILE")]
    pub period_level: Option<PathBuf>,
    /// Covariate CSV (`date,<columns>`); not needed for the baseline model.
    #[arg(long, value_name = "FILE")]
    pub covariates: Option<PathBuf>,
    /// Move responses dated before the invitation to the first day.
    #[arg(long)]
    pub clamp_early_responses: bool,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Earliest cohorts used for fitting (default: all but the test cohorts).
    #[arg(long, value_name = "N")]
    pub train_cohorts: Option<usize>,
    /// Latest cohorts held out for scoring (default: a quarter, at least one).
    #[arg(long, value_name = "N")]
    pub test_cohorts: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Case CSV whose fieldwork dates the table must cover.
    #[arg(long, value_name = "FILE", required_unless_present_all = ["start", "end"])]
    pub cases: Option<PathBuf>,
    #[arg(long, value_name = "DATE", requires = "end")]
    pub start: Option<String>,
    #[arg(long, value_name = "DATE", requires = "start")]
    pub end: Option<String>,
    /// Station weather CSV; stations are averaged per day.
    #[arg(long, value_name = "FILE")]
    pub weather: Option<PathBuf>,
    /// Calibrated trend series as `name=path` (or a path; the file stem names it).
    #[arg(long, value_name = "NAME=FILE")]
    pub trends: Vec<String>,
    /// Holiday list, one ISO date per line (default: bundled 2016-2017 list).
    #[arg(long, value_name = "FILE")]
    pub holidays: Option<PathBuf>,
    /// Blocks to include: weather, trends, calendar, month, season.
    #[arg(long, default_value = "weather,trends,calendar")]
    pub blocks: String,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExpandArgs {
    #[arg(long, value_name = "FILE")]
    pub cases: PathBuf,
    #[arg(long)]
    pub clamp_early_responses: bool,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CollapseArgs {
    #[arg(long, value_name = "FILE", required_unless_present = "person_period", conflicts_with = "person_period")]
    pub cases: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub person_period: Option<PathBuf>,
    #[arg(long)]
    pub clamp_early_responses: bool,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitCmdArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// baseline, full, interaction, month or season.
    #[arg(long, default_value = "full")]
    pub model: String,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Fit on the earliest N cohorts only (default: all).
    #[arg(long, value_name = "N")]
    pub train_cohorts: Option<usize>,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Also write the coefficient table as CSV.
    #[arg(long, value_name = "FILE")]
    pub coefficients: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_name = "FILE")]
    pub model_file: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Comma-separated models to fit and compare.
    #[arg(long, default_value = "baseline,full,interaction")]
    pub models: String,
    /// Score a saved model instead of refitting: `kind=path`.
    #[arg(long, value_name = "KIND=FILE")]
    pub model_file: Vec<String>,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ImportanceArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Saved model to explain; otherwise `--model` is fitted on the training cohorts.
    #[arg(long, value_name = "FILE")]
    pub model_file: Option<PathBuf>,
    #[arg(long, default_value = "full")]
    pub model: String,
    #[arg(long, default_value_t = 20)]
    pub permutations: usize,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long, value_name = "FILE")]
    pub samples: PathBuf,
    #[arg(long, value_enum, default_value = "long")]
    pub format: SampleFormat,
    /// Window length in days (long format only; wide files imply it).
    #[arg(long, default_value_t = survey_hazard::gt::DEFAULT_WINDOW)]
    pub window: usize,
    #[arg(long, value_enum, default_value = "strict")]
    pub mode: ModeArg,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario key-value file (defaults apply to absent keys).
    #[arg(long, value_name = "FILE")]
    pub scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, default_value = "baseline,full,interaction")]
    pub models: String,
    /// Model whose coefficients and importance are reported.
    #[arg(long, default_value = "full")]
    pub explain: String,
    #[arg(long, default_value_t = 20)]
    pub permutations: usize,
    /// Also write coefficient tables of interaction models.
    #[arg(long)]
    pub interaction_coefficients: bool,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}
