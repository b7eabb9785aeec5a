use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gfe_core::estimate::Link;

#[derive(Debug, Parser, Serialize)]
#[command(name = "gfe", version, about = "Grouped fixed effects for binary-choice panels")]
pub struct Cli {
    /// Worker threads (0 = all available cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,

    /// Omit the timestamp from output headers.
    #[arg(long, global = true)]
    pub no_timestamp: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Fit a panel model and report slopes, groups and partial effects.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo study.
    Simulate(SimulateArgs),
    /// Expanding-window one-step-ahead forecasts.
    Forecast(ForecastArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkArg {
    Logit,
    Probit,
}

impl From<LinkArg> for Link {
    fn from(l: LinkArg) -> Self {
        match l {
            LinkArg::Logit => Link::Logit,
            LinkArg::Probit => Link::Probit,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    /// Long-format panel CSV.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "unit")]
    pub unit_col: String,
    #[arg(long, default_value = "time")]
    pub time_col: String,
    #[arg(long, default_value = "y")]
    pub outcome_col: String,
    /// Comma-separated covariate columns (default: every other column).
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// Add the lagged outcome as the first covariate.
    #[arg(long)]
    pub dynamic: bool,
    #[arg(long, value_enum, default_value_t = LinkArg::Logit)]
    pub link: LinkArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub kmeans_restarts: usize,
    /// Scale clustering moments to unit standard deviation.
    #[arg(long)]
    pub standardize: bool,
    /// Divisor for the noise variance in the γ-rule: T² (plain) or T(T−1).
    #[arg(long, value_enum, default_value_t = NoiseArg::Plain)]
    pub noise: NoiseArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseArg {
    Plain,
    Unbiased,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Fe,
    Gfe,
    Pooled,
    Firth,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = Mode::Fe)]
    pub mode: Mode,
    /// γ-rule threshold for GFE.
    #[arg(long, conflicts_with = "k")]
    pub gamma: Option<f64>,
    /// Fixed number of groups for GFE.
    #[arg(long)]
    pub k: Option<usize>,
    /// Units the APE averages over; dropped units contribute zero under `all`.
    #[arg(long, value_enum, default_value_t = ApeSampleArg::All)]
    pub ape_sample: ApeSampleArg,
    /// Covariates (by name) whose effect is a discrete 0 to 1 change.
    #[arg(long, value_delimiter = ',')]
    pub binary: Vec<String>,
    /// JSON output path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV of APE rows.
    #[arg(long)]
    pub ape_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ApeSampleArg {
    All,
    Kept,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignArg {
    Static,
    Dynamic,
    Trending,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub design: DesignArg,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 8)]
    pub t: usize,
    #[arg(long, allow_hyphen_values = true)]
    pub nu_alpha: f64,
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    /// Comma list of γ values, or `lo:hi:count`.
    #[arg(long, default_value = "0.1,0.4,0.7,1.0")]
    pub gamma: String,
    /// Comma list from infeasible, ml, j, firth, gfe (default: all that apply).
    #[arg(long)]
    pub estimators: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub kmeans_restarts: usize,
    /// Report CSV path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Ml,
    Firth,
    Gfe,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// First period of every training window (default: first in the data).
    #[arg(long, allow_hyphen_values = true)]
    pub train_start: Option<i64>,
    /// Last training periods, as `a..b` or a comma list.
    #[arg(long)]
    pub train_ends: String,
    #[arg(long, value_enum, default_value_t = MethodArg::Ml)]
    pub method: MethodArg,
    #[arg(long, conflicts_with = "k")]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Report CSV path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV of in-sample predicted probabilities for the last window.
    #[arg(long)]
    pub density_out: Option<PathBuf>,
}
