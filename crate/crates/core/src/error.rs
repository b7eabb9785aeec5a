use thiserror::Error;

use crate::cluster::KSelection;
use crate::estimate::FitResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("unbalanced panel: units {units:?} do not cover every period exactly once")]
    UnbalancedPanel { units: Vec<String> },

    #[error("non-binary outcome `{value}` at data row {row}")]
    NonBinaryOutcome { row: usize, value: String },

    #[error("non-finite or unparsable covariate `{column}` at data row {row}")]
    NonFiniteCovariate { row: usize, column: String },

    #[error("invalid time value `{value}` at data row {row}: expected an integer")]
    InvalidTime { row: usize, value: String },

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("empty or out-of-range period selection")]
    EmptyPeriodRange,

    #[error("panel too short: need at least {needed} periods, have {have}")]
    PanelTooShort { needed: usize, have: usize },

    #[error("number of groups {k} out of range 1..={n}")]
    KOutOfRange { k: usize, n: usize },

    #[error("k-means objective never fell below gamma * V (chosen K = N)")]
    ThresholdUnreachable(Box<KSelection>),

    #[error("no usable units: every unit or group is completely separated")]
    NoUsableUnits,

    #[error("every group is completely separated")]
    AllGroupsSeparated,

    #[error("optimizer did not converge after {} iterations (gradient norm {:.3e})", .0.iterations, .0.gradient_norm)]
    NonConvergence(Box<FitResult>),

    #[error("collinear design: concentrated Hessian is not negative definite")]
    CollinearDesign,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unit {0} was dropped from the estimation sample")]
    DroppedUnit(usize),

    #[error("covariate {0} is not binary")]
    NonBinaryCovariate(usize),

    #[error("fit did not converge")]
    NotConverged,

    #[error("covariance matrix is singular")]
    SingularVcov,

    #[error("cutoff selection needs both positive and negative outcomes")]
    DegenerateOutcomes,

    #[error("training window ending at {end} has {periods} estimation periods, need at least 3")]
    WindowTooShort { end: i64, periods: usize },

    #[error("unsupported model: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
