use crate::design::Design;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("instance is invalid: {0}")]
    InstanceInvalid(String),

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("generator could not reach full rank after {attempts} attempts")]
    InfeasibleGenerator { attempts: usize },

    #[error("budget too small: T = {t} leaves m = {m} pulls per round")]
    BudgetTooSmall { t: usize, m: i64 },

    #[error("budget exceeded: pull {attempted} would exceed T = {budget}")]
    BudgetExceeded { budget: usize, attempted: usize },

    #[error("design did not converge within {max_iters} iterations (g = {g_value:.6}, bound {bound:.6})")]
    NoConvergence {
        max_iters: usize,
        g_value: f64,
        bound: f64,
        best: Box<Design>,
    },

    #[error("information matrix is singular")]
    SingularV,

    #[error("not enough dummy arms: need {needed}, have {available}")]
    InsufficientDummies { needed: usize, available: usize },

    #[error("coding structure violated: {0}")]
    StructureViolation(String),

    #[error("decode chain references a missing pull: {0}")]
    MissingPull(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
