use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{field}`: {constraint}")]
    InvalidParameter { field: String, constraint: String },

    #[error("s = {s} is outside the moment domain ({reason})")]
    DomainError { s: f64, reason: String },

    #[error("m(s) - 1 has no root on the moment domain: {0}")]
    NoRoot(String),

    #[error("m(s) = 1 has a single root at s = {root}")]
    SingleRoot { root: f64 },

    #[error("Monte Carlo evidence is inconclusive: {0}")]
    MonteCarloInconclusive(String),

    #[error("no gamma > beta with E|T_{k}|^gamma = 1 inside the moment domain")]
    NoGamma { k: usize },

    #[error("mean equation has infinitely many solutions (E sum T = 1 and E Q = 0)")]
    NonUnique,

    #[error("mean equation has no solution: {0}")]
    NoSolution(String),

    #[error("pool mean is required but the mean equation has no solution: {0}")]
    MissingMean(String),

    #[error("numeric divergence at generation {generation}: {detail}")]
    Divergence { generation: u64, detail: String },

    #[error("branching tree exceeded the node budget of {cap}")]
    TreeBudgetExceeded { cap: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("degenerate samples: {0}")]
    DegenerateSamples(String),

    #[error("invalid integration grid: {0}")]
    GridError(String),

    #[error("tail extrapolation unstable: fitted index {beta_hat} <= s = {s}")]
    ExtrapolationUnstable { beta_hat: f64, s: f64 },

    #[error("tail window too small: {exceedances} exceedances at the window top (need >= {required})")]
    WindowTooSmall { exceedances: usize, required: usize },

    #[error("check not applicable: {0}")]
    Inapplicable(String),

    #[error("precondition failed: {0}")]
    PreconditionFailed(String),

    #[error("pool file: {0}")]
    PoolFormat(String),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, constraint: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            constraint: constraint.into(),
        }
    }
}
