use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("no steady state in [0, {c_max}]")]
    NoSteadyState { c_max: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("degenerate: {0}")]
    Degenerate(String),
    #[error("series table too shallow: missing {0}")]
    MissingEntry(String),
    #[error("no local branch on this side of the bifurcation")]
    NoLocalBranch,
    #[error("newton failed after {iters} iterations (residual {residual:.3e})")]
    NewtonFailed { iters: usize, residual: f64 },
    #[error("linear solver failed: {0}")]
    LinearSolve(String),
    #[error("no sign change in the scanned range")]
    NotBracketed,
    #[error("sequence is not divergent")]
    NotDivergent,
    #[error("overflow in f64 arithmetic; use extended precision")]
    NeedsExtendedPrecision,
    #[error("fit failed: {0}")]
    Fit(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Config-type errors map to exit code 2, everything else to 3.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::InvalidParam(_) | Error::Config(_) | Error::Io(_))
    }
}
