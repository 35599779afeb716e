use thiserror::Error;

use crate::boundary::BoundarySolution;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error(
        "inconsistent root quadruple: lambda1+lambda2 = {sum_first}, lambda3+lambda4 = {sum_second}, \
         implied drift {implied_mu}{}",
        asserted_mu.map(|mu| format!(" but drift {mu} was asserted")).unwrap_or_default()
    )]
    InconsistentLambda {
        sum_first: f64,
        sum_second: f64,
        implied_mu: f64,
        asserted_mu: Option<f64>,
    },

    #[error("control decreases at grid index {index}")]
    NonMonotoneControl { index: usize },

    #[error("running minimum increases at grid index {index}")]
    NonMonotoneMinimum { index: usize },

    #[error("path is malformed: {0}")]
    MalformedPath(String),

    #[error("G does not change sign on [{lo}, {hi}] (G(lo) = {g_lo}, G(hi) = {g_hi})")]
    BracketFailure { lo: f64, hi: f64, g_lo: f64, g_hi: f64 },

    #[error("boundary system became singular at m = {m} (det = {det})")]
    SingularSystem {
        m: f64,
        det: f64,
        /// Solution integrated up to the last accepted node.
        partial: Option<Box<BoundarySolution>>,
    },

    #[error("point (x = {x}, m = {m}) is outside the evaluation domain")]
    OutOfDomain { x: f64, m: f64 },

    #[error(
        "reflection fixed point did not converge after {iterations} iterations \
         (residual {residual:e}, empirical contraction {contraction:.3})"
    )]
    NoConvergence {
        iterations: usize,
        residual: f64,
        contraction: f64,
    },

    #[error("{}{field}: {message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Config {
        line: Option<usize>,
        field: String,
        message: String,
    },

    #[error("line {}: {message}", line.map(|l| l.to_string()).unwrap_or_else(|| "?".into()))]
    Parse { line: Option<usize>, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("initial state (x = {x0}, m = {m0}) is not admissible: {reason}")]
    InvalidInitial { x0: f64, m0: f64, reason: &'static str },
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }
}
