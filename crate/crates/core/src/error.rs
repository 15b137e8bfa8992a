use thiserror::Error;

use crate::convex::ConvexError;
use crate::model::ConfigViolation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {}", join_violations(.0))]
    InvalidConfig(Vec<ConfigViolation>),

    #[error("{what} = {value} is outside [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("user {user} offloads a positive payload with zero resource (infinite energy)")]
    InfiniteEnergy { user: usize },

    #[error("zero denominator in average power")]
    ZeroDenominator,

    #[error("bisection failed: {0}")]
    Bisection(String),

    #[error("case mismatch: {0}")]
    CaseMismatch(&'static str),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Convex(#[from] ConvexError),

    #[error("config parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn join_violations(v: &[ConfigViolation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}
