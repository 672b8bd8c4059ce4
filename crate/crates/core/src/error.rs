use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid cost function: {0}")]
    InvalidCost(&'static str),

    #[error("dispatch {p} is outside the cost domain [{lo}, {hi}]")]
    OutOfDomain { p: f64, lo: f64, hi: f64 },

    #[error("cost domain [{lo}, {hi}] at period {period} does not cover [-{power}, {power}]")]
    DomainTooNarrow {
        period: usize,
        lo: f64,
        hi: f64,
        power: f64,
    },

    #[error("invalid terminal cost: {0}")]
    InvalidTerminal(&'static str),

    #[error("invalid storage parameters: {0}")]
    InvalidStorage(&'static str),

    #[error("the horizon must contain at least one period")]
    EmptyHorizon,

    #[error("invalid search configuration: {0}")]
    InvalidConfig(&'static str),

    #[error("bisection did not converge within {iterations} iterations (bracket [{lo}, {hi}])")]
    NoConvergence { iterations: u32, lo: f64, hi: f64 },

    #[error("horizon solve committed no period at period {period}")]
    NoProgress { period: usize },

    #[error("infeasible schedule at period {period}: {reason}")]
    InfeasibleSchedule { period: usize, reason: &'static str },

    #[error("invalid dynamic-programming grid: {0}")]
    InvalidGrid(&'static str),
}
