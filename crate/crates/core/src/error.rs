use thiserror::Error;

use crate::sgld::ParameterPoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A chain produced a non-finite iterate or gradient.
    #[error("chain diverged at iteration {iteration}")]
    Diverged { iteration: u64 },

    /// One chain of a multi-chain run failed. `partial` holds the terminals of
    /// every chain that did finish, indexed by chain.
    #[error("chain {chain} failed: {source}")]
    ChainFailed {
        chain: usize,
        #[source]
        source: Box<Error>,
        partial: Vec<Option<ParameterPoint>>,
    },

    /// A rate experiment failed while running the chains for one step size.
    #[error("rate experiment failed at lambda = {lambda:e}: {source}")]
    AtStepSize {
        lambda: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    /// The input is well formed but carries no information (e.g. all-zero
    /// distances handed to a log-log fit).
    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        // written as a negation so that NaN fails the check
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !($cond) {
            return Err($crate::error::Error::contract(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
