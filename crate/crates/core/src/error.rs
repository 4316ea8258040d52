use thiserror::Error;

use crate::domain::Point;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A point or dimension outside the valid domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// The objective produced a non-finite value.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// An operation was called on a state that does not support it.
    #[error("state error: {0}")]
    State(String),

    /// A node could not be split into two non-empty children.
    #[error("degenerate split: {0}")]
    SplitDegenerate(String),

    /// Sampling could not produce enough points inside a region.
    /// `accepted` holds whatever was found before giving up.
    #[error("infeasible region: {reason} ({} points accepted)", accepted.len())]
    Infeasible {
        reason: String,
        accepted: Vec<Point>,
    },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn infeasible(reason: impl Into<String>, accepted: Vec<Point>) -> Self {
        Error::Infeasible {
            reason: reason.into(),
            accepted,
        }
    }
}
