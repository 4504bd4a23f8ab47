use thiserror::Error;

use crate::funnel_mdp::{ActionId, StateId};

#[derive(Debug, Error)]
pub enum Error {
    #[error("state {0} is out of range or terminal")]
    InvalidState(StateId),
    #[error("action {action} out of range (model has {num_actions} actions)")]
    InvalidAction { action: ActionId, num_actions: usize },
    #[error("malformed model: {0}")]
    Malformed(String),
    #[error("model is not valid: {0}")]
    InvalidModel(String),
    #[error("absorption check did not converge after {iterations} iterations (last survival {last_survival})")]
    AbsorptionNotConverged { iterations: usize, last_survival: f64 },
    #[error("value iteration did not converge after {iterations} iterations (last change {last_change})")]
    NotConverged { iterations: usize, last_change: f64 },
    #[error("linear system is singular or ill-conditioned")]
    Singular,
    #[error("{0} is not a permutation of the action set")]
    NotAPermutation(String),
    #[error("projection covers {got} states, model has {expected}")]
    PartialProjection { expected: usize, got: usize },
    #[error("instance too large for enumeration: {states} states, {actions} actions")]
    TooLarge { states: usize, actions: usize },
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },
    #[error("{0}")]
    Metric(String),
    #[error("config: {0}")]
    Config(String),
    #[error("agent `{agent}`, seed {seed}: {source}")]
    Run { agent: String, seed: u64, source: Box<Error> },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True for errors caused by the user's input rather than by a run.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config(_) | Error::InvalidParameter { .. } | Error::Json(_))
    }

    pub(crate) fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { field: field.into(), reason: reason.into() }
    }
}
