use thiserror::Error;

use crate::domain::Assignment;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid search space: {0}")]
    InvalidSpace(String),

    #[error("objective set is empty")]
    EmptySpace,

    #[error("cannot divide {len} parameters into {parts} blocks")]
    InvalidDivision { len: usize, parts: usize },

    #[error("slot {slot} is outside 1..={eta}")]
    InvalidSlot { slot: usize, eta: usize },

    #[error("invalid tuning query: {0}")]
    InvalidQuery(String),

    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),

    #[error("duplicate result for parameter `{0}`")]
    DuplicateParam(String),

    #[error("no result for parameter `{0}`")]
    IncompleteResults(String),

    #[error("evaluation budget of {cap} exhausted")]
    BudgetExhausted { cap: u64 },

    #[error("could not draw a fresh point after {attempts} attempts")]
    SpaceExhausted { attempts: usize },

    #[error("evaluation failed at {candidate}: {reason}")]
    Evaluation {
        candidate: Box<Assignment>,
        reason: String,
    },

    #[error("agent {agent} failed: {source}")]
    Agent {
        agent: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("evaluator session: {0}")]
    Session(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
