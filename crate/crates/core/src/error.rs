use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid self-loop flip on node {0}")]
    SelfLoop(usize),

    #[error("infeasible flip ({0}, {1}): would leave a singleton node")]
    InfeasibleFlip(usize, usize),

    #[error("node {0} is unlabeled")]
    Unlabeled(usize),

    #[error("empty group: {0}")]
    EmptyGroup(String),

    #[error("no candidate pairs remain")]
    NoCandidates,

    #[error("not enough admissible flips: requested {requested}, available {available}")]
    InsufficientFlips { requested: usize, available: usize },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("cache inconsistency: {0}")]
    CacheMismatch(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
