//! Crate-wide error type.

/// Errors surfaced by the library.
///
/// Training infeasibility (no candidate model satisfies the group-fairness
/// threshold) is reported through [`crate::training::TrainFailure`], which
/// carries the full candidate pool; it converts into [`Error::Infeasible`]
/// when the diagnostics are not needed.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("node index {index} out of range for {n} nodes")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    DimMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unknown parameter group '{0}'")]
    UnknownGroup(String),

    #[error("protected group s={group} is empty; group price gap undefined")]
    EmptyGroup { group: u8 },

    #[error("no candidate model satisfies p_diff <= {tau}; best p_diff {best_p_diff} at epoch {best_epoch}")]
    Infeasible {
        tau: f64,
        best_p_diff: f64,
        best_epoch: usize,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
