use thiserror::Error;

/// Errors produced by constructions, verifiers and I/O in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("every entry is masked")]
    AllMasked,

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("no certified direction found after {tries} tries")]
    BudgetExhausted { tries: usize },

    #[error("inconsistent labels: {0}")]
    InconsistentLabels(String),

    #[error("keys too close: {0}")]
    KeysTooClose(String),

    #[error("sequence {sequence} contains duplicate tokens")]
    DuplicateTokens { sequence: usize },

    #[error("grid too large: {0}")]
    GridTooLarge(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors that signal numerical infeasibility rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Infeasible(_)
                | Error::BudgetExhausted { .. }
                | Error::NonFinite(_)
                | Error::Diverged { .. }
                | Error::KeysTooClose(_)
                | Error::GridTooLarge(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
