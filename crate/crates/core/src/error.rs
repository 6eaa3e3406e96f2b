use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("infeasible alignment{}: {reason}", stage.as_ref().map(|s| format!(" at stage {s}")).unwrap_or_default())]
    InfeasibleAlignment { stage: Option<String>, reason: String },
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("training diverged at epoch {epoch}: {reason}")]
    TrainingDiverged { epoch: usize, reason: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn infeasible(reason: impl Into<String>) -> Self {
        Error::InfeasibleAlignment { stage: None, reason: reason.into() }
    }

    /// Attach a stage label to an alignment failure; other errors pass through.
    pub fn at_stage(self, stage: impl Into<String>) -> Self {
        match self {
            Error::InfeasibleAlignment { reason, .. } => {
                Error::InfeasibleAlignment { stage: Some(stage.into()), reason }
            }
            other => other,
        }
    }
}
