use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("domain error: {what} (value {value})")]
    Domain { what: String, value: f64 },

    #[error("evaluation error on task {task}: {reason}")]
    Evaluation { task: usize, reason: String },

    #[error("run diverged at step {step}{}: {reason}", task.map(|t| format!(", task {t}")).unwrap_or_default())]
    Divergence {
        step: usize,
        task: Option<usize>,
        reason: String,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("structure mismatch: {0}")]
    Structure(String),

    #[error("seed {seed}: {source}")]
    Seeded {
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn domain(what: impl Into<String>, value: f64) -> Self {
        Error::Domain {
            what: what.into(),
            value,
        }
    }

    pub(crate) fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
        }
    }
}
