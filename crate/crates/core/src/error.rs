use thiserror::Error;

/// Errors raised by the model, allocation, bound and harness layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside its mathematical domain.
    #[error("{field}: {message}")]
    Domain {
        field: &'static str,
        message: String,
    },

    /// A budget or conservation constraint was violated.
    #[error("constraint violation: {0}")]
    Constraint(String),

    /// The belief state carries no usable information (e.g. all posteriors zero).
    #[error("degenerate state: {0}")]
    Degenerate(String),

    /// The caller combined options that are not allowed together.
    #[error("usage: {0}")]
    Usage(String),

    /// A numerical routine failed to reach its tolerance.
    #[error("numerical failure in {routine}: {message}")]
    Numerical {
        routine: &'static str,
        message: String,
    },

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain { .. } => "domain",
            Error::Constraint(_) => "constraint",
            Error::Degenerate(_) => "degenerate",
            Error::Usage(_) => "usage",
            Error::Numerical { .. } => "numerical",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn domain(field: &'static str, message: impl Into<String>) -> Self {
        Error::Domain {
            field,
            message: message.into(),
        }
    }

    pub(crate) fn numerical(routine: &'static str, message: impl Into<String>) -> Self {
        Error::Numerical {
            routine,
            message: message.into(),
        }
    }
}
