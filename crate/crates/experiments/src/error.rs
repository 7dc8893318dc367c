use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExpError {
    #[error(transparent)]
    Core(#[from] advreg_core::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid: {0}")]
    Invalid(String),
    #[error("unknown figure id '{0}'")]
    UnknownFigure(String),
}

impl ExpError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> ExpError {
        ExpError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Usage-type errors as opposed to numerical ones.
    pub fn is_usage(&self) -> bool {
        match self {
            ExpError::Core(e) => matches!(
                e,
                advreg_core::Error::InvalidOrder(_)
                    | advreg_core::Error::OrderMismatch { .. }
                    | advreg_core::Error::DimensionMismatch(_)
                    | advreg_core::Error::InvalidParameter(_)
            ),
            ExpError::Json(_) | ExpError::Invalid(_) | ExpError::UnknownFigure(_) => true,
            ExpError::Io { .. } | ExpError::Csv(_) => false,
        }
    }
}

pub type ExpResult<T> = std::result::Result<T, ExpError>;
