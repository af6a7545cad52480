use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("{field}: {value} outside [{lo}, {hi}]")]
    Range {
        field: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error(transparent)]
    Core(#[from] mfrw_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{}: malformed metrics file: {reason}", path.display())]
    Metrics { path: PathBuf, reason: String },
    #[error("non-finite loss at epoch {epoch} ({split}); aborting")]
    NonFiniteLoss { epoch: usize, split: &'static str },
    #[error("{failed} of {total} sweep cells failed")]
    SweepFailed { failed: usize, total: usize },
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> CliError {
    CliError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}

pub(crate) fn csv_err(path: impl Into<PathBuf>) -> impl FnOnce(csv::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Csv { path, source }
}
