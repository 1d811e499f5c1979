use std::path::{Path, PathBuf};

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Malformed file contents, located by byte offset.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("byte {offset}: {detail}")]
pub struct FormatError {
    pub offset: usize,
    pub detail: String,
}

impl FormatError {
    pub fn new(offset: usize, detail: impl Into<String>) -> Self {
        Self { offset, detail: detail.into() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: {source}", path.display())]
    Format { path: PathBuf, source: FormatError },

    #[error("config key `{key}`: {detail}")]
    Config { key: String, detail: String },

    #[error(transparent)]
    Core(#[from] cis_core::Error),

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, source: FormatError) -> Self {
        CliError::Format { path: path.to_path_buf(), source }
    }

    pub fn config(key: impl Into<String>, detail: impl Into<String>) -> Self {
        CliError::Config { key: key.into(), detail: detail.into() }
    }

    /// Short category used in the one-line error report.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Format { .. } => "format",
            CliError::Config { .. } => "config",
            CliError::Core(_) => "core",
            CliError::Usage(_) => "usage",
        }
    }

    /// `error kind=<kind>: <message>` on a single line.
    pub fn report(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error kind={}: {msg}", self.kind())
    }
}
