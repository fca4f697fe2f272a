use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config parse error: {0}")]
    Parse(String),

    #[error("invalid config `{key}`: {message}")]
    Validation { key: String, message: String },

    #[error("required assumption failed: {0}")]
    Assumption(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("{0}")]
    Divergence(String),

    #[error("property check failed: {0}")]
    Property(String),

    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error(transparent)]
    Core(#[from] smoothtail::Error),

    #[error("run directory: {0}")]
    RunDir(String),
}

impl CliError {
    /// Process exit code: 1 property failure, 2 configuration problem,
    /// 3 numeric divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Property(_) => 1,
            CliError::Divergence(_) => 3,
            CliError::Core(smoothtail::Error::Divergence { .. }) => 3,
            _ => 2,
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }
}
