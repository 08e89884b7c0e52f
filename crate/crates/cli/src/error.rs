use thiserror::Error;

/// Failure classes of a CLI invocation, each with its own exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("run diverged: non-finite value at iteration {k}")]
    Divergence { k: usize },
    #[error("diagnostics violation: {0}")]
    Diagnostics(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] aggne_core::Error),
}

impl CliError {
    /// 0 success, 2 validation (including parse), 3 divergence,
    /// 4 diagnostics violation, 5 I/O, 1 any other library failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Validation(_) => 2,
            CliError::Divergence { .. } => 3,
            CliError::Diagnostics(_) => 4,
            CliError::Io(_) => 5,
            CliError::Core(_) => 1,
        }
    }

    pub fn io(context: impl std::fmt::Display, err: std::io::Error) -> Self {
        CliError::Io(format!("{context}: {err}"))
    }

    /// Prefixes the message with the config file it came from.
    pub fn in_config(self, path: &std::path::Path) -> Self {
        let at = path.display();
        match self {
            CliError::Parse(m) => CliError::Parse(format!("{at}: {m}")),
            CliError::Validation(m) => CliError::Validation(format!("{at}: {m}")),
            CliError::Diagnostics(m) => CliError::Diagnostics(format!("{at}: {m}")),
            CliError::Io(m) => CliError::Io(format!("{at}: {m}")),
            other => other,
        }
    }
}
