use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NON_CONVERGENCE: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("config error: {key}: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Core(#[from] bregbox::Error),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("verification failed: {0}")]
    Verify(String),
}

impl CliError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config { key: key.into(), message: message.into() }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io { context: context.into(), source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Syntax { .. } | CliError::Config { .. } => EXIT_CONFIG,
            CliError::Core(e) if e.is_non_convergence() => EXIT_NON_CONVERGENCE,
            CliError::Core(_) | CliError::Io { .. } | CliError::Verify(_) => EXIT_FAILURE,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::config("tol", "bad").exit_code(), EXIT_CONFIG);
        assert_eq!(CliError::Syntax { line: 1, message: "x".into() }.exit_code(), EXIT_CONFIG);
        let nc = bregbox::Error::NonConvergence { solver: "pg", iterations: 3, residual: 1.0, best: None };
        let wrapped = bregbox::Error::Iteration { k: 4, source: Box::new(nc) };
        assert_eq!(CliError::Core(wrapped).exit_code(), EXIT_NON_CONVERGENCE);
        assert_eq!(CliError::Verify("adjoint".into()).exit_code(), EXIT_FAILURE);
    }

    #[test]
    fn config_message_names_the_key() {
        let msg = CliError::config("schedule.alpha", "must be positive").to_string();
        assert!(msg.contains("schedule.alpha"));
    }
}
