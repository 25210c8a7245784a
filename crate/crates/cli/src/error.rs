use std::path::Path;

use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const VALIDATION: i32 = 2;
    pub const NUMERICAL: i32 = 3;
    pub const CONVERGENCE: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Toml {
        path: String,
        source: toml::de::Error,
    },

    #[error("{context}: {source}")]
    Core {
        context: String,
        source: defect_chain::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use defect_chain::Error as E;
        match self {
            Self::Config(_) | Self::Io { .. } | Self::Toml { .. } => exit::VALIDATION,
            Self::Core { source, .. } => match source {
                E::Numerical(_) | E::Fit { .. } | E::Initialization(_) | E::Diagnostic(_) | E::External(_) => {
                    exit::NUMERICAL
                }
                _ => exit::VALIDATION,
            },
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Attaches a context string to core errors.
pub trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T>;
}

impl<T> Context<T> for defect_chain::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| CliError::Core {
            context: what(),
            source,
        })
    }
}
