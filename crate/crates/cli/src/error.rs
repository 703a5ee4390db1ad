use thiserror::Error;

/// Failure of a subcommand, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0:#}")]
    Config(anyhow::Error),

    #[error("{0:#}")]
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn config(msg: impl std::fmt::Display) -> Self {
        CliError::Config(anyhow::anyhow!("{msg}"))
    }

    pub fn runtime(msg: impl std::fmt::Display) -> Self {
        CliError::Runtime(anyhow::anyhow!("{msg}"))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<slac_core::Error> for CliError {
    fn from(e: slac_core::Error) -> Self {
        use slac_core::Error as E;
        match e {
            E::Config(_) | E::Topology(_) | E::Dimension { .. } => CliError::Config(e.into()),
            _ => CliError::Runtime(e.into()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches a path or action to an error without changing its class.
pub(crate) trait Context<T> {
    fn context(self, what: impl std::fmt::Display) -> CliResult<T>;
}

impl<T, E: Into<CliError>> Context<T> for Result<T, E> {
    fn context(self, what: impl std::fmt::Display) -> CliResult<T> {
        self.map_err(|e| match e.into() {
            CliError::Config(inner) => CliError::Config(inner.context(what.to_string())),
            CliError::Runtime(inner) => CliError::Runtime(inner.context(what.to_string())),
        })
    }
}
