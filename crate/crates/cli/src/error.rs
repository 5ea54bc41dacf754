use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad or missing configuration; exit status 2.
    #[error("config error: {0}")]
    Config(String),
    /// Failure while running; exit status 1.
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Runtime(_) => ExitCode::from(1),
        }
    }

    /// Wraps a core error, tagging it with the module that raised it.
    pub fn from_core(module: &str, e: autores::Error) -> Self {
        use autores::Error as E;
        match e {
            E::InvalidParameter { .. } | E::NonPresetSchedule(_) | E::OutOfClass { .. } => {
                CliError::Config(format!("{module}: {e}"))
            }
            other => CliError::Runtime(format!("{module}: {other}")),
        }
    }
}

pub trait Context<T> {
    fn in_module(self, module: &str) -> Result<T, CliError>;
}

impl<T> Context<T> for autores::Result<T> {
    fn in_module(self, module: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::from_core(module, e))
    }
}
