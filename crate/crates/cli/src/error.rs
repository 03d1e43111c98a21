use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration or missing inputs; one entry per offending key.
    #[error("configuration error:\n{}", .0.iter().map(|p| format!("  - {p}")).collect::<Vec<_>>().join("\n"))]
    Config(Vec<String>),
    #[error(transparent)]
    Runtime(#[from] melhubert::Error),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn config(problems: Vec<String>) -> Self {
        CliError::Config(problems)
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            _ => ExitCode::from(3),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
