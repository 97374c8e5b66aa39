use lie_errdyn::LieError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error("numerical abort: {0}")]
    Numerical(#[from] LieError),
}

impl CliError {
    /// 0 pass, 1 usage/config, 2 check failure, 3 numerical abort.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) | CliError::Csv(_) => 1,
            CliError::CheckFailed(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}
