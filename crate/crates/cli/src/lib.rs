//! Training, evaluation and plotting commands behind the `ask1` binary.

pub mod config;
pub mod plot;
pub mod run;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad config, flags, input files or checkpoint layout.
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    /// The run started but could not finish.
    #[error("training failed: {0}")]
    Training(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Training(_) => 2,
        }
    }
}

/// Cap worker threads from `ASK1_THREADS`; unset leaves the default pool.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("ASK1_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| CliError::Config(format!("ASK1_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Config(format!("thread pool: {e}")))
}
