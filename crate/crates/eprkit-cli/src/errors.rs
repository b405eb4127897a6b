use std::fmt;

/// Command failures, classified by exit code: 2 config, 3 data, 4 convergence.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Convergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Convergence(_) => 4,
        }
    }

    /// Wraps a library error from validating user-supplied settings.
    pub fn config(context: &str, err: impl fmt::Display) -> CliError {
        CliError::Config(format!("{context}: {err}"))
    }

    /// Wraps a library error from reading or interpreting input files.
    pub fn data(context: &str, err: impl fmt::Display) -> CliError {
        CliError::Data(format!("{context}: {err}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Data(msg) => write!(f, "data error: {msg}"),
            CliError::Convergence(msg) => write!(f, "convergence failure: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Classifies errors raised while running a fit or search: numerical
/// non-convergence keeps its own exit code so scripts can retry with
/// different starting points.
pub fn classify_run(context: &str, err: eprkit::Error) -> CliError {
    match err {
        eprkit::Error::NoConvergence { .. } | eprkit::Error::RankDeficient { .. } => {
            CliError::Convergence(format!("{context}: {err}"))
        }
        other => CliError::Data(format!("{context}: {other}")),
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
