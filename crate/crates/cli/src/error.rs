use std::fmt;

use fpf_core::FpfError;

/// Failures grouped by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable or incomplete configuration, bad arguments, bad input files.
    Config(String),
    /// The model or a solver precondition is violated.
    Model(String),
    /// The filter stopped mid-run.
    Abort(String),
    /// Output could not be written.
    Io(String),
    /// `verify` ran and some checks failed.
    ChecksFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Model(_) => 3,
            CliError::Abort(_) => 4,
            CliError::Io(_) | CliError::ChecksFailed(_) => 1,
        }
    }

    /// Classifies a library error raised while running a filter.
    pub fn from_run(e: FpfError) -> Self {
        match e {
            FpfError::Inadmissible { step, indices } => CliError::Abort(format!(
                "filter aborted: inadmissible control at step {step}, {} particle(s) flagged",
                indices.len()
            )),
            FpfError::NonFiniteDrift(_)
            | FpfError::WeightCollapse
            | FpfError::Instability
            | FpfError::RiccatiUnstable
            | FpfError::GramSingular
            | FpfError::Singular(_) => CliError::Abort(format!("filter aborted: {e}")),
            FpfError::Io(msg) => CliError::Io(msg),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Model(m) | CliError::Abort(m) | CliError::Io(m) | CliError::ChecksFailed(m) => {
                f.write_str(m)
            }
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
