use std::fmt;
use std::path::Path;

use autolabel_core::autolabel::AutolabelError;
use autolabel_core::eval::EvalError;
use autolabel_core::labels::LabelError;
use autolabel_core::simdet::SimError;

/// Failure classes, each with its own process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration.
    Usage(String),
    Io(String),
    /// Input files parsed but their contents are unusable.
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Data(_) => 4,
        }
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Data(m) => write!(f, "invalid data: {m}"),
        }
    }
}

impl From<LabelError> for CliError {
    fn from(e: LabelError) -> Self {
        match e {
            LabelError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<AutolabelError> for CliError {
    fn from(e: AutolabelError) -> Self {
        match e {
            AutolabelError::InvalidThreshold(_) | AutolabelError::NoCandidates | AutolabelError::InvalidMatchIou(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidParam { .. } | SimError::InvalidMix { .. } => CliError::Usage(e.to_string()),
            SimError::NotEnoughEligible { .. } => CliError::Data(e.to_string()),
        }
    }
}
