//! Scenario loading, the simulation loop and its outputs.

pub mod run;
pub mod scenario;
pub mod summary;
pub mod trace;

use thiserror::Error;

pub use run::{build_detector, run, write_outputs, RunOutput};
pub use scenario::{load_scenario, parse_scenario, ModeSelection, ScenarioConfig};
pub use summary::{summarize, RunSummary};
pub use trace::{read_trace, write_trace, TraceRow};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{origin}:{line}:{column}: {message}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{origin}: invalid scenario: {message}")]
    Validation { origin: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed trace: {message}")]
    Trace { message: String },
    #[error("trace has no rows")]
    EmptyTrace,
}

impl HarnessError {
    /// Process exit status: 2 for bad input, 3 for I/O failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Io { .. } => 3,
            _ => 2,
        }
    }
}
