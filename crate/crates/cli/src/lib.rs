//! Driver code behind the `dalton` binary.

pub mod config;
pub mod report;
pub mod serve;
pub mod sim;

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PORT_BUSY: i32 = 3;

/// A message plus the process exit code it maps to.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn runtime(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::config(message)
    }

    pub fn port_busy(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_PORT_BUSY,
            message: message.into(),
        }
    }
}

/// Seconds as a bare integer, or a humantime span such as `2h` or `90s`.
pub fn parse_span(s: &str) -> Result<std::time::Duration, String> {
    if let Ok(secs) = s.parse::<u64>() {
        return Ok(std::time::Duration::from_secs(secs));
    }
    humantime::parse_duration(s).map_err(|e| e.to_string())
}
