use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),
    #[error("{0}")]
    Runtime(String),
}

impl RunError {
    /// Process exit code: 2 for validation errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

impl From<crabctl_core::Error> for RunError {
    fn from(e: crabctl_core::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl From<csv::Error> for RunError {
    fn from(e: csv::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for RunError {
    fn from(e: serde_json::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}
