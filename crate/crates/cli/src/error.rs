use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Failure of a run, grouped by the process exit code it maps to.
#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invariant checks failed: {}", .0.join("; "))]
    SuiteFailed(Vec<String>),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Io { .. } => 2,
            RunError::Numerical(_) => 3,
            RunError::SuiteFailed(_) => 4,
        }
    }

    pub(crate) fn numerical(e: impl std::fmt::Display) -> Self {
        RunError::Numerical(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_failure_class() {
        assert_eq!(RunError::Config("x".into()).exit_code(), 2);
        assert_eq!(RunError::Numerical("x".into()).exit_code(), 3);
        assert_eq!(RunError::SuiteFailed(vec!["x".into()]).exit_code(), 4);
        let io = RunError::Io { path: "p".into(), source: io::Error::other("denied") };
        assert_eq!(io.exit_code(), 2);
    }
}
