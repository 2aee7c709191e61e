//! Stage-tagged errors mapped onto process exit codes:
//! 2 validation, 3 data, 4 fit failure.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Data,
    Fit,
}

#[derive(Debug)]
pub struct StageError {
    pub kind: ErrorKind,
    pub stage: Option<&'static str>,
    pub message: String,
}

impl StageError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Validation,
            stage: None,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Data,
            stage: None,
            message: message.into(),
        }
    }

    pub fn fit(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Fit,
            stage: None,
            message: message.into(),
        }
    }

    /// Missing upstream artifact, pointing at the subcommand that makes it.
    pub fn missing_artifact(path: &std::path::Path, producer: &str) -> Self {
        Self::data(format!(
            "missing {}; run `delaycast {producer}` first",
            path.display()
        ))
    }

    pub fn in_stage(mut self, stage: &'static str) -> Self {
        self.stage.get_or_insert(stage);
        self
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Validation => 2,
            ErrorKind::Data => 3,
            ErrorKind::Fit => 4,
        }
    }
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.stage {
            Some(stage) => write!(f, "{stage}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for StageError {}

impl From<std::io::Error> for StageError {
    fn from(e: std::io::Error) -> Self {
        Self::data(format!("io error: {e}"))
    }
}

impl From<csv::Error> for StageError {
    fn from(e: csv::Error) -> Self {
        Self::data(format!("csv error: {e}"))
    }
}
