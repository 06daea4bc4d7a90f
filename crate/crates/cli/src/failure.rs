use std::fmt;

use acne_core::Error;

pub const INPUT: u8 = 2;
pub const TRAINING: u8 = 3;
pub const SCORING: u8 = 4;

/// A failed command: exit code, message and, for scoring failures, the
/// machine-readable error code.
#[derive(Debug)]
pub struct Failure {
    pub exit_code: u8,
    pub message: String,
    pub code: Option<&'static str>,
}

impl Failure {
    pub fn input(message: impl fmt::Display) -> Self {
        Self {
            exit_code: INPUT,
            message: message.to_string(),
            code: None,
        }
    }

    pub fn training(e: Error) -> Self {
        match e {
            Error::Divergence { .. } => Self {
                exit_code: TRAINING,
                message: e.to_string(),
                code: None,
            },
            other => Self::input(other),
        }
    }

    pub fn scoring(e: Error) -> Self {
        match e {
            Error::Io { .. } | Error::Config(_) | Error::ModelFormat(_) => Self::input(e),
            other => Self {
                exit_code: SCORING,
                code: Some(acne_service::error_code(&other)),
                message: other.to_string(),
            },
        }
    }

    /// The line written to standard error.
    pub fn render(&self) -> String {
        match self.code {
            Some(code) => serde_json::json!({ "code": code, "message": self.message }).to_string(),
            None => format!("error: {}", self.message),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self::input(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::input(e)
    }
}
