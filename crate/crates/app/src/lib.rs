//! Command line and HTTP front ends for the audit case selection pipeline.

pub mod api;
pub mod cli;
pub mod config;
pub mod workspace;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    /// Bad command line or arguments.
    #[error("{0}")]
    Usage(String),
    /// Missing, unreadable or invalid data.
    #[error("{0}")]
    Data(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Data(_) => 2,
        }
    }
}
