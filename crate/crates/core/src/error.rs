use thiserror::Error;

use crate::domain::Diagnostic;

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("invalid year-month {0:?}")]
    InvalidMonth(String),
    #[error("unknown case kind {0:?}")]
    UnknownKind(String),
    #[error("score {0} outside [0, 999]")]
    ScoreOutOfRange(i64),
    #[error("contribution {0} outside (0, 1]")]
    ContributionOutOfRange(f64),
    #[error("input rejected with {} diagnostic(s); first: {}", .0.len(), .0.first().map(|d| d.to_string()).unwrap_or_default())]
    Rejected(Vec<Diagnostic>),
}
