//! Hybrid rule-based audit case selection.
//!
//! Expert rules and embedded predictive models are combined into a 0–999
//! fraudulence score per taxpayer case; selection strategies turn scores and
//! other criteria into an audit plan, and the evaluation module measures
//! success rates against delayed audit outcomes.

pub mod domain;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod rules;
pub mod scoring;
pub mod selection;
pub mod simulation;
pub mod sources;
pub mod synth;
#[doc(hidden)]
pub mod testkit;

pub use domain::{
    AuditOutcome, CaseKind, Corpus, CorpusClock, Diagnostic, FeatureSchema, FeatureValue,
    FraudScore, Money, TaxpayerCase, TierDefaults, WeightTier, YearMonth,
};
pub use error::DomainError;
