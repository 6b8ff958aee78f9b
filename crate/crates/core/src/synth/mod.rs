//! Synthetic corpus generator with planted fraud patterns and ground truth.

mod generator;
mod truth;

use std::fs;
use std::io;
use std::path::Path;

pub(crate) use generator::historical_outcome;
pub use generator::{generate_corpus, GeneratedCorpus, GeneratorConfig, GeneratorError};
pub use truth::{FraudPattern, GroundTruth, TruthRecord};

use crate::domain::write_cases_jsonl;
use crate::sources::{write_registry, write_uid_register, write_watchlist};

pub const CASES_FILE: &str = "cases.jsonl";
pub const WATCHLIST_FILE: &str = "watchlist.csv";
pub const REGISTRY_FILE: &str = "registry.csv";
pub const UID_REGISTER_FILE: &str = "vies.csv";
pub const TRUTH_FILE: &str = "truth.jsonl";

impl GeneratedCorpus {
    /// Writes the five corpus files into `dir`, creating it if needed.
    pub fn write_to_dir(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CASES_FILE), write_cases_jsonl(&self.cases))?;
        fs::write(dir.join(WATCHLIST_FILE), write_watchlist(&self.watchlist))?;
        fs::write(dir.join(REGISTRY_FILE), write_registry(&self.registry))?;
        fs::write(
            dir.join(UID_REGISTER_FILE),
            write_uid_register(&self.uid_register),
        )?;
        fs::write(dir.join(TRUTH_FILE), self.truth.to_jsonl())?;
        Ok(())
    }
}
