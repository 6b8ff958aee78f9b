use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FraudPattern {
    MtRing,
    LowPersonnel,
    UnderreportedTax,
    None,
}

/// Planted label of one generated case. Read only by tests and outcome attachment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub case_id: String,
    pub is_fraud: bool,
    pub pattern: FraudPattern,
    /// Size archetype the case was sampled from.
    pub archetype: usize,
    /// Ring index for ring members.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ring: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    records: BTreeMap<String, TruthRecord>,
}

impl GroundTruth {
    pub fn new(records: impl IntoIterator<Item = TruthRecord>) -> Self {
        GroundTruth {
            records: records
                .into_iter()
                .map(|r| (r.case_id.clone(), r))
                .collect(),
        }
    }

    pub fn get(&self, case_id: &str) -> Option<&TruthRecord> {
        self.records.get(case_id)
    }

    pub fn is_fraud(&self, case_id: &str) -> bool {
        self.get(case_id).is_some_and(|r| r.is_fraud)
    }

    pub fn records(&self) -> impl Iterator<Item = &TruthRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn fraud_count(&self) -> usize {
        self.records.values().filter(|r| r.is_fraud).count()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in self.records.values() {
            out.push_str(&serde_json::to_string(r).expect("truth serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, String> {
        let records: Result<Vec<TruthRecord>, String> = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
            .collect();
        Ok(GroundTruth::new(records?))
    }
}
