use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{CaseKind, FraudScore, TierDefaults, WeightTier};
use crate::rules::{format_number, Literal, RuleSource};

/// Appended to every explanation document.
pub const REGULAR_AUDIT_NOTICE: &str =
    "Notice: the score ranks cases for attention only. Conduct a regular audit of the received case.";

/// Shown instead of an empty explanation of a model-backed rule.
pub const LIMITED_EXPLANATION_NOTICE: &str =
    "model-derived indication — limited explanation available";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggeredRule {
    pub rule_name: String,
    pub tier: WeightTier,
    pub contribution: f64,
    pub source: RuleSource,
    /// Rendered explanation; empty for model-backed rules without a template.
    pub explanation: String,
    /// Values of the condition's inputs and the template's placeholders, keyed by
    /// canonical expression text.
    pub inputs_snapshot: BTreeMap<String, Literal>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotApplicableRule {
    pub rule_name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynergyBonus {
    pub rule_names: Vec<String>,
    pub bonus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreReport {
    pub case_id: String,
    pub kind: CaseKind,
    pub score: FraudScore,
    pub triggered: Vec<TriggeredRule>,
    pub not_applicable: Vec<NotApplicableRule>,
    pub deactivated: Vec<String>,
    pub synergy_bonuses: Vec<SynergyBonus>,
    pub ruleset_digest: String,
    pub tier_defaults: TierDefaults,
    /// Simulated month index of the batch.
    pub scored_at: u32,
}

impl ScoreReport {
    pub fn contributions(&self) -> Vec<f64> {
        self.triggered.iter().map(|t| t.contribution).collect()
    }

    pub fn bonuses(&self) -> Vec<f64> {
        self.synergy_bonuses.iter().map(|s| s.bonus).collect()
    }

    pub fn is_triggered(&self, rule: &str) -> bool {
        self.triggered.iter().any(|t| t.rule_name == rule)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("reports serialize")
    }
}

pub fn write_reports_jsonl(reports: &[ScoreReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&r.to_json_line());
        out.push('\n');
    }
    out
}

/// SHA-256 of the JSON Lines form of a batch.
pub fn reports_digest(reports: &[ScoreReport]) -> String {
    hex::encode(Sha256::digest(write_reports_jsonl(reports).as_bytes()))
}

pub fn read_reports_jsonl(text: &str) -> Result<Vec<ScoreReport>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

fn literal_text(v: &Literal) -> String {
    match v {
        Literal::Num(n) => format_number(*n),
        Literal::Str(s) => format!("{s:?}"),
        Literal::Bool(b) => b.to_string(),
    }
}

/// Plain-text explanation document for auditors.
pub fn render_explanations(report: &ScoreReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Case {} ({})", report.case_id, report.kind);
    let _ = writeln!(out, "Fraudulence score: {} / 999", report.score);
    let _ = writeln!(
        out,
        "Rule base {} scored at month {}",
        report.ruleset_digest, report.scored_at
    );
    for t in &report.triggered {
        out.push('\n');
        let _ = writeln!(
            out,
            "[{} / {}] {} (contribution {})",
            t.tier,
            t.tier.color(),
            t.rule_name,
            format_number(t.contribution)
        );
        let text = if t.explanation.is_empty() {
            LIMITED_EXPLANATION_NOTICE
        } else {
            &t.explanation
        };
        let _ = writeln!(out, "  {text}");
        if !t.inputs_snapshot.is_empty() {
            let inputs: Vec<String> = t
                .inputs_snapshot
                .iter()
                .map(|(k, v)| format!("{k} = {}", literal_text(v)))
                .collect();
            let _ = writeln!(out, "  inputs: {}", inputs.join(", "));
        }
    }
    if !report.synergy_bonuses.is_empty() {
        out.push('\n');
        for s in &report.synergy_bonuses {
            let _ = writeln!(
                out,
                "Combination bonus {} for {}",
                format_number(s.bonus),
                s.rule_names.join(" + ")
            );
        }
    }
    if !report.not_applicable.is_empty() {
        out.push('\n');
        for n in &report.not_applicable {
            let _ = writeln!(out, "Not applicable: {} ({})", n.rule_name, n.reason);
        }
    }
    if !report.deactivated.is_empty() {
        out.push('\n');
        let _ = writeln!(out, "Deactivated: {}", report.deactivated.join(", "));
    }
    out.push('\n');
    out.push_str(REGULAR_AUDIT_NOTICE);
    out.push('\n');
    out
}
