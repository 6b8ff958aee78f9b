//! Delayed audit outcomes and success rates per selection strategy.
//!
//! Only [`attach_outcomes`] reads the ground truth. Success rates are computed from the
//! outcomes stored on the cases, so they see exactly what an auditor would have seen.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{AuditOutcome, TaxpayerCase};
use crate::selection::{SelectionDecision, Strategy};
use crate::synth::{historical_outcome, GroundTruth};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutcomeConfig {
    pub delay_months: u32,
    /// Outcomes arrive up to this many months earlier or later than the delay.
    pub jitter_months: u32,
    /// Probability that an audit misses actual fraud.
    pub miss_rate: f64,
    pub seed: u64,
}

impl Default for OutcomeConfig {
    fn default() -> Self {
        OutcomeConfig {
            delay_months: 6,
            jitter_months: 2,
            miss_rate: 0.1,
            seed: 0,
        }
    }
}

/// Records an audit of each id at `clock`, replacing any earlier outcome.
///
/// The outcome becomes visible at `clock + delay ± j` with `j = min(jitter, delay)`, so a
/// zero delay means immediate visibility.
/// Unknown ids are ignored. Returns how many cases were updated.
pub fn attach_outcomes(
    cases: &mut [TaxpayerCase],
    truth: &GroundTruth,
    audited: &BTreeSet<String>,
    clock: u32,
    cfg: &OutcomeConfig,
) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (u64::from(clock) << 32));
    let j = i64::from(cfg.jitter_months.min(cfg.delay_months));
    let mut updated = 0;
    // Cases are visited in id order so the draws do not depend on corpus order.
    let mut order: Vec<usize> = (0..cases.len())
        .filter(|&i| audited.contains(&cases[i].case_id))
        .collect();
    order.sort_by(|&a, &b| cases[a].case_id.cmp(&cases[b].case_id));
    for i in order {
        let case = &mut cases[i];
        let shift = rng.random_range(-j..=j);
        let missed = rng.random_bool(cfg.miss_rate);
        let found = truth.is_fraud(&case.case_id) && !missed;
        let mut outcome = historical_outcome(case, found);
        outcome.available_at = (i64::from(clock) + i64::from(cfg.delay_months) + shift) as u32;
        case.outcome = Some(outcome);
        updated += 1;
    }
    updated
}

/// Maturation below this share adds a caveat to the report.
pub const MATURITY_CAVEAT_SHARE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyStats {
    pub strategy: Strategy,
    pub selected: usize,
    pub matured: usize,
    pub true_frauds: usize,
    /// `true_frauds / matured`, 0 when nothing has matured.
    pub success_rate: f64,
    /// Set when no outcome of this strategy has matured.
    pub immature: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub clock: u32,
    pub delay_months: u32,
    pub strategies: Vec<StrategyStats>,
    pub selected: usize,
    pub matured: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caveat: Option<String>,
}

impl EvaluationReport {
    pub fn stats(&self, strategy: Strategy) -> Option<&StrategyStats> {
        self.strategies.iter().find(|s| s.strategy == strategy)
    }

    pub fn rate(&self, strategy: Strategy) -> f64 {
        self.stats(strategy).map_or(0.0, |s| s.success_rate)
    }

    pub fn matured_share(&self) -> f64 {
        if self.selected == 0 {
            0.0
        } else {
            self.matured as f64 / self.selected as f64
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Evaluation at month {} (outcome delay {} months)",
            self.clock, self.delay_months
        );
        let _ = writeln!(
            out,
            "{:<15} {:>8} {:>8} {:>6} {:>8}",
            "strategy", "selected", "matured", "fraud", "rate"
        );
        for s in &self.strategies {
            let flag = if s.immature {
                "  (no matured outcomes)"
            } else {
                ""
            };
            let _ = writeln!(
                out,
                "{:<15} {:>8} {:>8} {:>6} {:>8.4}{flag}",
                s.strategy.as_str(),
                s.selected,
                s.matured,
                s.true_frauds,
                s.success_rate
            );
        }
        if let Some(c) = &self.caveat {
            let _ = writeln!(out, "{c}");
        }
        out
    }
}

/// Success rate per strategy over the decisions' matured outcomes at `clock`.
pub fn success_rate(
    decisions: &[SelectionDecision],
    cases: &[TaxpayerCase],
    clock: u32,
    delay_months: u32,
) -> EvaluationReport {
    let by_id: BTreeMap<&str, &TaxpayerCase> =
        cases.iter().map(|c| (c.case_id.as_str(), c)).collect();
    let mut counts: BTreeMap<Strategy, (usize, usize, usize)> = BTreeMap::new();
    for d in decisions {
        let e = counts.entry(d.strategy).or_default();
        e.0 += 1;
        let outcome: Option<&AuditOutcome> = by_id
            .get(d.case_id.as_str())
            .and_then(|c| c.outcome.as_ref());
        if let Some(o) = outcome.filter(|o| o.audited && o.is_visible_at(clock)) {
            e.1 += 1;
            if o.fraud_found {
                e.2 += 1;
            }
        }
    }
    let strategies: Vec<StrategyStats> = counts
        .into_iter()
        .map(
            |(strategy, (selected, matured, true_frauds))| StrategyStats {
                strategy,
                selected,
                matured,
                true_frauds,
                success_rate: if matured == 0 {
                    0.0
                } else {
                    true_frauds as f64 / matured as f64
                },
                immature: matured == 0,
            },
        )
        .collect();
    let selected: usize = strategies.iter().map(|s| s.selected).sum();
    let matured: usize = strategies.iter().map(|s| s.matured).sum();
    let mut report = EvaluationReport {
        clock,
        delay_months,
        strategies,
        selected,
        matured,
        caveat: None,
    };
    if report.matured_share() < MATURITY_CAVEAT_SHARE {
        report.caveat = Some(format!(
            "Caveat: only {matured} of {selected} selected cases have matured audit outcomes; rates are preliminary."
        ));
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub runs: usize,
    pub mean_rate: f64,
    pub min_rate: f64,
    pub max_rate: f64,
    pub selected: usize,
    pub matured: usize,
    pub true_frauds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyComparison {
    pub runs: usize,
    pub strategies: Vec<StrategySummary>,
}

impl StrategyComparison {
    pub fn summary(&self, strategy: Strategy) -> Option<&StrategySummary> {
        self.strategies.iter().find(|s| s.strategy == strategy)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Strategy comparison over {} run(s)", self.runs);
        let _ = writeln!(
            out,
            "{:<15} {:>5} {:>8} {:>8} {:>8} {:>8} {:>8} {:>6}",
            "strategy", "runs", "mean", "min", "max", "selected", "matured", "fraud"
        );
        for s in &self.strategies {
            let _ = writeln!(
                out,
                "{:<15} {:>5} {:>8.4} {:>8.4} {:>8.4} {:>8} {:>8} {:>6}",
                s.strategy.as_str(),
                s.runs,
                s.mean_rate,
                s.min_rate,
                s.max_rate,
                s.selected,
                s.matured,
                s.true_frauds
            );
        }
        out
    }
}

/// Mean, min and max success rate per strategy across runs. A strategy absent from a
/// run is not counted for that run.
pub fn compare_strategies(runs: &[EvaluationReport]) -> StrategyComparison {
    let mut per: BTreeMap<Strategy, Vec<&StrategyStats>> = BTreeMap::new();
    for run in runs {
        for s in &run.strategies {
            per.entry(s.strategy).or_default().push(s);
        }
    }
    let strategies = per
        .into_iter()
        .map(|(strategy, stats)| {
            let rates: Vec<f64> = stats.iter().map(|s| s.success_rate).collect();
            StrategySummary {
                strategy,
                runs: stats.len(),
                mean_rate: rates.iter().sum::<f64>() / rates.len() as f64,
                min_rate: rates.iter().copied().fold(f64::INFINITY, f64::min),
                max_rate: rates.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                selected: stats.iter().map(|s| s.selected).sum(),
                matured: stats.iter().map(|s| s.matured).sum(),
                true_frauds: stats.iter().map(|s| s.true_frauds).sum(),
            }
        })
        .collect();
    StrategyComparison {
        runs: runs.len(),
        strategies,
    }
}
