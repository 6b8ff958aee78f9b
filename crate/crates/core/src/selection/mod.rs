//! Case-selection strategies and their composition into an audit plan.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{CaseKind, FraudScore, Money, TaxpayerCase, YearMonth};
use crate::scoring::ScoreReport;
use crate::sources::months_since_last_vat_return;

pub const DEFAULT_LIABILITY_THRESHOLD: Money = Money::from_euros(10_000);

/// Months without a VAT return after which a missing trader is a new-entry candidate.
pub const NEW_ENTRY_GAP_MONTHS: i64 = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    Time,
    GroupRandom,
    Individual,
    NewEntry,
    Risk,
    RandomControl,
}

impl Strategy {
    /// Composition order.
    pub const ALL: [Strategy; 6] = [
        Strategy::Time,
        Strategy::GroupRandom,
        Strategy::Individual,
        Strategy::NewEntry,
        Strategy::Risk,
        Strategy::RandomControl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Time => "TIME",
            Strategy::GroupRandom => "GROUP_RANDOM",
            Strategy::Individual => "INDIVIDUAL",
            Strategy::NewEntry => "NEW_ENTRY",
            Strategy::Risk => "RISK",
            Strategy::RandomControl => "RANDOM_CONTROL",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionDecision {
    pub case_id: String,
    pub strategy: Strategy,
    pub rationale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<FraudScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimated_liability_eur: Option<Money>,
}

impl SelectionDecision {
    fn new(case_id: &str, strategy: Strategy, rationale: String) -> Self {
        SelectionDecision {
            case_id: case_id.to_string(),
            strategy,
            rationale,
            score: None,
            estimated_liability_eur: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SignalKind {
    Inconsistency,
    Restructuring,
    Complaint,
    Mandated,
}

impl fmt::Display for SignalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SignalKind::Inconsistency => "INCONSISTENCY",
            SignalKind::Restructuring => "RESTRUCTURING",
            SignalKind::Complaint => "COMPLAINT",
            SignalKind::Mandated => "MANDATED",
        };
        f.write_str(s)
    }
}

/// A warning signal raised by an auditor for one case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signal {
    pub case_id: String,
    pub kind: SignalKind,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("liability threshold must be positive, got {0}")]
    Threshold(Money),
    #[error("invalid plan: {0}")]
    Json(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionPlan {
    /// How many cases each strategy may contribute; absent strategies contribute none.
    #[serde(default)]
    pub counts: BTreeMap<Strategy, usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub liability_threshold_eur: Money,
}

fn default_threshold() -> Money {
    DEFAULT_LIABILITY_THRESHOLD
}

impl Default for SelectionPlan {
    fn default() -> Self {
        SelectionPlan {
            counts: BTreeMap::new(),
            seed: 0,
            liability_threshold_eur: DEFAULT_LIABILITY_THRESHOLD,
        }
    }
}

impl SelectionPlan {
    pub fn count(&self, strategy: Strategy) -> usize {
        self.counts.get(&strategy).copied().unwrap_or(0)
    }

    pub fn with_count(mut self, strategy: Strategy, n: usize) -> Self {
        self.counts.insert(strategy, n);
        self
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.liability_threshold_eur <= Money::ZERO {
            return Err(PlanError::Threshold(self.liability_threshold_eur));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, PlanError> {
        let plan: SelectionPlan =
            serde_json::from_str(text).map_err(|e| PlanError::Json(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

/// Cases with the oldest `last_audited_year` first; never-audited cases come before all others.
pub fn select_by_time(cases: &[TaxpayerCase], n: usize) -> Vec<SelectionDecision> {
    by_time(&cases.iter().collect::<Vec<_>>(), n)
}

fn by_time(cases: &[&TaxpayerCase], n: usize) -> Vec<SelectionDecision> {
    let mut order: Vec<&TaxpayerCase> = cases.to_vec();
    order.sort_by(|a, b| {
        a.last_audited_year
            .cmp(&b.last_audited_year)
            .then_with(|| a.case_id.cmp(&b.case_id))
    });
    order
        .into_iter()
        .take(n)
        .map(|c| {
            let why = match c.last_audited_year {
                Some(y) => format!("last audited year {y}"),
                None => "never audited".to_string(),
            };
            SelectionDecision::new(&c.case_id, Strategy::Time, why)
        })
        .collect()
}

/// Uniform sample without replacement over the cases sorted by id.
fn sample_ids<'a>(cases: &[&'a TaxpayerCase], n: usize, seed: u64) -> Vec<&'a TaxpayerCase> {
    let mut pool: Vec<&TaxpayerCase> = cases.to_vec();
    pool.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n.min(pool.len());
    let mut picked: Vec<&TaxpayerCase> = sample(&mut rng, pool.len(), n)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picked.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    picked
}

pub fn select_group_random(cases: &[TaxpayerCase], n: usize, seed: u64) -> Vec<SelectionDecision> {
    let refs: Vec<&TaxpayerCase> = cases.iter().collect();
    group_random(&refs, n, seed)
}

fn group_random(cases: &[&TaxpayerCase], n: usize, seed: u64) -> Vec<SelectionDecision> {
    sample_ids(cases, n, seed)
        .into_iter()
        .map(|c| {
            SelectionDecision::new(
                &c.case_id,
                Strategy::GroupRandom,
                format!("random group selection (seed {seed})"),
            )
        })
        .collect()
}

/// One decision per flagged case, in case-id order. Signals for unknown cases are ignored.
pub fn select_individual(cases: &[TaxpayerCase], signals: &[Signal]) -> Vec<SelectionDecision> {
    individual(&cases.iter().collect::<Vec<_>>(), signals)
}

fn individual(cases: &[&TaxpayerCase], signals: &[Signal]) -> Vec<SelectionDecision> {
    let known: BTreeSet<&str> = cases.iter().map(|c| c.case_id.as_str()).collect();
    let mut by_case: BTreeMap<&str, Vec<&Signal>> = BTreeMap::new();
    for s in signals
        .iter()
        .filter(|s| known.contains(s.case_id.as_str()))
    {
        by_case.entry(&s.case_id).or_default().push(s);
    }
    by_case
        .into_iter()
        .map(|(id, sigs)| {
            let parts: Vec<String> = sigs
                .iter()
                .map(|s| {
                    if s.note.is_empty() {
                        s.kind.to_string()
                    } else {
                        format!("{}: {}", s.kind, s.note)
                    }
                })
                .collect();
            SelectionDecision::new(id, Strategy::Individual, parts.join("; "))
        })
        .collect()
}

/// Missing traders without a VAT return for more than two years.
pub fn select_new_entries(cases: &[TaxpayerCase], now: YearMonth) -> Vec<SelectionDecision> {
    new_entries(&cases.iter().collect::<Vec<_>>(), now)
}

fn new_entries(cases: &[&TaxpayerCase], now: YearMonth) -> Vec<SelectionDecision> {
    let mut out: Vec<SelectionDecision> = cases
        .iter()
        .filter(|c| c.kind == CaseKind::MissingTrader)
        .filter_map(|c| {
            let gap = months_since_last_vat_return(c, now).ok()?;
            (gap > NEW_ENTRY_GAP_MONTHS).then(|| {
                let why = if c.last_filed_period().is_some() {
                    format!("no VAT return for {gap} months")
                } else {
                    format!("no VAT return since registration {gap} months ago")
                };
                SelectionDecision::new(&c.case_id, Strategy::NewEntry, why)
            })
        })
        .collect();
    out.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    out
}

/// Reported tax base of a case: the larger of declared output and claimed input tax.
pub fn tax_base(case: &TaxpayerCase) -> Money {
    let eur = |f| {
        case.number(f)
            .filter(|v| v.is_finite() && *v > 0.0)
            .unwrap_or(0.0)
    };
    Money::from_eur_f64(eur("input_tax_eur").max(eur("output_tax_eur")))
}

/// Estimated liability: score / 999 as fraud probability times the tax base, rounded
/// half up to the cent in integer arithmetic.
pub fn estimate_liability(score: FraudScore, case: &TaxpayerCase) -> Money {
    let num = i128::from(score.value()) * i128::from(tax_base(case).cents());
    let cents = (2 * num + 999) / (2 * 999);
    Money::from_cents(cents as i64)
}

pub fn liabilities(reports: &[ScoreReport], cases: &[TaxpayerCase]) -> BTreeMap<String, Money> {
    let by_id: BTreeMap<&str, &TaxpayerCase> =
        cases.iter().map(|c| (c.case_id.as_str(), c)).collect();
    reports
        .iter()
        .filter_map(|r| {
            by_id
                .get(r.case_id.as_str())
                .map(|c| (r.case_id.clone(), estimate_liability(r.score, c)))
        })
        .collect()
}

/// Top `n` reports by score among cases whose estimated liability reaches `threshold`.
/// Cases without a liability estimate are not eligible.
pub fn select_by_risk(
    reports: &[ScoreReport],
    liabilities: &BTreeMap<String, Money>,
    threshold: Money,
    n: usize,
) -> Vec<SelectionDecision> {
    let mut eligible: Vec<(&ScoreReport, Money)> = reports
        .iter()
        .filter_map(|r| {
            liabilities
                .get(&r.case_id)
                .filter(|l| **l >= threshold)
                .map(|l| (r, *l))
        })
        .collect();
    eligible.sort_by(|(a, _), (b, _)| {
        b.score
            .cmp(&a.score)
            .then_with(|| a.case_id.cmp(&b.case_id))
    });
    eligible
        .into_iter()
        .take(n)
        .map(|(r, l)| SelectionDecision {
            case_id: r.case_id.clone(),
            strategy: Strategy::Risk,
            rationale: format!("fraudulence score {} with estimated liability {l}", r.score),
            score: Some(r.score),
            estimated_liability_eur: Some(l),
        })
        .collect()
}

/// Random control sample drawn from the cases not in `exclude`.
pub fn select_random_control(
    cases: &[TaxpayerCase],
    n: usize,
    seed: u64,
    exclude: &BTreeSet<String>,
) -> Vec<SelectionDecision> {
    let pool: Vec<&TaxpayerCase> = cases
        .iter()
        .filter(|c| !exclude.contains(&c.case_id))
        .collect();
    random_control(&pool, n, seed)
}

fn random_control(pool: &[&TaxpayerCase], n: usize, seed: u64) -> Vec<SelectionDecision> {
    sample_ids(pool, n, seed)
        .into_iter()
        .map(|c| {
            SelectionDecision::new(
                &c.case_id,
                Strategy::RandomControl,
                format!("random control sample (seed {seed})"),
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposedSelection {
    pub decisions: Vec<SelectionDecision>,
    /// Strategies whose quota exceeded the remaining eligible cases.
    pub warnings: Vec<String>,
}

impl ComposedSelection {
    pub fn count(&self, strategy: Strategy) -> usize {
        self.decisions
            .iter()
            .filter(|d| d.strategy == strategy)
            .count()
    }

    pub fn to_jsonl(&self) -> String {
        write_decisions_jsonl(&self.decisions)
    }
}

pub fn write_decisions_jsonl(decisions: &[SelectionDecision]) -> String {
    let mut out = String::new();
    for d in decisions {
        out.push_str(&serde_json::to_string(d).expect("decisions serialize"));
        out.push('\n');
    }
    out
}

pub fn read_decisions_jsonl(text: &str) -> Result<Vec<SelectionDecision>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

/// Seeds of the two random strategies are derived from the plan seed so that they differ.
fn strategy_seed(plan_seed: u64, strategy: Strategy) -> u64 {
    plan_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(strategy as u64)
}

/// Applies every strategy in the fixed order, each over the cases not yet selected.
pub fn compose_plan(
    plan: &SelectionPlan,
    cases: &[TaxpayerCase],
    reports: &[ScoreReport],
    signals: &[Signal],
    now: YearMonth,
) -> Result<ComposedSelection, PlanError> {
    plan.validate()?;
    let mut taken: BTreeSet<String> = BTreeSet::new();
    let mut decisions = Vec::new();
    let mut warnings = Vec::new();
    let liab = liabilities(reports, cases);

    for strategy in Strategy::ALL {
        let quota = plan.count(strategy);
        if quota == 0 {
            continue;
        }
        let pool: Vec<&TaxpayerCase> = cases
            .iter()
            .filter(|c| !taken.contains(&c.case_id))
            .collect();
        let picked = match strategy {
            Strategy::Time => by_time(&pool, quota),
            Strategy::GroupRandom => group_random(&pool, quota, strategy_seed(plan.seed, strategy)),
            Strategy::Individual => {
                take_eligible(individual(&pool, signals), quota, &mut warnings, strategy)
            }
            Strategy::NewEntry => {
                take_eligible(new_entries(&pool, now), quota, &mut warnings, strategy)
            }
            Strategy::Risk => {
                let open: BTreeMap<String, Money> = liab
                    .iter()
                    .filter(|(id, _)| !taken.contains(*id))
                    .map(|(id, l)| (id.clone(), *l))
                    .collect();
                let all = select_by_risk(reports, &open, plan.liability_threshold_eur, usize::MAX);
                take_eligible(all, quota, &mut warnings, strategy)
            }
            Strategy::RandomControl => {
                random_control(&pool, quota, strategy_seed(plan.seed, strategy))
            }
        };
        if matches!(
            strategy,
            Strategy::Time | Strategy::GroupRandom | Strategy::RandomControl
        ) && picked.len() < quota
        {
            warnings.push(format!(
                "{strategy}: quota {quota} truncated to {} remaining cases",
                picked.len()
            ));
        }
        let mut picked = picked;
        // Output order within a strategy is by case id.
        picked.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        for d in picked {
            taken.insert(d.case_id.clone());
            decisions.push(d);
        }
    }
    Ok(ComposedSelection {
        decisions,
        warnings,
    })
}

fn take_eligible(
    mut all: Vec<SelectionDecision>,
    quota: usize,
    warnings: &mut Vec<String>,
    strategy: Strategy,
) -> Vec<SelectionDecision> {
    if all.len() < quota {
        warnings.push(format!(
            "{strategy}: quota {quota} truncated to {} eligible cases",
            all.len()
        ));
    }
    all.truncate(quota);
    all
}
