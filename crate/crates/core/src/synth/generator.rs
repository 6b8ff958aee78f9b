use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::truth::{FraudPattern, GroundTruth, TruthRecord};
use crate::domain::{
    AuditOutcome, CaseKind, FeatureValue, Money, TaxpayerCase, VatReturn, YearMonth,
};
use crate::models::peers::{RobustStat, MAD_SCALE};
use crate::sources::{RegistryStore, WatchlistStore, DOMESTIC_STATE};

const FOREIGN_STATES: [&str; 7] = ["CZ", "DE", "HU", "IT", "PL", "SI", "SK"];
const INDUSTRIES: [&str; 6] = ["C25", "F41", "G46", "G47", "H49", "M70"];
const VAT_RATE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_cases: usize,
    /// Share of cases carrying a planted fraud pattern.
    pub fraud_rate: f64,
    /// Number of legitimate size archetypes (clusters).
    pub n_clusters: usize,
    pub ring_size_min: usize,
    pub ring_size_max: usize,
    /// Share of fraud cases organised in missing-trader rings.
    pub ring_share: f64,
    /// Share of cases outside rings that are of kind `missing_trader`.
    pub missing_trader_share: f64,
    /// Share of cases with a historical (already visible) audit outcome.
    pub history_share: f64,
    /// Probability that a historical audit missed actual fraud.
    pub miss_rate: f64,
    /// Log-normal sigma of the size features.
    pub size_noise: f64,
    pub seed: u64,
    /// Calendar month of simulated clock 0.
    pub base_month: YearMonth,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_cases: 5000,
            fraud_rate: 0.05,
            n_clusters: 4,
            ring_size_min: 14,
            ring_size_max: 20,
            ring_share: 0.4,
            missing_trader_share: 0.35,
            history_share: 0.5,
            miss_rate: 0.1,
            size_noise: 0.15,
            seed: 1,
            base_month: YearMonth::new(2024, 1).expect("valid month"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GeneratorError {
    #[error("n_cases must be at least 10, got {0}")]
    TooFewCases(usize),
    #[error("fraud_rate must be in [0, 1), got {0}")]
    FraudRate(f64),
    #[error("ring size {ring} exceeds n_cases {n}")]
    RingTooLarge { ring: usize, n: usize },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        if self.n_cases < 10 {
            return Err(GeneratorError::TooFewCases(self.n_cases));
        }
        if !(0.0..1.0).contains(&self.fraud_rate) {
            return Err(GeneratorError::FraudRate(self.fraud_rate));
        }
        if self.ring_size_min > self.n_cases {
            return Err(GeneratorError::RingTooLarge {
                ring: self.ring_size_min,
                n: self.n_cases,
            });
        }
        if self.ring_size_min < 14 || self.ring_size_max < self.ring_size_min {
            return Err(GeneratorError::Invalid(
                "ring sizes must satisfy 14 <= min <= max".into(),
            ));
        }
        if self.n_clusters == 0 || self.n_clusters > 6 {
            return Err(GeneratorError::Invalid(
                "n_clusters must be in 1..=6".into(),
            ));
        }
        for (name, v) in [
            ("ring_share", self.ring_share),
            ("missing_trader_share", self.missing_trader_share),
            ("history_share", self.history_share),
            ("miss_rate", self.miss_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(GeneratorError::Invalid(format!("{name} must be in [0, 1]")));
            }
        }
        if !(self.size_noise > 0.0 && self.size_noise < 1.0) {
            return Err(GeneratorError::Invalid(
                "size_noise must be in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Everything one generator run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCorpus {
    pub cases: Vec<TaxpayerCase>,
    pub watchlist: WatchlistStore,
    pub registry: RegistryStore,
    /// Validity of every foreign trading partner's VAT id.
    pub uid_register: BTreeMap<String, bool>,
    pub truth: GroundTruth,
    pub base_month: YearMonth,
}

fn cents(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn ratio(x: f64) -> f64 {
    (x * 10_000.0).round() / 10_000.0
}

fn first_of(ym: YearMonth) -> NaiveDate {
    NaiveDate::from_ymd_opt(ym.year(), ym.month(), 1).expect("valid month")
}

struct Plan {
    pattern: FraudPattern,
    archetype: usize,
    ring: Option<usize>,
    kind: CaseKind,
}

/// Ring sizes within `[min, max]` that use as much of `budget` as possible.
fn ring_sizes(rng: &mut impl Rng, budget: usize, min: usize, max: usize) -> Vec<usize> {
    let mut sizes = Vec::new();
    let mut left = budget;
    while left >= min {
        let mut size = rng.random_range(min..=max.min(left));
        if left - size < min && left <= max {
            size = left;
        }
        sizes.push(size);
        left -= size;
    }
    sizes
}

pub fn generate_corpus(cfg: &GeneratorConfig) -> Result<GeneratedCorpus, GeneratorError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_cases;
    let n_fraud = (cfg.fraud_rate * n as f64).round() as usize;
    let ring_budget = (n_fraud as f64 * cfg.ring_share).round() as usize;
    let rings = ring_sizes(&mut rng, ring_budget, cfg.ring_size_min, cfg.ring_size_max);
    let ring_total: usize = rings.iter().sum();

    // Slots: ring members first, then other frauds, then legitimate cases; shuffled below.
    let mut slots: Vec<(FraudPattern, Option<usize>)> = Vec::with_capacity(n);
    for (r, &size) in rings.iter().enumerate() {
        slots.extend(std::iter::repeat_n((FraudPattern::MtRing, Some(r)), size));
    }
    // Placeholder for non-ring frauds; the concrete pattern depends on the archetype.
    slots.extend(std::iter::repeat_n(
        (FraudPattern::LowPersonnel, None),
        n_fraud - ring_total,
    ));
    slots.extend(std::iter::repeat_n((FraudPattern::None, None), n - n_fraud));
    slots.shuffle(&mut rng);

    let plans: Vec<Plan> = slots
        .into_iter()
        .map(|(pattern, ring)| {
            let archetype = if ring.is_some() {
                0
            } else {
                rng.random_range(0..cfg.n_clusters)
            };
            let pattern = match pattern {
                FraudPattern::LowPersonnel if archetype % 2 == 1 => FraudPattern::UnderreportedTax,
                p => p,
            };
            let kind = if ring.is_some() || rng.random_bool(cfg.missing_trader_share) {
                CaseKind::MissingTrader
            } else {
                CaseKind::CompanyAudit
            };
            Plan {
                pattern,
                archetype,
                ring,
                kind,
            }
        })
        .collect();

    let mut registry = RegistryStore::default();
    let mut watchlist = WatchlistStore::default();
    let mut uid_register = BTreeMap::new();

    // Foreign partners: a shared legitimate pool plus three invalid ones per ring.
    let pool: Vec<String> = (0..(n / 10).max(5)).map(|j| format!("F-{j:05}")).collect();
    for id in &pool {
        let state = FOREIGN_STATES[rng.random_range(0..FOREIGN_STATES.len())];
        registry.insert(id, &format!("ADDR-{id}"), state);
        uid_register.insert(id.clone(), rng.random_bool(0.97));
    }
    let mut ring_partners: Vec<Vec<String>> = Vec::new();
    for r in 0..rings.len() {
        let ids: Vec<String> = (0..3).map(|j| format!("F-R{r:03}-{j}")).collect();
        for id in &ids {
            let state = FOREIGN_STATES[rng.random_range(0..FOREIGN_STATES.len())];
            registry.insert(id, &format!("ADDR-{id}"), state);
            uid_register.insert(id.clone(), false);
        }
        ring_partners.push(ids);
        let w = format!("W-R{r:03}");
        registry.insert(
            &w,
            &format!("ADDR-{w}"),
            FOREIGN_STATES[rng.random_range(0..FOREIGN_STATES.len())],
        );
    }
    // Unrelated watchlisted companies that a few legitimate persons happen to be linked to.
    let decoys: Vec<String> = (0..3).map(|j| format!("W-X{j}")).collect();
    for w in &decoys {
        registry.insert(w, &format!("ADDR-{w}"), "HU");
        watchlist.insert(w, &format!("P-{w}-director"));
    }
    let shared_addresses = (n / 50).max(1);

    let size_noise = LogNormal::new(0.0, cfg.size_noise).expect("valid sigma");
    let mut cases = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for (idx, plan) in plans.iter().enumerate() {
        let case_id = format!("C-{idx:05}");
        let a = plan.archetype as f64;
        let revenue_scale = 4e5 * 10f64.powf(a);
        let staff_scale = 5.0 * 10f64.powf(0.8 * a);
        let ring = plan.ring;
        let is_ring = ring.is_some();

        let revenue = cents(revenue_scale * size_noise.sample(&mut rng));
        let employees = if is_ring {
            rng.random_range(1..=3) as f64
        } else {
            (staff_scale * size_noise.sample(&mut rng)).round().max(1.0)
        };
        let total_assets = cents(0.8 * revenue_scale * size_noise.sample(&mut rng));
        let personnel_share = if is_ring {
            rng.random_range(0.02..0.06)
        } else {
            rng.random_range(0.22..0.28)
        };
        let personnel = cents(revenue * personnel_share);
        let taxable_share = rng.random_range(0.85..1.0);
        let output_tax = cents(VAT_RATE * revenue * taxable_share);
        let input_share = if is_ring {
            rng.random_range(0.95..1.6)
        } else {
            rng.random_range(0.4..0.8)
        };
        let input_tax = cents(output_tax * input_share);
        let age: i32 = if is_ring {
            rng.random_range(4..=30)
        } else {
            rng.random_range(24..=300)
        };
        let registered = cfg.base_month.plus_months(-age);

        let mut f: BTreeMap<String, FeatureValue> = BTreeMap::new();
        let mut num = |name: &str, v: f64| {
            f.insert(name.to_string(), FeatureValue::Number(v));
        };
        num("revenue_eur", revenue);
        num("employee_count", employees);
        num("total_assets_eur", total_assets);
        num("personnel_cost_eur", personnel);
        num("output_tax_eur", output_tax);
        num("input_tax_eur", input_tax);
        num("profit_eur", cents(revenue * rng.random_range(-0.05..0.15)));
        let ic_acq = if is_ring {
            cents(revenue * rng.random_range(0.8..1.5))
        } else if rng.random_bool(0.4) {
            cents(revenue * rng.random_range(0.0..0.15))
        } else {
            0.0
        };
        num("ic_acquisitions_eur", ic_acq);
        let ic_del = if rng.random_bool(0.3) {
            cents(revenue * rng.random_range(0.0..0.3))
        } else {
            0.0
        };
        num("ic_deliveries_eur", ic_del);
        num(
            "ic_transaction_count",
            if is_ring {
                rng.random_range(30..=200) as f64
            } else {
                rng.random_range(0..=20) as f64
            },
        );
        num("company_age_months", age as f64);
        num(
            "director_changes_count",
            if is_ring {
                rng.random_range(1..=4) as f64
            } else if rng.random_bool(0.1) {
                1.0
            } else {
                0.0
            },
        );
        num(
            "sector_risk_grade",
            if is_ring {
                rng.random_range(4..=5) as f64
            } else {
                rng.random_range(1..=5) as f64
            },
        );
        num(
            "prior_findings_count",
            if rng.random_bool(0.1) { 1.0 } else { 0.0 },
        );
        let cash = rng.random_range(0.0..0.4);
        let export = if rng.random_bool(0.2) {
            ratio(rng.random_range(0.0..0.3))
        } else {
            0.0
        };
        f.insert(
            "industry_code".into(),
            FeatureValue::Text(INDUSTRIES[rng.random_range(0..INDUSTRIES.len())].into()),
        );
        f.insert(
            "legal_form".into(),
            FeatureValue::Text(
                if is_ring || rng.random_bool(0.7) {
                    "GmbH"
                } else {
                    "KG"
                }
                .into(),
            ),
        );
        f.insert(
            "member_state".into(),
            FeatureValue::Text(DOMESTIC_STATE.into()),
        );
        f.insert(
            "is_vat_group".into(),
            FeatureValue::Flag(rng.random_bool(0.03)),
        );
        f.insert(
            "has_foreign_director".into(),
            FeatureValue::Flag(rng.random_bool(if is_ring { 0.6 } else { 0.05 })),
        );
        // Optional features are occasionally unknown.
        for (name, v) in [("cash_share", ratio(cash)), ("export_share", export)] {
            let value = if rng.random_bool(0.01) {
                FeatureValue::Missing
            } else {
                FeatureValue::Number(v)
            };
            f.insert(name.into(), value);
        }

        // Quarterly returns over the last three years, or since registration.
        let gap = if is_ring { rng.random_range(3..=30) } else { 0 };
        let mut vat_returns = Vec::new();
        let mut late = 0;
        let mut m = cfg.base_month.plus_months(-36).max(registered);
        while m < cfg.base_month {
            if m.month() % 3 == 0 {
                let filed = if is_ring {
                    cfg.base_month.months_since(m) > gap
                } else {
                    !rng.random_bool(0.03)
                };
                if !filed && cfg.base_month.months_since(m) <= 24 {
                    late += 1;
                }
                vat_returns.push(VatReturn { period: m, filed });
            }
            m = m.plus_months(1);
        }
        let late_filings = if is_ring {
            late.max(2) + rng.random_range(0..=3)
        } else {
            late
        };
        f.insert(
            "late_filings_count".into(),
            FeatureValue::Number(late_filings as f64),
        );

        let persons: Vec<String> = match ring {
            Some(r) => {
                let p = format!("P-R{r:03}-{idx:05}");
                watchlist.insert(&format!("W-R{r:03}"), &p);
                vec![p]
            }
            None => {
                let mut ps: Vec<String> = (0..rng.random_range(1..=3))
                    .map(|k| format!("P-{idx:05}-{k}"))
                    .collect();
                if rng.random_bool(0.005) {
                    ps.push(format!(
                        "P-{}-director",
                        decoys[rng.random_range(0..decoys.len())]
                    ));
                }
                ps.sort();
                ps
            }
        };
        let address_id = match ring {
            Some(r) => format!("ADDR-RING-{r:03}"),
            None if rng.random_bool(0.1) => {
                format!("ADDR-SHARED-{:04}", rng.random_range(0..shared_addresses))
            }
            None => format!("ADDR-{idx:05}"),
        };
        let mut partners: BTreeSet<String> = BTreeSet::new();
        if let Some(r) = ring {
            for p in ring_partners[r].iter().filter(|_| rng.random_bool(0.8)) {
                partners.insert(p.clone());
            }
            partners.insert(ring_partners[r][idx % 3].clone());
        } else if rng.random_bool(0.4) {
            for _ in 0..rng.random_range(1..=3) {
                partners.insert(pool[rng.random_range(0..pool.len())].clone());
            }
        }

        registry.insert(&case_id, &address_id, DOMESTIC_STATE);
        cases.push(TaxpayerCase {
            case_id: case_id.clone(),
            kind: plan.kind,
            features: f,
            persons,
            address_id,
            vat_returns,
            last_audited_year: None,
            registered_date: first_of(registered),
            trading_partners: partners.into_iter().collect(),
            outcome: None,
        });
        truth.push(TruthRecord {
            case_id,
            is_fraud: plan.pattern != FraudPattern::None,
            pattern: plan.pattern,
            archetype: plan.archetype,
            ring,
        });
    }

    plant_peer_outliers(&mut rng, &mut cases, &truth, cfg.n_clusters);

    // Historical audits: visible from clock 0, used for training.
    for (case, t) in cases.iter_mut().zip(&truth) {
        if rng.random_bool(cfg.history_share) {
            let last_year = cfg.base_month.year() - rng.random_range(1..=3);
            case.last_audited_year = Some(last_year);
            let fraud_found = t.is_fraud && !rng.random_bool(cfg.miss_rate);
            case.outcome = Some(historical_outcome(case, fraud_found));
        } else if rng.random_bool(0.5) {
            case.last_audited_year = Some(cfg.base_month.year() - rng.random_range(4..=15));
        }
    }

    Ok(GeneratedCorpus {
        cases,
        watchlist,
        registry,
        uid_register,
        truth: GroundTruth::new(truth),
        base_month: cfg.base_month,
    })
}

/// Back tax found by an audit: a share of the larger of input and output tax.
pub(crate) fn historical_outcome(case: &TaxpayerCase, fraud_found: bool) -> AuditOutcome {
    let base = case
        .number("input_tax_eur")
        .unwrap_or(0.0)
        .max(case.number("output_tax_eur").unwrap_or(0.0));
    let back_tax = if fraud_found {
        Money::from_eur_f64((0.3 * base).max(100.0))
    } else {
        Money::from_cents(0)
    };
    AuditOutcome {
        audited: true,
        fraud_found,
        back_tax_eur: back_tax,
        available_at: 0,
    }
}

/// Moves planted personnel-cost and output-tax values far below their archetype's
/// peers, measured against the median and MAD of the legitimate members.
fn plant_peer_outliers(
    rng: &mut impl Rng,
    cases: &mut [TaxpayerCase],
    truth: &[TruthRecord],
    n_clusters: usize,
) {
    for archetype in 0..n_clusters {
        let members: Vec<usize> = (0..cases.len())
            .filter(|&i| truth[i].archetype == archetype && truth[i].pattern == FraudPattern::None)
            .collect();
        let stat = |feature: &str| {
            let values: Vec<f64> = members
                .iter()
                .filter_map(|&i| cases[i].number(feature))
                .collect();
            RobustStat::of(&values)
        };
        let (Some(personnel), Some(output)) = (stat("personnel_cost_eur"), stat("output_tax_eur"))
        else {
            continue;
        };
        for i in 0..cases.len() {
            if truth[i].archetype != archetype {
                continue;
            }
            let case = &mut cases[i];
            let revenue = case.number("revenue_eur").unwrap_or(1.0);
            match truth[i].pattern {
                FraudPattern::LowPersonnel => {
                    let z = rng.random_range(5.0..7.0);
                    let target = (personnel.median - z * MAD_SCALE * personnel.mad)
                        .max(personnel.median * 0.02);
                    let value = cents(target.min(revenue * 0.08));
                    case.features
                        .insert("personnel_cost_eur".into(), FeatureValue::Number(value));
                }
                FraudPattern::UnderreportedTax => {
                    let value = cents(output.median * rng.random_range(0.05..0.2));
                    case.features
                        .insert("output_tax_eur".into(), FeatureValue::Number(value));
                    let input = case.number("input_tax_eur").unwrap_or(0.0);
                    case.features.insert(
                        "input_tax_eur".into(),
                        FeatureValue::Number(cents(input.min(value * 0.9))),
                    );
                }
                _ => {}
            }
        }
    }
    for case in cases.iter_mut() {
        let revenue = case.number("revenue_eur").unwrap_or(0.0);
        let personnel = case.number("personnel_cost_eur").unwrap_or(0.0);
        let output = case.number("output_tax_eur").unwrap_or(0.0);
        let input = case.number("input_tax_eur").unwrap_or(0.0);
        let mut set = |name: &str, v: f64| {
            case.features
                .insert(name.to_string(), FeatureValue::Number(ratio(v)));
        };
        set(
            "personnel_cost_ratio",
            if revenue > 0.0 {
                personnel / revenue
            } else {
                0.0
            },
        );
        set(
            "output_tax_ratio",
            if revenue > 0.0 { output / revenue } else { 0.0 },
        );
        set(
            "input_tax_ratio",
            if output > 0.0 { input / output } else { 0.0 },
        );
    }
}
