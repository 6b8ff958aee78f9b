use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pacc_core::domain::VatReturn;
use pacc_core::scoring::ScoreReport;
use pacc_core::selection::*;
use pacc_core::testkit::{bare_report, blank_case, fixture_month, with_numbers};
use pacc_core::*;

fn audited(id: &str, year: Option<i32>) -> TaxpayerCase {
    let mut c = blank_case(id, CaseKind::CompanyAudit);
    c.last_audited_year = year;
    c
}

fn ids(decisions: &[SelectionDecision]) -> Vec<&str> {
    decisions.iter().map(|d| d.case_id.as_str()).collect()
}

fn corpus(n: usize) -> Vec<TaxpayerCase> {
    (0..n)
        .map(|i| audited(&format!("C{i:03}"), Some(2000 + (i % 20) as i32)))
        .collect()
}

#[test]
fn time_prefers_never_audited_then_oldest() {
    let cases = vec![audited("A", Some(2020)), audited("B", None)];
    assert_eq!(ids(&select_by_time(&cases, 1)), ["B"]);
    let cases = vec![
        audited("X", Some(2020)),
        audited("Y", Some(2010)),
        audited("Z", Some(2015)),
    ];
    assert_eq!(ids(&select_by_time(&cases, 2)), ["Y", "Z"]);
    assert!(select_by_time(&cases, 0).is_empty());
    assert_eq!(
        select_by_time(&cases, 1)[0].rationale,
        "last audited year 2010"
    );
    let tied = vec![audited("b", Some(2010)), audited("a", Some(2010))];
    assert_eq!(ids(&select_by_time(&tied, 1)), ["a"]);
}

#[test]
fn group_random_is_deterministic_and_complete() {
    let cases = corpus(30);
    assert_eq!(
        select_group_random(&cases, 5, 9),
        select_group_random(&cases, 5, 9)
    );
    assert_ne!(
        select_group_random(&cases, 5, 9),
        select_group_random(&cases, 5, 10)
    );
    let all = select_group_random(&cases, 30, 1);
    assert_eq!(all.len(), 30);
    assert_eq!(
        all.iter()
            .map(|d| &d.case_id)
            .collect::<BTreeSet<_>>()
            .len(),
        30
    );
}

#[test]
fn group_random_is_uniform() {
    let cases = corpus(10);
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let seeds = 10_000;
    for seed in 0..seeds {
        for d in select_group_random(&cases, 1, seed) {
            *counts.entry(d.case_id).or_default() += 1;
        }
    }
    assert_eq!(counts.len(), 10);
    for (id, n) in counts {
        let freq = n as f64 / seeds as f64;
        assert!((freq - 0.1).abs() <= 0.02, "{id}: {freq}");
    }
}

#[test]
fn individual_merges_signals_per_case() {
    let cases = corpus(5);
    assert!(select_individual(&cases, &[]).is_empty());
    let one = select_individual(
        &cases,
        &[Signal {
            case_id: "C001".into(),
            kind: SignalKind::Complaint,
            note: "anonymous tip".into(),
        }],
    );
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].strategy, Strategy::Individual);
    assert!(one[0].rationale.contains("anonymous tip"));
    let two = select_individual(
        &cases,
        &[
            Signal {
                case_id: "C002".into(),
                kind: SignalKind::Restructuring,
                note: "merger".into(),
            },
            Signal {
                case_id: "C002".into(),
                kind: SignalKind::Inconsistency,
                note: String::new(),
            },
            Signal {
                case_id: "unknown".into(),
                kind: SignalKind::Mandated,
                note: String::new(),
            },
        ],
    );
    assert_eq!(ids(&two), ["C002"]);
    assert_eq!(two[0].rationale, "RESTRUCTURING: merger; INCONSISTENCY");
}

fn filed_at(id: &str, kind: CaseKind, months_ago: i32) -> TaxpayerCase {
    let mut c = blank_case(id, kind);
    c.vat_returns = vec![VatReturn {
        period: fixture_month().plus_months(-months_ago),
        filed: true,
    }];
    c
}

#[test]
fn new_entries_need_more_than_two_years() {
    let cases = vec![
        filed_at("gap25", CaseKind::MissingTrader, 25),
        filed_at("gap24", CaseKind::MissingTrader, 24),
        filed_at("company30", CaseKind::CompanyAudit, 30),
    ];
    let picked = select_new_entries(&cases, fixture_month());
    assert_eq!(ids(&picked), ["gap25"]);
    assert_eq!(picked[0].rationale, "no VAT return for 25 months");

    // Never filed and registered long ago.
    let never = blank_case("never", CaseKind::MissingTrader);
    assert_eq!(
        ids(&select_new_entries(&[never], fixture_month())),
        ["never"]
    );
}

fn taxed(id: &str, tax: f64) -> TaxpayerCase {
    with_numbers(
        blank_case(id, CaseKind::MissingTrader),
        &[("input_tax_eur", tax), ("output_tax_eur", 0.0)],
    )
}

#[test]
fn liability_estimate_is_cent_exact() {
    let case = taxed("A", 999.0);
    assert_eq!(
        estimate_liability(FraudScore::new(999).unwrap(), &case),
        Money::from_euros(999)
    );
    assert_eq!(
        estimate_liability(FraudScore::new(0).unwrap(), &case),
        Money::ZERO
    );
    // 500 / 999 * 100.00 EUR = 50.05005... EUR
    assert_eq!(
        estimate_liability(FraudScore::new(500).unwrap(), &taxed("B", 100.0)),
        Money::from_cents(5005)
    );
}

#[test]
fn risk_threshold_boundary() {
    let reports = vec![
        bare_report("below", CaseKind::MissingTrader, 900),
        bare_report("exact", CaseKind::MissingTrader, 100),
    ];
    let mut liab = BTreeMap::new();
    liab.insert("below".to_string(), Money::from_cents(999_999));
    liab.insert("exact".to_string(), Money::from_cents(1_000_000));
    let picked = select_by_risk(&reports, &liab, DEFAULT_LIABILITY_THRESHOLD, 10);
    assert_eq!(ids(&picked), ["exact"]);
    assert_eq!(
        picked[0].estimated_liability_eur,
        Some(Money::from_euros(10_000))
    );
    assert_eq!(picked[0].score, Some(FraudScore::new(100).unwrap()));
}

#[test]
fn risk_takes_highest_scores() {
    let reports = vec![
        bare_report("low", CaseKind::MissingTrader, 300),
        bare_report("high", CaseKind::MissingTrader, 800),
    ];
    let liab: BTreeMap<String, Money> = ["low", "high"]
        .iter()
        .map(|id| (id.to_string(), Money::from_euros(50_000)))
        .collect();
    assert_eq!(
        ids(&select_by_risk(
            &reports,
            &liab,
            DEFAULT_LIABILITY_THRESHOLD,
            1
        )),
        ["high"]
    );
}

#[test]
fn risk_selection_is_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let n = rng.random_range(1..30);
        let scores: Vec<u16> = (0..n).map(|_| rng.random_range(0..=333)).collect();
        let liab: BTreeMap<String, Money> = (0..n)
            .map(|i| {
                (
                    format!("R{i:02}"),
                    Money::from_euros(rng.random_range(5_000..20_000)),
                )
            })
            .collect();
        let make = |factor: u16| -> Vec<ScoreReport> {
            scores
                .iter()
                .enumerate()
                .map(|(i, s)| bare_report(&format!("R{i:02}"), CaseKind::MissingTrader, s * factor))
                .collect()
        };
        let k = rng.random_range(0..n);
        let base: BTreeSet<String> =
            select_by_risk(&make(1), &liab, DEFAULT_LIABILITY_THRESHOLD, k)
                .into_iter()
                .map(|d| d.case_id)
                .collect();
        let scaled: BTreeSet<String> =
            select_by_risk(&make(3), &liab, DEFAULT_LIABILITY_THRESHOLD, k)
                .into_iter()
                .map(|d| d.case_id)
                .collect();
        assert_eq!(base, scaled);
    }
}

#[test]
fn random_control_avoids_excluded() {
    let cases = corpus(20);
    let exclude: BTreeSet<String> = (0..15).map(|i| format!("C{i:03}")).collect();
    let picked = select_random_control(&cases, 10, 3, &exclude);
    assert_eq!(picked.len(), 5);
    assert!(picked
        .iter()
        .all(|d| !exclude.contains(&d.case_id) && d.strategy == Strategy::RandomControl));
    assert!(select_random_control(&cases, 0, 3, &exclude).is_empty());
}

#[test]
fn empty_plan_selects_nothing() {
    let out = compose_plan(
        &SelectionPlan::default(),
        &corpus(10),
        &[],
        &[],
        fixture_month(),
    )
    .unwrap();
    assert!(out.decisions.is_empty());
    assert!(out.warnings.is_empty());
}

#[test]
fn earlier_strategy_wins_overlap() {
    let cases = vec![
        with_numbers(audited("both", None), &[("input_tax_eur", 1e6)]),
        audited("other", Some(2023)),
    ];
    let reports = vec![
        bare_report("both", CaseKind::CompanyAudit, 999),
        bare_report("other", CaseKind::CompanyAudit, 10),
    ];
    let plan = SelectionPlan::default()
        .with_count(Strategy::Time, 1)
        .with_count(Strategy::Risk, 1);
    let out = compose_plan(&plan, &cases, &reports, &[], fixture_month()).unwrap();
    assert_eq!(out.decisions.len(), 1);
    assert_eq!(out.decisions[0].case_id, "both");
    assert_eq!(out.decisions[0].strategy, Strategy::Time);
    assert_eq!(out.warnings.len(), 1, "{:?}", out.warnings);
}

#[test]
fn oversized_quotas_are_truncated() {
    let plan = SelectionPlan::default().with_count(Strategy::GroupRandom, 50);
    let out = compose_plan(&plan, &corpus(10), &[], &[], fixture_month()).unwrap();
    assert_eq!(out.decisions.len(), 10);
    assert!(out.warnings[0].starts_with("GROUP_RANDOM"));
}

#[test]
fn bad_threshold_is_rejected() {
    let plan = SelectionPlan {
        liability_threshold_eur: Money::ZERO,
        ..SelectionPlan::default()
    };
    assert!(compose_plan(&plan, &[], &[], &[], fixture_month()).is_err());
    assert!(
        SelectionPlan::from_json(r#"{"counts": {"RISK": 3}, "liability_threshold_eur": -1}"#)
            .is_err()
    );
    assert!(SelectionPlan::from_json(r#"{"counts": {"LOTTERY": 3}}"#).is_err());
}

#[test]
fn plan_and_decisions_round_trip() {
    let plan =
        SelectionPlan::from_json(r#"{"counts": {"RISK": 100, "RANDOM_CONTROL": 100}, "seed": 4}"#)
            .unwrap();
    assert_eq!(plan.liability_threshold_eur, DEFAULT_LIABILITY_THRESHOLD);
    assert_eq!(SelectionPlan::from_json(&plan.to_json()).unwrap(), plan);

    let cases = corpus(40);
    let reports: Vec<ScoreReport> = cases
        .iter()
        .enumerate()
        .map(|(i, c)| bare_report(&c.case_id, c.kind, (i * 20) as u16))
        .collect();
    let cases: Vec<TaxpayerCase> = cases
        .into_iter()
        .map(|c| with_numbers(c, &[("output_tax_eur", 50_000.0)]))
        .collect();
    let out = compose_plan(
        &plan.clone().with_count(Strategy::Time, 3),
        &cases,
        &reports,
        &[],
        fixture_month(),
    )
    .unwrap();
    let text = out.to_jsonl();
    assert_eq!(read_decisions_jsonl(&text).unwrap(), out.decisions);
    let again = compose_plan(
        &plan.with_count(Strategy::Time, 3),
        &cases,
        &reports,
        &[],
        fixture_month(),
    )
    .unwrap();
    assert_eq!(again.to_jsonl(), text);
}

#[test]
fn composed_plans_never_repeat_a_case() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..100 {
        let n = rng.random_range(10..80);
        let cases: Vec<TaxpayerCase> = (0..n)
            .map(|i| {
                let kind = if rng.random_bool(0.5) {
                    CaseKind::MissingTrader
                } else {
                    CaseKind::CompanyAudit
                };
                let mut c = filed_at(&format!("K{i:03}"), kind, rng.random_range(0..40));
                c.last_audited_year = rng.random_bool(0.7).then(|| rng.random_range(2000..2024));
                with_numbers(c, &[("output_tax_eur", rng.random_range(0.0..100_000.0))])
            })
            .collect();
        let reports: Vec<ScoreReport> = cases
            .iter()
            .map(|c| bare_report(&c.case_id, c.kind, rng.random_range(0..=999)))
            .collect();
        let signals: Vec<Signal> = (0..rng.random_range(0..10))
            .map(|_| Signal {
                case_id: format!("K{:03}", rng.random_range(0..n)),
                kind: SignalKind::Complaint,
                note: String::new(),
            })
            .collect();
        let mut plan = SelectionPlan {
            seed: trial,
            ..SelectionPlan::default()
        };
        for s in Strategy::ALL {
            plan.counts.insert(s, rng.random_range(0..15));
        }
        let out = compose_plan(&plan, &cases, &reports, &signals, fixture_month()).unwrap();
        let unique: BTreeSet<&str> = out.decisions.iter().map(|d| d.case_id.as_str()).collect();
        assert_eq!(unique.len(), out.decisions.len(), "trial {trial}");
        for s in Strategy::ALL {
            assert!(out.count(s) <= plan.count(s));
        }
        // Strategy order, then case id.
        let keys: Vec<(Strategy, &str)> = out
            .decisions
            .iter()
            .map(|d| (d.strategy, d.case_id.as_str()))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        for d in out
            .decisions
            .iter()
            .filter(|d| d.strategy == Strategy::Risk)
        {
            assert!(d.estimated_liability_eur.unwrap() >= plan.liability_threshold_eur);
        }
    }
}
