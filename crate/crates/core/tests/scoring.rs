use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pacc_core::domain::FeatureSchema;
use pacc_core::models::TrainedModels;
use pacc_core::rules::RuleSet;
use pacc_core::rules::{builtin_model_ids, parse_rules, MISSING_TRADER_RULES};
use pacc_core::scoring::*;
use pacc_core::sources::SourceSnapshot;
use pacc_core::sources::{SourceHub, WATCHLIST};
use pacc_core::testkit::{
    blank_case, fixture_month, mt_fixture, random_case, random_ruleset, with_numbers,
};
use pacc_core::*;

fn shipped() -> RuleSet {
    parse_rules(
        MISSING_TRADER_RULES,
        &FeatureSchema::shipped(),
        &builtin_model_ids(),
    )
    .unwrap()
}

fn parse(text: &str) -> RuleSet {
    parse_rules(text, &FeatureSchema::shipped(), &builtin_model_ids()).unwrap()
}

fn env<'a>(models: &'a TrainedModels, sources: &'a SourceSnapshot) -> ScoringEnv<'a> {
    ScoringEnv {
        models,
        sources,
        clock: 0,
        now: fixture_month(),
    }
}

fn score_of(c: &[f64]) -> u16 {
    combine_contributions(c, &[]).unwrap().value()
}

#[test]
fn combination_examples() {
    assert_eq!(score_of(&[]), 0);
    assert_eq!(score_of(&[0.6]), 599);
    assert_eq!(score_of(&[0.6, 0.3]), 719);
    assert_eq!(score_of(&[0.3, 0.6]), 719);
    assert_eq!(score_of(&[1.0]), 999);
    assert_eq!(combine_contributions(&[0.6], &[0.2]).unwrap().value(), 679);
    assert!(combine_contributions(&[0.0], &[]).is_err());
    assert!(combine_contributions(&[1.2], &[]).is_err());
    assert!(combine_contributions(&[0.5], &[f64::NAN]).is_err());
}

#[test]
fn few_employees_boundary() {
    let rs =
        parse(r#"rule "FewEmployees" { weight: MED when: case.employee_count < 4 explain: "x" }"#);
    let models = TrainedModels::default();
    let snap = SourceSnapshot::default();
    let none = BTreeSet::new();
    let rule = &rs.rules[0];
    let defaults = TierDefaults::default();
    let outcome = |case: &TaxpayerCase| {
        evaluate_rule(
            rule,
            &CaseContext {
                case,
                env: env(&models, &snap),
                deactivated: &none,
            },
            &defaults,
        )
    };
    let three = with_numbers(
        blank_case("A", CaseKind::MissingTrader),
        &[("employee_count", 3.0)],
    );
    let four = with_numbers(
        blank_case("A", CaseKind::MissingTrader),
        &[("employee_count", 4.0)],
    );
    assert!(matches!(outcome(&three), RuleOutcome::Triggered(t) if t.contribution == 0.3));
    assert_eq!(outcome(&four), RuleOutcome::NotTriggered);
    assert_eq!(
        outcome(&blank_case("A", CaseKind::MissingTrader)),
        RuleOutcome::NotApplicable("missing feature employee_count".into())
    );
}

#[test]
fn watchlist_and_staff_fixture_scores_719_and_599() {
    let (case, hub) = mt_fixture();
    let models = TrainedModels::default();
    let snap = hub.snapshot();
    let scorer = Scorer::new(shipped(), TierDefaults::default());
    let none = BTreeSet::new();
    let report = scorer
        .score(&CaseContext {
            case: &case,
            env: env(&models, &snap),
            deactivated: &none,
        })
        .unwrap();
    let names: Vec<&str> = report
        .triggered
        .iter()
        .map(|t| t.rule_name.as_str())
        .collect();
    assert_eq!(names, ["PersonLinkedToEurofiscWatchlist", "FewEmployees"]);
    assert_eq!(report.score.value(), 719);
    let off: BTreeSet<String> = ["FewEmployees".to_string()].into();
    let report = scorer
        .score(&CaseContext {
            case: &case,
            env: env(&models, &snap),
            deactivated: &off,
        })
        .unwrap();
    assert_eq!(report.score.value(), 599);
    assert_eq!(report.deactivated, ["FewEmployees"]);
}

#[test]
fn errors_for_kind_and_unknown_rule() {
    let (mut case, hub) = mt_fixture();
    let models = TrainedModels::default();
    let snap = hub.snapshot();
    let scorer = Scorer::new(shipped(), TierDefaults::default());
    let bogus: BTreeSet<String> = ["NoSuchRule".to_string()].into();
    let err = scorer.score(&CaseContext {
        case: &case,
        env: env(&models, &snap),
        deactivated: &bogus,
    });
    assert_eq!(
        err.unwrap_err(),
        ScoreError::UnknownRule("NoSuchRule".into())
    );
    case.kind = CaseKind::CompanyAudit;
    let none = BTreeSet::new();
    let err = scorer.score(&CaseContext {
        case: &case,
        env: env(&models, &snap),
        deactivated: &none,
    });
    assert!(matches!(err, Err(ScoreError::KindMismatch { .. })));
}

#[test]
fn legal_basis_gate_makes_rules_not_applicable() {
    let (case, mut hub) = mt_fixture();
    hub.set_legal_basis(WATCHLIST, false).unwrap();
    let models = TrainedModels::default();
    let snap = hub.snapshot();
    let none = BTreeSet::new();
    let report = Scorer::new(shipped(), TierDefaults::default())
        .score(&CaseContext {
            case: &case,
            env: env(&models, &snap),
            deactivated: &none,
        })
        .unwrap();
    assert_eq!(report.score.value(), 300);
    assert!(report
        .not_applicable
        .iter()
        .any(|n| n.rule_name == "PersonLinkedToEurofiscWatchlist" && n.reason == "no legal basis"));
}

#[test]
fn strict_evaluation_and_division_by_zero() {
    let rs = parse(
        r#"rule "A" { weight: LOW when: case.employee_count > 100 and case.revenue_eur > 0 explain: "a" }
           rule "B" { weight: LOW when: case.revenue_eur / case.employee_count > 1 explain: "b" }"#,
    );
    let models = TrainedModels::default();
    let snap = SourceSnapshot::default();
    let none = BTreeSet::new();
    let case = with_numbers(
        blank_case("A", CaseKind::MissingTrader),
        &[("employee_count", 0.0)],
    );
    let report = score_case(
        &rs,
        &CaseContext {
            case: &case,
            env: env(&models, &snap),
            deactivated: &none,
        },
        &TierDefaults::default(),
    )
    .unwrap();
    assert_eq!(
        report.not_applicable[0].reason,
        "missing feature revenue_eur"
    );
    let case = with_numbers(case, &[("revenue_eur", 5.0)]);
    let report = score_case(
        &rs,
        &CaseContext {
            case: &case,
            env: env(&models, &snap),
            deactivated: &none,
        },
        &TierDefaults::default(),
    )
    .unwrap();
    assert_eq!(
        report.not_applicable,
        [NotApplicableRule {
            rule_name: "B".into(),
            reason: "division by zero".into()
        }]
    );
}

#[test]
fn synergy_requires_every_member() {
    let (mut case, mut hub) = mt_fixture();
    for i in 0..13 {
        hub.register_company(&format!("N-{i}"), &case.address_id, "AT")
            .unwrap();
    }
    let models = TrainedModels::default();
    let snap = hub.snapshot();
    let scorer = Scorer::new(shipped(), TierDefaults::default());
    let none = BTreeSet::new();
    let report = scorer
        .score(&CaseContext {
            case: &case,
            env: env(&models, &snap),
            deactivated: &none,
        })
        .unwrap();
    assert!(report.is_triggered("MultipleAddressUsage"));
    assert_eq!(report.synergy_bonuses.len(), 1);
    assert_eq!(
        report.score,
        combine_contributions(&[0.6, 0.3, 0.1], &[0.2]).unwrap()
    );
    let doc = render_explanations(&report);
    assert!(
        doc.contains("More than 13 companies are located at this address (14 registered)."),
        "{doc}"
    );
    case.features
        .insert("employee_count".into(), FeatureValue::Number(5.0));
    let report = scorer
        .score(&CaseContext {
            case: &case,
            env: env(&models, &snap),
            deactivated: &none,
        })
        .unwrap();
    assert!(report.synergy_bonuses.is_empty());
}

#[test]
fn rank_examples() {
    let mk = |id: &str, s: i64| ScoreReport {
        case_id: id.into(),
        kind: CaseKind::MissingTrader,
        score: FraudScore::new(s).unwrap(),
        triggered: vec![],
        not_applicable: vec![],
        deactivated: vec![],
        synergy_bonuses: vec![],
        ruleset_digest: String::new(),
        tier_defaults: TierDefaults::default(),
        scored_at: 0,
    };
    let reports = vec![mk("C", 10), mk("B", 700), mk("A", 700)];
    assert_eq!(rank_cases(&reports, 2), ["A", "B"]);
    assert!(rank_cases(&reports, 0).is_empty());
    assert_eq!(rank_cases(&reports, 10), ["A", "B", "C"]);

    let empty = render_explanations(&mk("Z", 0));
    assert!(empty.contains("Fraudulence score: 0 / 999"));
    assert!(empty.trim_end().ends_with(REGULAR_AUDIT_NOTICE));
    assert!(!empty.contains('['));
}

#[test]
fn model_backed_rule_without_explanation_gets_notice() {
    let rs = parse(r#"rule "M" { weight: LOW when: case.employee_count >= 0 source: model }"#);
    let models = TrainedModels::default();
    let snap = SourceSnapshot::default();
    let none = BTreeSet::new();
    let case = with_numbers(
        blank_case("A", CaseKind::CompanyAudit),
        &[("employee_count", 1.0)],
    );
    let report = score_case(
        &rs,
        &CaseContext {
            case: &case,
            env: env(&models, &snap),
            deactivated: &none,
        },
        &TierDefaults::default(),
    )
    .unwrap();
    assert!(has_limited_explanation(&report.triggered[0]));
    assert!(render_explanations(&report).contains(LIMITED_EXPLANATION_NOTICE));
}

#[test]
fn batch_matches_single_calls_and_reports_round_trip() {
    let schema = FeatureSchema::shipped();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cases: Vec<TaxpayerCase> = (0..60)
        .map(|i| random_case(&mut rng, &schema, i, CaseKind::MissingTrader))
        .collect();
    let scorer = Scorer::new(shipped(), TierDefaults::default());
    let models = TrainedModels::default();
    let hub = SourceHub::default();
    let snap = hub.snapshot();
    let activation = Activation::new();
    let e = env(&models, &snap);
    let batch = scorer.score_batch(&cases, e, &activation);
    let seq = scorer.score_batch_sequential(&cases, e, &activation);
    let pooled = scorer.score_batch_with_workers(&cases, e, &activation, 3);
    assert_eq!(batch, seq);
    assert_eq!(batch, pooled);
    let none = BTreeSet::new();
    for (c, r) in cases.iter().zip(&batch) {
        assert_eq!(
            r,
            &scorer.score(&CaseContext {
                case: c,
                env: e,
                deactivated: &none
            })
        );
    }
    let reports: Vec<ScoreReport> = batch.into_iter().map(Result::unwrap).collect();
    assert_eq!(
        read_reports_jsonl(&write_reports_jsonl(&reports)).unwrap(),
        reports
    );
    assert!(scorer.score_batch(&[], e, &activation).is_empty());
}

/// Smaller sibling of the acceptance suite's invariant run.
#[test]
fn randomized_invariants() {
    let schema = FeatureSchema::shipped();
    let models = TrainedModels::default();
    let hub = SourceHub::default();
    let snap = hub.snapshot();
    let none = BTreeSet::new();
    let defaults = TierDefaults::default();
    for seed in 0..300u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rs = random_ruleset(&mut rng, &schema, 8);
        rs.kind = None;
        let case = random_case(&mut rng, &schema, seed as usize, CaseKind::MissingTrader);
        let ctx = CaseContext {
            case: &case,
            env: env(&models, &snap),
            deactivated: &none,
        };
        let report = score_case(&rs, &ctx, &defaults).unwrap();
        assert!(report.score.value() <= 999);
        assert_eq!(
            combine_contributions(&report.contributions(), &report.bonuses()).unwrap(),
            report.score
        );
        if let Some(r) = rs.rules.get(rng.random_range(0..rs.rules.len().max(1))) {
            let off: BTreeSet<String> = [r.name.clone()].into();
            let toggled = score_case(
                &rs,
                &CaseContext {
                    deactivated: &off,
                    ..ctx
                },
                &defaults,
            )
            .unwrap();
            let removed = score_case(&rs.without(&r.name), &ctx, &defaults).unwrap();
            assert_eq!(toggled.score, removed.score, "seed {seed}");
        }
    }
}
