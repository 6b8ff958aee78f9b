use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pacc_core::domain::NotApplicable;
use pacc_core::domain::{CaseKind, VatReturn};
use pacc_core::sources::*;
use pacc_core::testkit::blank_case;
use pacc_core::*;

fn ym(s: &str) -> YearMonth {
    s.parse().unwrap()
}

#[test]
fn watchlist_link_counts() {
    let mut hub = SourceHub::default();
    let mut case = blank_case("C1", CaseKind::MissingTrader);
    assert_eq!(hub.snapshot().watchlist_links(&case), Ok(0));
    hub.register_company("W1", "X", "AT").unwrap();
    hub.add_watchlist_link("W1", "P1").unwrap();
    case.persons = vec!["P1".into(), "P2".into()];
    assert_eq!(hub.snapshot().watchlist_links(&case), Ok(1));
    hub.set_legal_basis(WATCHLIST, false).unwrap();
    assert_eq!(
        hub.snapshot().watchlist_links(&case),
        Err(NotApplicable::new("no legal basis"))
    );
}

#[test]
fn address_counts_include_own_company() {
    let mut hub = SourceHub::default();
    let mut case = blank_case("C0", CaseKind::MissingTrader);
    case.address_id = "SHARED".into();
    assert_eq!(hub.snapshot().companies_at_address(&case), Ok(0));
    hub.register_company("C0", "SHARED", "AT").unwrap();
    assert_eq!(hub.snapshot().companies_at_address(&case), Ok(1));
    for i in 1..14 {
        hub.register_company(&format!("C{i}"), "SHARED", "AT")
            .unwrap();
    }
    assert_eq!(hub.snapshot().companies_at_address(&case), Ok(14));
    assert!(hub.registry().index_consistent());
    assert_eq!(
        hub.register_company("C3", "ELSE", "AT"),
        Err(SourceError::DuplicateCompany("C3".into()))
    );
}

#[test]
fn months_since_last_return() {
    let mut case = blank_case("C", CaseKind::MissingTrader);
    let now = ym("2024-06");
    case.vat_returns = vec![VatReturn {
        period: ym("2024-06"),
        filed: true,
    }];
    assert_eq!(months_since_last_vat_return(&case, now), Ok(0));
    case.vat_returns = vec![
        VatReturn {
            period: ym("2022-05"),
            filed: true,
        },
        VatReturn {
            period: ym("2023-01"),
            filed: false,
        },
    ];
    assert_eq!(months_since_last_vat_return(&case, now), Ok(25));
    case.vat_returns.clear();
    case.registered_date = chrono::NaiveDate::from_ymd_opt(2021, 6, 15).unwrap();
    assert_eq!(months_since_last_vat_return(&case, now), Ok(36));
    case.registered_date = chrono::NaiveDate::from_ymd_opt(2024, 6, 3).unwrap();
    assert!(months_since_last_vat_return(&case, now).is_err());
}

#[test]
fn uid_invalid_count_ignores_pending() {
    let mut hub = SourceHub::default();
    hub.register_company("F1", "X", "DE").unwrap();
    hub.register_company("F2", "Y", "DE").unwrap();
    hub.register_company("D1", "Z", DOMESTIC_STATE).unwrap();
    let mut case = blank_case("C", CaseKind::MissingTrader);
    case.trading_partners = vec!["F1".into(), "F2".into(), "D1".into()];
    hub.enqueue_partner_checks(&case, 500);
    assert_eq!(hub.uid_client().pending(), 2);
    assert_eq!(hub.snapshot().uid_invalid_count(&case), Ok(0));
    hub.set_uid_quota(1).unwrap();
    hub.run_validation_day(|_| false).unwrap();
    assert_eq!(hub.snapshot().uid_invalid_count(&case), Ok(1));
    hub.run_validation_day(|_| false).unwrap();
    assert_eq!(hub.snapshot().uid_invalid_count(&case), Ok(2));
}

#[test]
fn mutation_during_batch_is_rejected() {
    let mut hub = SourceHub::default();
    let guard = hub.begin_batch();
    let before = guard.snapshot().version();
    assert!(hub.batch_running());
    assert_eq!(hub.add_watchlist_link("W", "P"), Err(SourceError::MidBatch));
    assert_eq!(
        hub.run_validation_day(|_| true).unwrap_err(),
        SourceError::MidBatch
    );
    assert_eq!(guard.snapshot().version(), before);
    drop(guard);
    assert!(hub.add_watchlist_link("W", "P").is_ok());
}

#[test]
fn snapshots_do_not_see_later_writes() {
    let mut hub = SourceHub::default();
    let mut case = blank_case("C", CaseKind::MissingTrader);
    case.persons = vec!["P".into()];
    let old = hub.snapshot();
    hub.add_watchlist_link("W", "P").unwrap();
    assert_eq!(old.watchlist_links(&case), Ok(0));
    assert_eq!(hub.snapshot().watchlist_links(&case), Ok(1));
}

#[test]
fn unknown_source_rejected() {
    let mut hub = SourceHub::default();
    assert_eq!(
        hub.set_legal_basis("tea_leaves", true),
        Err(SourceError::UnknownSource("tea_leaves".into()))
    );
}

#[test]
fn ingest_empty_files() {
    let got = ingest("", "", "", &FeatureSchema::shipped(), None).unwrap();
    assert_eq!(got.summary, LoadSummary::default());
}

#[test]
fn ingest_rejects_everything_on_one_bad_row() {
    let case = blank_case("C1", CaseKind::MissingTrader);
    let cases = format!("{}\n", case.to_json_line());
    let registry = "company_id,address_id,member_state\nC1,A,AT\nC1,B,AT\n";
    let err = ingest(
        &cases,
        "company_id,person_id\n",
        registry,
        &FeatureSchema::shipped(),
        None,
    )
    .unwrap_err();
    let DomainError::Rejected(d) = err else {
        panic!()
    };
    assert_eq!(d.len(), 1);
    assert!(d[0].message.contains("duplicate company id"));
    let ok = ingest(
        &cases,
        "company_id,person_id\nC1,P9\n",
        "company_id,address_id,member_state\nC1,A,AT\n",
        &FeatureSchema::shipped(),
        None,
    )
    .unwrap();
    assert_eq!(ok.summary.cases, 1);
    assert_eq!(ok.summary.watchlist_links, 1);
    assert_eq!(ok.summary.registry_companies, 1);
    let err = ingest("{not json}\n", "", "", &FeatureSchema::shipped(), None).unwrap_err();
    let DomainError::Rejected(d) = err else {
        panic!()
    };
    assert_eq!(d[0].path, "cases: line 1");
}

/// Randomized enqueue/day schedules: quota never exceeded, and a queue present at some
/// point drains within ceil(len / Q) further days when nothing else arrives.
#[test]
fn quota_safety_and_liveness() {
    for trial in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let q = rng.random_range(1..6);
        let mut client = UidValidationClient::new(q);
        let states = ["DE", "FR", "IT"];
        for _ in 0..rng.random_range(1..8) {
            for _ in 0..rng.random_range(0..20) {
                let s = states[rng.random_range(0..3)];
                client.enqueue(
                    s,
                    &format!("U{}", rng.random_range(0..60)),
                    rng.random_range(0..1000),
                );
            }
            let done = client.run_validation_day(|id| id.len() % 2 == 0);
            for s in states {
                assert!(done.iter().filter(|p| p.state == s).count() <= q);
                assert!(client.processed_today(s) <= q);
            }
        }
        let longest = states.iter().map(|s| client.pending_in(s)).max().unwrap();
        for _ in 0..longest.div_ceil(q) {
            client.run_validation_day(|_| true);
        }
        assert_eq!(client.pending(), 0, "trial {trial}");
    }
}
