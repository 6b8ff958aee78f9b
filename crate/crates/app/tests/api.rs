use std::collections::BTreeSet;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use pacc_app::api::{router, Service, SharedService};
use pacc_core::models::{train_models, TrainedModels, TrainingConfig};
use pacc_core::scoring::{Activation, CaseContext, RuleBase, ScoringEnv};
use pacc_core::sources::{SourceHub, UidValidationClient};
use pacc_core::synth::{generate_corpus, GeneratorConfig};
use pacc_core::testkit::{fixture_month, mt_fixture};
use pacc_core::{Corpus, FeatureSchema, TierDefaults};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

fn fixture_service() -> SharedService {
    let (case, hub) = mt_fixture();
    let corpus = Corpus::new(vec![case], fixture_month());
    Service::new(
        corpus,
        hub,
        RuleBase::shipped(TierDefaults::default()),
        TrainedModels::default(),
        Activation::new(),
    )
    .shared()
}

async fn call(
    service: &SharedService,
    method: &str,
    uri: &str,
    body: Option<&str>,
) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = router(service.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX)
        .await
        .unwrap();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

fn error_code(v: &Value) -> &str {
    v["error"]["code"].as_str().unwrap_or("")
}

#[tokio::test]
async fn whatif_disabling_one_rule_drops_719_to_599() {
    let svc = fixture_service();
    let (status, body) = call(&svc, "GET", "/api/cases/T1-0001/report", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["report"]["score"], 719);

    let req = json!({"disabled_rules": ["FewEmployees"]}).to_string();
    let (status, body) = call(&svc, "POST", "/api/cases/T1-0001/whatif", Some(&req)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["report"]["score"], 599);
    assert_eq!(body["baseline_score"], 719);
    assert_eq!(body["persisted"], false);
    assert!(body["explanation"]
        .as_str()
        .unwrap()
        .contains("PersonLinkedToEurofiscWatchlist"));

    let (_, body) = call(&svc, "GET", "/api/cases/T1-0001/report", None).await;
    assert_eq!(
        body["report"]["score"], 719,
        "non-persisted what-if must not change the stored report"
    );
}

#[tokio::test]
async fn persisted_whatif_updates_the_report_and_empty_list_restores_it() {
    let svc = fixture_service();
    let req = json!({"disabled_rules": ["FewEmployees"], "persist": true}).to_string();
    let (status, body) = call(&svc, "POST", "/api/cases/T1-0001/whatif", Some(&req)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["persisted"], true);
    let (_, body) = call(&svc, "GET", "/api/cases/T1-0001/report", None).await;
    assert_eq!(body["report"]["score"], 599);
    assert_eq!(body["report"]["deactivated"], json!(["FewEmployees"]));

    let (_, body) = call(&svc, "POST", "/api/batch/score", None).await;
    assert_eq!(body["count"], 1);
    let (_, body) = call(&svc, "GET", "/api/cases/T1-0001/report", None).await;
    assert_eq!(
        body["report"]["score"], 599,
        "batch runs keep persisted deactivations"
    );

    let req = json!({"disabled_rules": [], "persist": true}).to_string();
    call(&svc, "POST", "/api/cases/T1-0001/whatif", Some(&req)).await;
    let (_, body) = call(&svc, "GET", "/api/cases/T1-0001/report", None).await;
    assert_eq!(body["report"]["score"], 719);
    assert!(svc.read().unwrap().activation().is_empty());
}

#[tokio::test]
async fn unknown_case_is_404() {
    let svc = fixture_service();
    let (status, body) = call(&svc, "GET", "/api/cases/NOPE/report", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(error_code(&body), "not_found");
    let (status, body) = call(&svc, "POST", "/api/cases/NOPE/whatif", Some("{}")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(error_code(&body), "not_found");
}

#[tokio::test]
async fn unknown_rule_is_422() {
    let svc = fixture_service();
    let req = json!({"disabled_rules": ["NoSuchRule"]}).to_string();
    let (status, body) = call(&svc, "POST", "/api/cases/T1-0001/whatif", Some(&req)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(error_code(&body), "unknown_rule");
    assert!(body["error"]["message"]
        .as_str()
        .unwrap()
        .contains("NoSuchRule"));
}

#[tokio::test]
async fn malformed_bodies_are_400() {
    let svc = fixture_service();
    for body in [
        "{not json",
        "[]",
        r#"{"disabled_rules": "FewEmployees"}"#,
        r#"{"bogus": 1}"#,
    ] {
        let (status, v) = call(&svc, "POST", "/api/cases/T1-0001/whatif", Some(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(error_code(&v), "bad_request");
    }
    let req = json!({"case_id": "OTHER", "disabled_rules": []}).to_string();
    let (status, _) = call(&svc, "POST", "/api/cases/T1-0001/whatif", Some(&req)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&svc, "GET", "/api/cases?limit=-1", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&svc, "GET", "/api/cases?sort=random", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn persist_during_a_batch_is_409_but_preview_still_works() {
    let svc = fixture_service();
    let guard = svc.read().unwrap().begin_batch();
    let req = json!({"disabled_rules": ["FewEmployees"], "persist": true}).to_string();
    let (status, body) = call(&svc, "POST", "/api/cases/T1-0001/whatif", Some(&req)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(error_code(&body), "batch_running");

    let req = json!({"disabled_rules": ["FewEmployees"]}).to_string();
    let (status, body) = call(&svc, "POST", "/api/cases/T1-0001/whatif", Some(&req)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["report"]["score"], 599);
    drop(guard);

    let req = json!({"disabled_rules": ["FewEmployees"], "persist": true}).to_string();
    let (status, _) = call(&svc, "POST", "/api/cases/T1-0001/whatif", Some(&req)).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn gets_are_idempotent() {
    let svc = fixture_service();
    for uri in [
        "/api/rules",
        "/api/cases",
        "/api/cases/T1-0001/report",
        "/api/evaluation/summary",
        "/api/health",
    ] {
        let (s1, b1) = call(&svc, "GET", uri, None).await;
        let (s2, b2) = call(&svc, "GET", uri, None).await;
        assert_eq!(s1, StatusCode::OK, "{uri}: {b1}");
        assert_eq!((s1, &b1), (s2, &b2), "{uri}");
    }
}

#[tokio::test]
async fn rules_endpoint_lists_tiers_colors_and_combos() {
    let svc = fixture_service();
    let (_, body) = call(&svc, "GET", "/api/rules", None).await;
    let sets = body["rule_sets"].as_array().unwrap();
    assert_eq!(sets.len(), 2);
    let mt = sets.iter().find(|s| s["kind"] == "missing_trader").unwrap();
    let rule = mt["rules"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["name"] == "PersonLinkedToEurofiscWatchlist")
        .unwrap();
    assert_eq!(rule["tier"], "HIGH");
    assert_eq!(rule["color"], "red");
    assert_eq!(rule["contribution"], 0.6);
    assert!(!mt["combos"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn unknown_endpoint_is_json_404() {
    let svc = fixture_service();
    let (status, body) = call(&svc, "GET", "/api/nothing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(error_code(&body), "not_found");
}

fn generated_service() -> (
    SharedService,
    pacc_core::synth::GeneratedCorpus,
    TrainedModels,
) {
    let cfg = GeneratorConfig {
        n_cases: 400,
        fraud_rate: 0.1,
        seed: 11,
        ..GeneratorConfig::default()
    };
    let g = generate_corpus(&cfg).unwrap();
    let models = train_models(
        &g.cases,
        &FeatureSchema::shipped(),
        &TrainingConfig::default(),
        0,
    )
    .unwrap();
    let hub = SourceHub::new(
        g.watchlist.clone(),
        g.registry.clone(),
        UidValidationClient::default(),
    );
    let corpus = Corpus::new(g.cases.clone(), g.base_month);
    let svc = Service::new(
        corpus,
        hub,
        RuleBase::shipped(TierDefaults::default()),
        models.clone(),
        Activation::new(),
    );
    (svc.shared(), g, models)
}

#[tokio::test]
async fn whatif_matches_direct_scoring_on_random_deactivations() {
    let (svc, g, models) = generated_service();
    let rules = RuleBase::shipped(TierDefaults::default());
    let hub = SourceHub::new(
        g.watchlist.clone(),
        g.registry.clone(),
        UidValidationClient::default(),
    );
    let snapshot = hub.snapshot();
    let env = ScoringEnv {
        models: &models,
        sources: &snapshot,
        clock: 0,
        now: g.base_month,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let case = g.cases.choose(&mut rng).unwrap();
        let names: Vec<&str> = rules
            .scorer(case.kind)
            .unwrap()
            .ruleset()
            .rule_names()
            .collect();
        let disabled: BTreeSet<String> = names
            .iter()
            .filter(|_| rng.random_bool(0.3))
            .map(|s| s.to_string())
            .collect();
        let expected = rules
            .score(&CaseContext {
                case,
                env,
                deactivated: &disabled,
            })
            .unwrap();

        let req = json!({"disabled_rules": disabled}).to_string();
        let uri = format!("/api/cases/{}/whatif", case.case_id);
        let (status, body) = call(&svc, "POST", &uri, Some(&req)).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        assert_eq!(
            body["report"]["score"],
            expected.score.value(),
            "{} {:?}",
            case.case_id,
            disabled
        );
        assert_eq!(
            body["baseline_score"],
            svc.read()
                .unwrap()
                .report(&case.case_id)
                .unwrap()
                .score
                .value()
        );
    }
}

#[tokio::test]
async fn case_list_sorts_and_pages() {
    let (svc, g, _) = generated_service();
    let (_, body) = call(&svc, "GET", "/api/cases?limit=1000", None).await;
    assert_eq!(body["total"], g.cases.len());
    let scores: Vec<u64> = body["cases"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["score"].as_u64().unwrap())
        .collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    let (_, page) = call(
        &svc,
        "GET",
        "/api/cases?sort=case_id&limit=5&offset=10",
        None,
    )
    .await;
    let ids: Vec<&str> = page["cases"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["case_id"].as_str().unwrap())
        .collect();
    let mut all: Vec<&str> = g.cases.iter().map(|c| c.case_id.as_str()).collect();
    all.sort();
    assert_eq!(ids, &all[10..15]);
}

#[tokio::test]
async fn batch_score_reports_a_stable_digest() {
    let (svc, _, _) = generated_service();
    let (_, a) = call(&svc, "POST", "/api/batch/score", None).await;
    let (_, b) = call(&svc, "POST", "/api/batch/score", None).await;
    assert_eq!(a["digest"], b["digest"]);
    assert_eq!(a["errors"], 0);
    let (_, health) = call(&svc, "GET", "/api/health", None).await;
    assert_eq!(health["last_batch"]["digest"], a["digest"]);
    assert_eq!(health["batch_running"], false);
}
