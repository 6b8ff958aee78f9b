//! JSON HTTP service for the review dashboard.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pacc_core::evaluation::success_rate;
use pacc_core::models::TrainedModels;
use pacc_core::rules::{format_expr, RuleSet};
use pacc_core::scoring::{
    render_explanations, reports_digest, Activation, CaseContext, RuleBase, ScoreError,
    ScoreReport, ScoringEnv,
};
use pacc_core::selection::SelectionDecision;
use pacc_core::sources::{BatchGuard, SourceHub};
use pacc_core::{CaseKind, Corpus, TaxpayerCase};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Everything the service reads; replaced wholesale by batch runs.
#[derive(Debug)]
pub struct Service {
    corpus: Corpus,
    index: BTreeMap<String, usize>,
    hub: SourceHub,
    rules: RuleBase,
    models: TrainedModels,
    activation: Activation,
    reports: BTreeMap<String, ScoreReport>,
    decisions: Vec<SelectionDecision>,
    outcome_delay: u32,
    last_batch: Option<BatchSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub digest: String,
    pub rule_base: String,
    pub count: usize,
    pub errors: usize,
    pub clock: u32,
}

pub type SharedService = Arc<RwLock<Service>>;

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    #[serde(default)]
    pub case_id: Option<String>,
    #[serde(default)]
    pub disabled_rules: Vec<String>,
    #[serde(default)]
    pub persist: bool,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn not_found(case_id: &str) -> Self {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("unknown case {case_id}"),
        )
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn conflict() -> Self {
        ApiError::new(
            StatusCode::CONFLICT,
            "batch_running",
            "a scoring batch is running; retry when it has finished",
        )
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({"error": {"code": self.code, "message": self.message}})),
        )
            .into_response()
    }
}

impl From<ScoreError> for ApiError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::UnknownRule(name) => ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "unknown_rule",
                format!("unknown rule {name:?}"),
            ),
            other => ApiError::internal(other.to_string()),
        }
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

impl Service {
    /// A service over `corpus`; scores every case immediately.
    pub fn new(
        corpus: Corpus,
        hub: SourceHub,
        rules: RuleBase,
        models: TrainedModels,
        activation: Activation,
    ) -> Self {
        let index = corpus
            .cases
            .iter()
            .enumerate()
            .map(|(i, c)| (c.case_id.clone(), i))
            .collect();
        let mut service = Service {
            corpus,
            index,
            hub,
            rules,
            models,
            activation,
            reports: BTreeMap::new(),
            decisions: Vec::new(),
            outcome_delay: pacc_core::evaluation::OutcomeConfig::default().delay_months,
            last_batch: None,
        };
        let guard = service.hub.begin_batch();
        let (reports, summary) = service.run_batch(&guard);
        drop(guard);
        service.install(reports, summary);
        service
    }

    /// Selection decisions evaluated by `/api/evaluation/summary`.
    pub fn with_decisions(mut self, decisions: Vec<SelectionDecision>, outcome_delay: u32) -> Self {
        self.decisions = decisions;
        self.outcome_delay = outcome_delay;
        self
    }

    pub fn shared(self) -> SharedService {
        Arc::new(RwLock::new(self))
    }

    /// Marks a batch as running until the guard is dropped.
    pub fn begin_batch(&self) -> BatchGuard {
        self.hub.begin_batch()
    }

    pub fn report(&self, case_id: &str) -> Option<&ScoreReport> {
        self.reports.get(case_id)
    }

    pub fn activation(&self) -> &Activation {
        &self.activation
    }

    pub fn case(&self, case_id: &str) -> Option<&TaxpayerCase> {
        self.index.get(case_id).map(|&i| &self.corpus.cases[i])
    }

    fn env<'a>(&'a self, guard: &'a BatchGuard) -> ScoringEnv<'a> {
        ScoringEnv {
            models: &self.models,
            sources: guard.snapshot(),
            clock: self.corpus.clock(),
            now: self.corpus.now(),
        }
    }

    fn run_batch(&self, guard: &BatchGuard) -> (Vec<ScoreReport>, BatchSummary) {
        let results = self
            .rules
            .score_batch(&self.corpus.cases, self.env(guard), &self.activation);
        let errors = results.iter().filter(|r| r.is_err()).count();
        let reports: Vec<ScoreReport> = results.into_iter().filter_map(Result::ok).collect();
        let summary = BatchSummary {
            digest: reports_digest(&reports),
            rule_base: self.rules.digest(),
            count: reports.len(),
            errors,
            clock: self.corpus.clock(),
        };
        (reports, summary)
    }

    fn install(&mut self, reports: Vec<ScoreReport>, summary: BatchSummary) {
        self.reports = reports
            .into_iter()
            .map(|r| (r.case_id.clone(), r))
            .collect();
        self.last_batch = Some(summary);
    }

    /// Score of one case with exactly `disabled` deactivated.
    pub fn what_if(
        &self,
        case_id: &str,
        disabled: &BTreeSet<String>,
    ) -> Result<ScoreReport, ApiError> {
        let case = self
            .case(case_id)
            .ok_or_else(|| ApiError::not_found(case_id))?;
        let snapshot = self.hub.snapshot();
        let env = ScoringEnv {
            models: &self.models,
            sources: &snapshot,
            clock: self.corpus.clock(),
            now: self.corpus.now(),
        };
        Ok(self.rules.score(&CaseContext {
            case,
            env,
            deactivated: disabled,
        })?)
    }

    fn ranked(&self) -> Vec<&ScoreReport> {
        let mut rows: Vec<&ScoreReport> = self.reports.values().collect();
        rows.sort_by(|a, b| {
            b.score
                .cmp(&a.score)
                .then_with(|| a.case_id.cmp(&b.case_id))
        });
        rows
    }
}

fn rule_set_json(kind: CaseKind, rs: &RuleSet, scorer: &pacc_core::scoring::Scorer) -> Value {
    let defaults = scorer.tier_defaults();
    let rules: Vec<Value> = rs
        .rules
        .iter()
        .map(|r| {
            json!({
                "name": r.name,
                "tier": r.tier,
                "color": r.tier.color(),
                "contribution": r.effective_contribution(&defaults),
                "source": r.source,
                "condition": format_expr(&r.condition),
                "explanation": r.explanation,
            })
        })
        .collect();
    let combos: Vec<Value> = rs
        .synergies
        .iter()
        .map(|s| json!({"rules": s.rule_names, "bonus": s.bonus}))
        .collect();
    json!({"kind": kind, "digest": scorer.digest(), "rules": rules, "combos": combos})
}

fn read(service: &SharedService) -> std::sync::RwLockReadGuard<'_, Service> {
    service.read().unwrap_or_else(|e| e.into_inner())
}

fn write(service: &SharedService) -> std::sync::RwLockWriteGuard<'_, Service> {
    service.write().unwrap_or_else(|e| e.into_inner())
}

async fn get_rules(State(s): State<SharedService>) -> ApiResult {
    let svc = read(&s);
    let sets: Vec<Value> = svc
        .rules
        .scorers()
        .map(|(kind, scorer)| rule_set_json(kind, scorer.ruleset(), scorer))
        .collect();
    Ok(Json(
        json!({"rule_base": svc.rules.digest(), "rule_sets": sets}),
    ))
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    sort: Option<String>,
    limit: Option<String>,
    offset: Option<String>,
}

const DEFAULT_LIMIT: usize = 50;

fn parse_count(name: &str, value: Option<&str>, default: usize) -> Result<usize, ApiError> {
    match value {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| ApiError::bad_request(format!("{name} must be a non-negative integer"))),
    }
}

async fn list_cases(State(s): State<SharedService>, Query(q): Query<ListQuery>) -> ApiResult {
    let limit = parse_count("limit", q.limit.as_deref(), DEFAULT_LIMIT)?;
    let offset = parse_count("offset", q.offset.as_deref(), 0)?;
    let svc = read(&s);
    let mut rows = svc.ranked();
    match q.sort.as_deref() {
        None | Some("score") => {}
        Some("case_id") => rows.sort_by(|a, b| a.case_id.cmp(&b.case_id)),
        Some(other) => {
            return Err(ApiError::bad_request(format!(
                "unknown sort {other:?}; use score or case_id"
            )))
        }
    }
    let total = rows.len();
    let cases: Vec<Value> = rows
        .into_iter()
        .skip(offset)
        .take(limit)
        .map(|r| {
            let mut top: Vec<_> = r.triggered.iter().collect();
            top.sort_by(|a, b| {
                b.contribution
                    .total_cmp(&a.contribution)
                    .then_with(|| a.rule_name.cmp(&b.rule_name))
            });
            let top: Vec<&str> = top.iter().take(3).map(|t| t.rule_name.as_str()).collect();
            json!({"case_id": r.case_id, "kind": r.kind, "score": r.score, "top_rules": top})
        })
        .collect();
    Ok(Json(
        json!({"total": total, "offset": offset, "limit": limit, "cases": cases}),
    ))
}

async fn case_report(State(s): State<SharedService>, Path(id): Path<String>) -> ApiResult {
    let svc = read(&s);
    let report = svc.report(&id).ok_or_else(|| ApiError::not_found(&id))?;
    Ok(Json(
        json!({"report": report, "explanation": render_explanations(report)}),
    ))
}

async fn what_if(State(s): State<SharedService>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let value: Value = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))?;
    if !value.is_object() {
        return Err(ApiError::bad_request("request body must be a JSON object"));
    }
    let req: WhatIfRequest = serde_json::from_value(value)
        .map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))?;
    if req.case_id.as_ref().is_some_and(|c| *c != id) {
        return Err(ApiError::bad_request(
            "case_id in the body does not match the path",
        ));
    }
    let disabled: BTreeSet<String> = req.disabled_rules.into_iter().collect();
    if !req.persist {
        let svc = read(&s);
        let baseline = svc.report(&id).map(|r| r.score);
        let report = svc.what_if(&id, &disabled)?;
        let text = render_explanations(&report);
        return Ok(Json(
            json!({"report": report, "explanation": text, "persisted": false, "baseline_score": baseline}),
        ));
    }
    if read(&s).hub.batch_running() {
        return Err(ApiError::conflict());
    }
    let mut svc = write(&s);
    if svc.hub.batch_running() {
        return Err(ApiError::conflict());
    }
    let baseline = svc.report(&id).map(|r| r.score);
    let report = svc.what_if(&id, &disabled)?;
    if disabled.is_empty() {
        svc.activation.remove(&id);
    } else {
        svc.activation.insert(id.clone(), disabled);
    }
    svc.reports.insert(id, report.clone());
    let text = render_explanations(&report);
    Ok(Json(
        json!({"report": report, "explanation": text, "persisted": true, "baseline_score": baseline}),
    ))
}

async fn batch_score(State(s): State<SharedService>) -> ApiResult {
    let shared = Arc::clone(&s);
    let summary = tokio::task::spawn_blocking(move || {
        let (guard, reports, summary) = {
            let svc = read(&shared);
            let guard = svc.hub.begin_batch();
            let (reports, summary) = svc.run_batch(&guard);
            (guard, reports, summary)
        };
        let mut svc = write(&shared);
        svc.install(reports, summary.clone());
        drop(guard);
        summary
    })
    .await
    .map_err(|e| ApiError::internal(format!("batch failed: {e}")))?;
    Ok(Json(
        serde_json::to_value(summary).expect("summary serializes"),
    ))
}

async fn evaluation_summary(State(s): State<SharedService>) -> ApiResult {
    let svc = read(&s);
    let report = success_rate(
        &svc.decisions,
        &svc.corpus.cases,
        svc.corpus.clock(),
        svc.outcome_delay,
    );
    let text = report.render_text();
    Ok(Json(json!({"evaluation": report, "text": text})))
}

async fn health(State(s): State<SharedService>) -> ApiResult {
    let svc = read(&s);
    Ok(Json(json!({
        "status": "ok",
        "clock": svc.corpus.clock(),
        "month": svc.corpus.now(),
        "cases": svc.corpus.cases.len(),
        "reports": svc.reports.len(),
        "rule_base": svc.rules.digest(),
        "last_batch": svc.last_batch,
        "batch_running": svc.hub.batch_running(),
        "models": {
            "company": svc.models.company.is_some(),
            "peers": svc.models.peers.is_some(),
            "effectiveness": svc.models.effectiveness.is_some(),
        },
    })))
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(service: SharedService) -> Router {
    Router::new()
        .route("/api/rules", get(get_rules))
        .route("/api/cases", get(list_cases))
        .route("/api/cases/{id}/report", get(case_report))
        .route("/api/cases/{id}/whatif", post(what_if))
        .route("/api/batch/score", post(batch_score))
        .route("/api/evaluation/summary", get(evaluation_summary))
        .route("/api/health", get(health))
        .fallback(fallback)
        .with_state(service)
}
