//! Reading and writing the files of a data directory.

use std::collections::BTreeMap;
use std::path::Path;

use pacc_core::domain::read_cases_jsonl;
use pacc_core::models::TrainedModels;
use pacc_core::rules::{builtin_model_ids, parse_rules};
use pacc_core::scoring::{read_reports_jsonl, Activation, RuleBase, ScoreReport};
use pacc_core::selection::{read_decisions_jsonl, SelectionDecision, SelectionPlan, Signal};
use pacc_core::sources::{ingest, parse_uid_register, Ingested, SourceHub, UidValidationClient};
use pacc_core::synth::GroundTruth;
use pacc_core::{Corpus, CorpusClock, FeatureSchema, TaxpayerCase, YearMonth};
use serde::{Deserialize, Serialize};

use crate::config::AppConfig;
use crate::AppError;

/// Everything that changes between CLI invocations apart from the case file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunState {
    /// Calendar month of clock 0.
    pub base_month: YearMonth,
    pub clock: u32,
    pub uid: UidValidationClient,
    pub legal_basis: BTreeMap<String, bool>,
    pub activation: Activation,
}

impl Default for RunState {
    fn default() -> Self {
        RunState {
            base_month: YearMonth::new(2024, 1).expect("valid month"),
            clock: 0,
            uid: UidValidationClient::default(),
            legal_basis: BTreeMap::new(),
            activation: Activation::new(),
        }
    }
}

pub fn read_text(path: &Path) -> Result<String, AppError> {
    std::fs::read_to_string(path)
        .map_err(|e| AppError::Data(format!("cannot read {}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), AppError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| AppError::Data(format!("cannot create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, text)
        .map_err(|e| AppError::Data(format!("cannot write {}: {e}", path.display())))
}

pub fn load_state(cfg: &AppConfig) -> Result<RunState, AppError> {
    let path = cfg.path(&cfg.files.state);
    if !path.exists() {
        return Ok(RunState::default());
    }
    serde_json::from_str(&read_text(&path)?)
        .map_err(|e| AppError::Data(format!("{}: {e}", path.display())))
}

pub fn save_state(cfg: &AppConfig, state: &RunState) -> Result<(), AppError> {
    let text = serde_json::to_string_pretty(state).expect("state serializes");
    write_text(&cfg.path(&cfg.files.state), &text)
}

/// Cases, watchlist and registry, validated together.
pub fn load_inputs(cfg: &AppConfig, state: &RunState) -> Result<Ingested, AppError> {
    let year = state.base_month.plus_months(state.clock as i32).year();
    ingest(
        &read_text(&cfg.path(&cfg.files.cases))?,
        &read_text(&cfg.path(&cfg.files.watchlist))?,
        &read_text(&cfg.path(&cfg.files.registry))?,
        &FeatureSchema::shipped(),
        Some(year),
    )
    .map_err(|e| match e {
        pacc_core::DomainError::Rejected(diags) => {
            let lines: Vec<String> = diags.iter().take(20).map(|d| format!("  {d}")).collect();
            AppError::Data(format!(
                "input rejected with {} problem(s):\n{}",
                diags.len(),
                lines.join("\n")
            ))
        }
        other => AppError::Data(other.to_string()),
    })
}

pub fn load_cases(cfg: &AppConfig) -> Result<Vec<TaxpayerCase>, AppError> {
    let path = cfg.path(&cfg.files.cases);
    read_cases_jsonl(&read_text(&path)?)
        .map_err(|e| AppError::Data(format!("{}: {e}", path.display())))
}

pub fn corpus_of(cases: Vec<TaxpayerCase>, state: &RunState) -> Corpus {
    Corpus {
        cases,
        base_month: state.base_month,
        clock: CorpusClock::at(state.clock),
    }
}

pub fn hub_of(inputs: &Ingested, state: &RunState) -> Result<SourceHub, AppError> {
    let mut hub = SourceHub::new(
        inputs.watchlist.clone(),
        inputs.registry.clone(),
        state.uid.clone(),
    );
    for (source, allowed) in &state.legal_basis {
        hub.set_legal_basis(source, *allowed)
            .map_err(|e| AppError::Data(format!("state: {e}")))?;
    }
    Ok(hub)
}

pub fn load_uid_register(cfg: &AppConfig) -> Result<BTreeMap<String, bool>, AppError> {
    let path = cfg.path(&cfg.files.uid_register);
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    parse_uid_register(&read_text(&path)?).map_err(|diags| {
        AppError::Data(format!(
            "{}: {}",
            path.display(),
            diags.first().map(|d| d.to_string()).unwrap_or_default()
        ))
    })
}

/// Rule files from `extra` if given, else from the config, else the shipped bases.
pub fn load_rules(cfg: &AppConfig, extra: &[std::path::PathBuf]) -> Result<RuleBase, AppError> {
    let files = if extra.is_empty() { &cfg.rules } else { extra };
    if files.is_empty() {
        return Ok(RuleBase::shipped(cfg.tier_defaults));
    }
    let schema = FeatureSchema::shipped();
    let models = builtin_model_ids();
    let mut sets = Vec::new();
    for f in files {
        let text = read_text(f)?;
        let rs = parse_rules(&text, &schema, &models).map_err(|errs| {
            let lines: Vec<String> = errs
                .0
                .iter()
                .map(|e| format!("{}:{e}", f.display()))
                .collect();
            AppError::Data(lines.join("\n"))
        })?;
        sets.push(rs);
    }
    Ok(RuleBase::new(sets, cfg.tier_defaults))
}

pub fn load_models(cfg: &AppConfig) -> Result<TrainedModels, AppError> {
    let path = cfg.path(&cfg.files.models);
    if !path.exists() {
        return Err(AppError::Data(format!(
            "{} not found; run `pacc train` first",
            path.display()
        )));
    }
    TrainedModels::from_json(&read_text(&path)?)
        .map_err(|e| AppError::Data(format!("{}: {e}", path.display())))
}

pub fn load_reports(cfg: &AppConfig) -> Result<Vec<ScoreReport>, AppError> {
    let path = cfg.path(&cfg.files.reports);
    if !path.exists() {
        return Err(AppError::Data(format!(
            "{} not found; run `pacc score` first",
            path.display()
        )));
    }
    read_reports_jsonl(&read_text(&path)?)
        .map_err(|e| AppError::Data(format!("{}: {e}", path.display())))
}

pub fn load_plan(path: &Path) -> Result<SelectionPlan, AppError> {
    SelectionPlan::from_json(&read_text(path)?)
        .map_err(|e| AppError::Data(format!("{}: {e}", path.display())))
}

/// Signals file as JSON Lines; a missing file means no signals.
pub fn load_signals(path: &Path) -> Result<Vec<Signal>, AppError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| AppError::Data(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn load_decisions(cfg: &AppConfig) -> Result<Vec<SelectionDecision>, AppError> {
    let path = cfg.path(&cfg.files.selection);
    if !path.exists() {
        return Ok(Vec::new());
    }
    read_decisions_jsonl(&read_text(&path)?)
        .map_err(|e| AppError::Data(format!("{}: {e}", path.display())))
}

pub fn load_truth(cfg: &AppConfig) -> Result<GroundTruth, AppError> {
    let path = cfg.path(&cfg.files.truth);
    GroundTruth::from_jsonl(&read_text(&path)?)
        .map_err(|e| AppError::Data(format!("{}: {e}", path.display())))
}
