//! Monthly simulation loop and the end-to-end train, score, select and evaluate experiment.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Corpus, FeatureSchema, TierDefaults, YearMonth};
use crate::evaluation::{attach_outcomes, success_rate, EvaluationReport, OutcomeConfig};
use crate::models::{train_models, ModelError, TrainedModels, TrainingConfig};
use crate::scoring::{reports_digest, Activation, RuleBase, ScoreReport, ScoringEnv};
use crate::selection::{compose_plan, PlanError, SelectionDecision, SelectionPlan};
use crate::sources::{SourceError, SourceHub, UidValidationClient, DEFAULT_DAILY_QUOTA};
use crate::synth::{generate_corpus, GeneratorConfig, GeneratorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// Scoring batches per simulated month.
    pub cadence: u32,
    pub uid_days_per_month: u32,
    pub uid_quota: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            cadence: 2,
            uid_days_per_month: 30,
            uid_quota: DEFAULT_DAILY_QUOTA,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("cadence must be at least 1")]
    Cadence,
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// One scoring batch as recorded in the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub clock: u32,
    /// SHA-256 of the batch's report lines.
    pub digest: String,
    pub scored: usize,
    pub errors: usize,
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthSummary {
    pub clock: u32,
    pub month: YearMonth,
    pub rule_base: String,
    pub batches: Vec<BatchRecord>,
    pub uid_checks: usize,
    pub uid_invalid: usize,
    pub uid_pending: usize,
    /// Audit outcomes that became visible this month.
    pub matured: usize,
}

/// Cases, sources, models and rules advanced one simulated month at a time.
#[derive(Debug)]
pub struct Simulation {
    pub corpus: Corpus,
    pub hub: SourceHub,
    pub rules: RuleBase,
    pub models: TrainedModels,
    pub activation: Activation,
    pub config: SimulationConfig,
    /// Validity of every VAT id the UID checks can be asked about.
    uid_register: BTreeMap<String, bool>,
    reports: Vec<ScoreReport>,
    log: Vec<MonthSummary>,
}

impl Simulation {
    pub fn new(
        corpus: Corpus,
        hub: SourceHub,
        rules: RuleBase,
        models: TrainedModels,
        uid_register: BTreeMap<String, bool>,
        config: SimulationConfig,
    ) -> Result<Simulation, SimulationError> {
        if config.cadence == 0 {
            return Err(SimulationError::Cadence);
        }
        let mut hub = hub;
        hub.set_uid_quota(config.uid_quota)?;
        Ok(Simulation {
            corpus,
            hub,
            rules,
            models,
            activation: Activation::new(),
            config,
            uid_register,
            reports: Vec::new(),
            log: Vec::new(),
        })
    }

    pub fn clock(&self) -> u32 {
        self.corpus.clock()
    }

    /// Reports of the latest batch, in corpus order.
    pub fn reports(&self) -> &[ScoreReport] {
        &self.reports
    }

    pub fn log(&self) -> &[MonthSummary] {
        &self.log
    }

    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|m| serde_json::to_string(m).expect("log serializes") + "\n")
            .collect()
    }

    /// Scores every case against the current source snapshot, then queues the trading
    /// partners of scored cases for UID validation, higher scores first.
    pub fn score_batch(&mut self) -> BatchRecord {
        let results = {
            let guard = self.hub.begin_batch();
            let env = ScoringEnv {
                models: &self.models,
                sources: guard.snapshot(),
                clock: self.corpus.clock(),
                now: self.corpus.now(),
            };
            self.rules
                .score_batch(&self.corpus.cases, env, &self.activation)
        };
        let mut errors = 0;
        let mut reports = Vec::with_capacity(results.len());
        for r in results {
            match r {
                Ok(report) => reports.push(report),
                Err(_) => errors += 1,
            }
        }
        let scores: BTreeMap<&str, u32> = reports
            .iter()
            .map(|r| (r.case_id.as_str(), u32::from(r.score.value())))
            .collect();
        for case in &self.corpus.cases {
            if let Some(&score) = scores.get(case.case_id.as_str()) {
                self.hub.enqueue_partner_checks(case, score);
            }
        }
        let digest = reports_digest(&reports);
        let record = BatchRecord {
            clock: self.corpus.clock(),
            digest,
            scored: reports.len(),
            errors,
        };
        self.reports = reports;
        record
    }

    fn run_uid_days(&mut self, days: u32) -> Result<(usize, usize), SourceError> {
        let register = &self.uid_register;
        let mut checks = 0;
        let mut invalid = 0;
        for _ in 0..days {
            let done = self
                .hub
                .run_validation_day(|id| register.get(id).copied().unwrap_or(false))?;
            checks += done.len();
            invalid += done.iter().filter(|p| !p.valid).count();
        }
        Ok((checks, invalid))
    }

    /// Advances the clock one month, runs the scoring batches with the UID days spread
    /// between them, and appends the month's summary to the run log.
    pub fn simulate_month(&mut self) -> Result<&MonthSummary, SimulationError> {
        self.corpus.advance(1);
        let clock = self.corpus.clock();
        let matured = self
            .corpus
            .cases
            .iter()
            .filter(|c| {
                c.outcome
                    .as_ref()
                    .is_some_and(|o| o.audited && o.available_at == clock)
            })
            .count();
        let cadence = self.config.cadence;
        let days = self.config.uid_days_per_month;
        let mut batches = Vec::new();
        let mut uid_checks = 0;
        let mut uid_invalid = 0;
        for b in 0..cadence {
            batches.push(self.score_batch());
            let share = days / cadence + u32::from(b + 1 == cadence) * (days % cadence);
            let (checks, invalid) = self.run_uid_days(share)?;
            uid_checks += checks;
            uid_invalid += invalid;
        }
        self.log.push(MonthSummary {
            clock,
            month: self.corpus.now(),
            rule_base: self.rules.digest(),
            batches,
            uid_checks,
            uid_invalid,
            uid_pending: self.hub.uid_client().pending(),
            matured,
        });
        Ok(self.log.last().expect("just pushed"))
    }
}

/// Everything one seeded train, score, select and evaluate run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    pub training: TrainingConfig,
    pub plan: SelectionPlan,
    pub outcomes: OutcomeConfig,
    pub simulation: SimulationConfig,
    pub tier_defaults: TierDefaults,
    /// Months simulated before selection, so that UID results are available.
    pub warmup_months: u32,
    /// Months simulated after the audits before evaluating.
    pub maturation_months: u32,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        use crate::selection::Strategy;
        ExperimentConfig {
            generator: GeneratorConfig::default(),
            training: TrainingConfig::default(),
            plan: SelectionPlan::default()
                .with_count(Strategy::Risk, 100)
                .with_count(Strategy::RandomControl, 100),
            outcomes: OutcomeConfig::default(),
            simulation: SimulationConfig::default(),
            tier_defaults: TierDefaults::default(),
            warmup_months: 1,
            maturation_months: 12,
        }
    }
}

impl ExperimentConfig {
    /// The same experiment with every seed derived from `seed`.
    pub fn with_seed(&self, seed: u64) -> ExperimentConfig {
        let mut cfg = self.clone();
        cfg.generator.seed = seed;
        cfg.training.seed = seed;
        cfg.plan.seed = seed;
        cfg.outcomes.seed = seed;
        cfg
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub decisions: Vec<SelectionDecision>,
    pub evaluation: EvaluationReport,
    pub log: Vec<MonthSummary>,
    pub score_errors: usize,
}

/// Generates a corpus, trains on its historical outcomes, simulates the warm-up months,
/// selects, audits the selection, lets outcomes mature and evaluates.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun, SimulationError> {
    let generated = generate_corpus(&cfg.generator)?;
    let schema = FeatureSchema::shipped();
    let models = train_models(&generated.cases, &schema, &cfg.training, 0)?;
    let hub = SourceHub::new(
        generated.watchlist,
        generated.registry,
        UidValidationClient::default(),
    );
    let corpus = Corpus::new(generated.cases, generated.base_month);
    let rules = RuleBase::shipped(cfg.tier_defaults);
    let mut sim = Simulation::new(
        corpus,
        hub,
        rules,
        models,
        generated.uid_register,
        cfg.simulation,
    )?;
    for _ in 0..cfg.warmup_months {
        sim.simulate_month()?;
    }
    if sim.reports().is_empty() {
        sim.score_batch();
    }
    let selection = compose_plan(
        &cfg.plan,
        &sim.corpus.cases,
        sim.reports(),
        &[],
        sim.corpus.now(),
    )?;
    let audited: BTreeSet<String> = selection
        .decisions
        .iter()
        .map(|d| d.case_id.clone())
        .collect();
    let clock = sim.clock();
    attach_outcomes(
        &mut sim.corpus.cases,
        &generated.truth,
        &audited,
        clock,
        &cfg.outcomes,
    );
    for _ in 0..cfg.maturation_months {
        sim.simulate_month()?;
    }
    let evaluation = success_rate(
        &selection.decisions,
        &sim.corpus.cases,
        sim.clock(),
        cfg.outcomes.delay_months,
    );
    let score_errors = sim
        .log()
        .iter()
        .flat_map(|m| &m.batches)
        .map(|b| b.errors)
        .sum();
    Ok(ExperimentRun {
        decisions: selection.decisions,
        evaluation,
        log: sim.log().to_vec(),
        score_errors,
    })
}
