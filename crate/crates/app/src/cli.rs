//! The `pacc` command line.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use pacc_core::domain::write_cases_jsonl;
use pacc_core::evaluation::{attach_outcomes, compare_strategies, success_rate};
use pacc_core::models::train_models;
use pacc_core::scoring::{render_explanations, reports_digest, write_reports_jsonl, ScoringEnv};
use pacc_core::selection::{compose_plan, SelectionPlan, Strategy};
use pacc_core::simulation::{run_experiment, ExperimentConfig, Simulation, SimulationConfig};
use pacc_core::synth::{generate_corpus, GeneratorConfig};
use pacc_core::FeatureSchema;

use crate::api::{router, Service};
use crate::config::AppConfig;
use crate::workspace::{self, RunState};
use crate::AppError;

#[derive(Debug, Parser)]
#[command(
    name = "pacc",
    version,
    about = "Risk scoring and audit case selection"
)]
struct Cli {
    /// JSON config file; defaults to $PACC_SELECT_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Data directory; overrides the config.
    #[arg(long, global = true)]
    dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus with ground truth.
    Gen {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 5000)]
        n: usize,
        #[arg(long, default_value_t = 0.05)]
        fraud_rate: f64,
        /// Output directory; defaults to the data directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate the input files and print what they contain.
    Ingest,
    /// Train the models on outcomes visible at the current month.
    Train {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score every case.
    Score {
        /// Rule file; repeat for several rule sets.
        #[arg(long = "rules")]
        rules: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compose a selection from the latest reports.
    Select {
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        signals: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Audit the selected cases, attaching outcomes from the ground truth.
        #[arg(long)]
        audit: bool,
    },
    /// Advance the clock, scoring and running UID checks each month.
    SimulateMonth {
        #[arg(long, default_value_t = 1)]
        months: u32,
    },
    /// Success rates of the current selection, or of whole seeded experiments.
    Evaluate {
        /// Run this many seeded experiments instead of evaluating the data directory.
        #[arg(long)]
        seeds: Option<u64>,
        /// Cases per experiment.
        #[arg(long, default_value_t = 5000)]
        n: usize,
        #[arg(long)]
        json: bool,
    },
    /// Serve the review API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
    },
    /// Print the explanation of one case's latest report.
    Explain {
        #[arg(long = "case")]
        case_id: String,
    },
}

pub fn run() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

/// Runs one command and returns its exit code: 0 on success, 1 for usage errors,
/// 2 for data errors.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let target: &mut dyn Write = if code == 0 { out } else { err };
            let _ = write!(target, "{}", e.render());
            return code;
        }
    };
    match execute(cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn io_err(e: std::io::Error) -> AppError {
    AppError::Data(format!("write failed: {e}"))
}

fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), AppError> {
    let mut cfg = AppConfig::resolve(cli.config.as_deref())?;
    if let Some(dir) = cli.dir {
        cfg.data_dir = dir;
    }
    match cli.command {
        Command::Gen {
            seed,
            n,
            fraud_rate,
            out: dir,
        } => gen(&cfg, seed, n, fraud_rate, dir, out),
        Command::Ingest => ingest(&cfg, out),
        Command::Train { out: path } => train(&cfg, path, out),
        Command::Score { rules, out: path } => score(&cfg, &rules, path, out, err),
        Command::Select {
            plan,
            signals,
            out: path,
            audit,
        } => select(&cfg, plan, signals, path, audit, out),
        Command::SimulateMonth { months } => simulate(&cfg, months, out),
        Command::Evaluate { seeds, n, json } => match seeds {
            Some(seeds) => evaluate_seeds(&cfg, seeds, n, json, out),
            None => evaluate(&cfg, json, out),
        },
        Command::Serve { port } => serve(&cfg, port.unwrap_or(cfg.port), out),
        Command::Explain { case_id } => explain(&cfg, &case_id, out),
    }
}

fn gen(
    cfg: &AppConfig,
    seed: Option<u64>,
    n: usize,
    fraud_rate: f64,
    dir: Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<(), AppError> {
    let gcfg = GeneratorConfig {
        n_cases: n,
        fraud_rate,
        seed: seed.unwrap_or(cfg.seed),
        ..GeneratorConfig::default()
    };
    let corpus = generate_corpus(&gcfg).map_err(|e| AppError::Usage(e.to_string()))?;
    let dir = dir.unwrap_or_else(|| cfg.data_dir.clone());
    corpus
        .write_to_dir(&dir)
        .map_err(|e| AppError::Data(format!("cannot write {}: {e}", dir.display())))?;
    let state = RunState {
        base_month: corpus.base_month,
        ..RunState::default()
    };
    let mut state_cfg = cfg.clone();
    state_cfg.data_dir = dir.clone();
    workspace::save_state(&state_cfg, &state)?;
    writeln!(
        out,
        "generated {} cases ({} fraudulent) in {}",
        corpus.cases.len(),
        corpus.truth.fraud_count(),
        dir.display()
    )
    .map_err(io_err)
}

fn ingest(cfg: &AppConfig, out: &mut dyn Write) -> Result<(), AppError> {
    let state = workspace::load_state(cfg)?;
    let inputs = workspace::load_inputs(cfg, &state)?;
    let s = inputs.summary;
    writeln!(out, "cases: {}", s.cases).map_err(io_err)?;
    writeln!(
        out,
        "watchlist links: {} ({} companies)",
        s.watchlist_links, s.watchlist_companies
    )
    .map_err(io_err)?;
    writeln!(out, "registry companies: {}", s.registry_companies).map_err(io_err)?;
    writeln!(out, "addresses in use: {}", s.addresses_in_use).map_err(io_err)
}

fn train(cfg: &AppConfig, path: Option<PathBuf>, out: &mut dyn Write) -> Result<(), AppError> {
    let state = workspace::load_state(cfg)?;
    let inputs = workspace::load_inputs(cfg, &state)?;
    let models = train_models(
        &inputs.cases,
        &FeatureSchema::shipped(),
        &cfg.training,
        state.clock,
    )
    .map_err(|e| AppError::Data(e.to_string()))?;
    let path = path.unwrap_or_else(|| cfg.path(&cfg.files.models));
    workspace::write_text(&path, &models.to_json())?;
    let clusters = models.company.as_ref().map_or(0, |c| c.cluster.k);
    writeln!(
        out,
        "trained at month {}: company clusters {}, peer groups {}, effectiveness model {}",
        state.clock,
        clusters,
        if models.peers.is_some() { "yes" } else { "no" },
        if models.effectiveness.is_some() {
            "yes"
        } else {
            "no"
        },
    )
    .map_err(io_err)?;
    writeln!(out, "wrote {}", path.display()).map_err(io_err)
}

fn score(
    cfg: &AppConfig,
    rule_files: &[PathBuf],
    path: Option<PathBuf>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), AppError> {
    let mut state = workspace::load_state(cfg)?;
    let inputs = workspace::load_inputs(cfg, &state)?;
    let rules = workspace::load_rules(cfg, rule_files)?;
    let models = workspace::load_models(cfg)?;
    let mut hub = workspace::hub_of(&inputs, &state)?;
    let corpus = workspace::corpus_of(inputs.cases, &state);
    let results = {
        let guard = hub.begin_batch();
        let env = ScoringEnv {
            models: &models,
            sources: guard.snapshot(),
            clock: corpus.clock(),
            now: corpus.now(),
        };
        rules.score_batch(&corpus.cases, env, &state.activation)
    };
    let mut reports = Vec::with_capacity(results.len());
    for (case, r) in corpus.cases.iter().zip(results) {
        match r {
            Ok(report) => {
                hub.enqueue_partner_checks(case, u32::from(report.score.value()));
                reports.push(report);
            }
            Err(e) => {
                let _ = writeln!(err, "{}: {e}", case.case_id);
            }
        }
    }
    let errors = corpus.cases.len() - reports.len();
    let path = path.unwrap_or_else(|| cfg.path(&cfg.files.reports));
    workspace::write_text(&path, &write_reports_jsonl(&reports))?;
    state.uid = hub.uid_client().clone();
    workspace::save_state(cfg, &state)?;
    writeln!(
        out,
        "scored {} cases at month {} ({} errors)",
        reports.len(),
        state.clock,
        errors
    )
    .map_err(io_err)?;
    writeln!(out, "rule base {}", rules.digest()).map_err(io_err)?;
    writeln!(out, "digest {}", reports_digest(&reports)).map_err(io_err)?;
    writeln!(out, "wrote {}", path.display()).map_err(io_err)?;
    if errors > 0 {
        return Err(AppError::Data(format!(
            "{errors} case(s) could not be scored"
        )));
    }
    Ok(())
}

fn select(
    cfg: &AppConfig,
    plan: Option<PathBuf>,
    signals: Option<PathBuf>,
    path: Option<PathBuf>,
    audit: bool,
    out: &mut dyn Write,
) -> Result<(), AppError> {
    let state = workspace::load_state(cfg)?;
    let mut cases = workspace::load_cases(cfg)?;
    let reports = workspace::load_reports(cfg)?;
    let plan_path = plan.unwrap_or_else(|| cfg.path(&cfg.files.plan));
    let plan = if plan_path.exists() {
        workspace::load_plan(&plan_path)?
    } else {
        SelectionPlan::default()
            .with_count(Strategy::Risk, 100)
            .with_count(Strategy::RandomControl, 100)
    };
    let signals =
        workspace::load_signals(&signals.unwrap_or_else(|| cfg.path(&cfg.files.signals)))?;
    let now = state.base_month.plus_months(state.clock as i32);
    let selection = compose_plan(&plan, &cases, &reports, &signals, now)
        .map_err(|e| AppError::Data(e.to_string()))?;
    let path = path.unwrap_or_else(|| cfg.path(&cfg.files.selection));
    workspace::write_text(&path, &selection.to_jsonl())?;
    for w in &selection.warnings {
        writeln!(out, "warning: {w}").map_err(io_err)?;
    }
    for s in Strategy::ALL {
        let n = selection.count(s);
        if n > 0 || plan.count(s) > 0 {
            writeln!(out, "{s}: {n}").map_err(io_err)?;
        }
    }
    writeln!(
        out,
        "selected {} cases; wrote {}",
        selection.decisions.len(),
        path.display()
    )
    .map_err(io_err)?;
    if audit {
        let truth = workspace::load_truth(cfg)?;
        let audited: BTreeSet<String> = selection
            .decisions
            .iter()
            .map(|d| d.case_id.clone())
            .collect();
        let n = attach_outcomes(&mut cases, &truth, &audited, state.clock, &cfg.outcomes);
        workspace::write_text(&cfg.path(&cfg.files.cases), &write_cases_jsonl(&cases))?;
        writeln!(
            out,
            "audited {n} cases; outcomes due from month {}",
            state.clock + cfg.outcomes.delay_months
        )
        .map_err(io_err)?;
    }
    Ok(())
}

fn simulate(cfg: &AppConfig, months: u32, out: &mut dyn Write) -> Result<(), AppError> {
    let mut state = workspace::load_state(cfg)?;
    let inputs = workspace::load_inputs(cfg, &state)?;
    let rules = workspace::load_rules(cfg, &[])?;
    let models = workspace::load_models(cfg)?;
    let register = workspace::load_uid_register(cfg)?;
    let hub = workspace::hub_of(&inputs, &state)?;
    let corpus = workspace::corpus_of(inputs.cases, &state);
    let sim_cfg = SimulationConfig {
        cadence: cfg.cadence,
        uid_days_per_month: cfg.uid_days_per_month,
        uid_quota: cfg.uid_quota,
    };
    let mut sim = Simulation::new(corpus, hub, rules, models, register, sim_cfg)
        .map_err(|e| AppError::Data(e.to_string()))?;
    sim.activation = state.activation.clone();
    for _ in 0..months {
        let m = sim
            .simulate_month()
            .map_err(|e| AppError::Data(e.to_string()))?;
        let errors: usize = m.batches.iter().map(|b| b.errors).sum();
        writeln!(
            out,
            "month {} ({}): {} batches, {} scoring errors, {} UID checks ({} invalid, {} pending), {} outcomes matured",
            m.clock,
            m.month,
            m.batches.len(),
            errors,
            m.uid_checks,
            m.uid_invalid,
            m.uid_pending,
            m.matured
        )
        .map_err(io_err)?;
    }
    workspace::write_text(
        &cfg.path(&cfg.files.reports),
        &write_reports_jsonl(sim.reports()),
    )?;
    let log_path = cfg.path(&cfg.files.run_log);
    let mut log = if log_path.exists() {
        workspace::read_text(&log_path)?
    } else {
        String::new()
    };
    log.push_str(&sim.log_jsonl());
    workspace::write_text(&log_path, &log)?;
    state.clock = sim.clock();
    state.uid = sim.hub.uid_client().clone();
    workspace::save_state(cfg, &state)
}

fn evaluate(cfg: &AppConfig, json: bool, out: &mut dyn Write) -> Result<(), AppError> {
    let state = workspace::load_state(cfg)?;
    let cases = workspace::load_cases(cfg)?;
    let decisions = workspace::load_decisions(cfg)?;
    if decisions.is_empty() {
        return Err(AppError::Data(
            "no selection found; run `pacc select` first".into(),
        ));
    }
    let report = success_rate(&decisions, &cases, state.clock, cfg.outcomes.delay_months);
    let text = report.to_json();
    workspace::write_text(&cfg.path(&cfg.files.evaluation), &text)?;
    if json {
        writeln!(out, "{text}").map_err(io_err)
    } else {
        write!(out, "{}", report.render_text()).map_err(io_err)
    }
}

fn evaluate_seeds(
    cfg: &AppConfig,
    seeds: u64,
    n: usize,
    json: bool,
    out: &mut dyn Write,
) -> Result<(), AppError> {
    if seeds == 0 {
        return Err(AppError::Usage("--seeds must be at least 1".into()));
    }
    let mut base = ExperimentConfig {
        training: cfg.training.clone(),
        outcomes: cfg.outcomes,
        tier_defaults: cfg.tier_defaults,
        ..ExperimentConfig::default()
    };
    base.generator.n_cases = n;
    base.simulation = SimulationConfig {
        cadence: cfg.cadence,
        uid_days_per_month: cfg.uid_days_per_month,
        uid_quota: cfg.uid_quota,
    };
    let mut runs = Vec::new();
    for seed in 0..seeds {
        let run = run_experiment(&base.with_seed(seed))
            .map_err(|e| AppError::Data(format!("seed {seed}: {e}")))?;
        runs.push(run.evaluation);
    }
    let comparison = compare_strategies(&runs);
    if json {
        writeln!(out, "{}", comparison.to_json()).map_err(io_err)
    } else {
        write!(out, "{}", comparison.render_text()).map_err(io_err)
    }
}

/// The service over the data directory's current files.
pub fn load_service(cfg: &AppConfig) -> Result<Service, AppError> {
    let state = workspace::load_state(cfg)?;
    let inputs = workspace::load_inputs(cfg, &state)?;
    let rules = workspace::load_rules(cfg, &[])?;
    let models = workspace::load_models(cfg)?;
    let hub = workspace::hub_of(&inputs, &state)?;
    let decisions = workspace::load_decisions(cfg)?;
    let corpus = workspace::corpus_of(inputs.cases, &state);
    Ok(Service::new(corpus, hub, rules, models, state.activation)
        .with_decisions(decisions, cfg.outcomes.delay_months))
}

fn serve(cfg: &AppConfig, port: u16, out: &mut dyn Write) -> Result<(), AppError> {
    let service = load_service(cfg)?.shared();
    let runtime = tokio::runtime::Runtime::new()
        .map_err(|e| AppError::Data(format!("cannot start runtime: {e}")))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", port))
            .await
            .map_err(|e| AppError::Data(format!("cannot bind port {port}: {e}")))?;
        let _ = writeln!(out, "listening on http://127.0.0.1:{port}");
        let _ = out.flush();
        axum::serve(listener, router(service))
            .await
            .map_err(|e| AppError::Data(format!("server error: {e}")))
    })
}

fn explain(cfg: &AppConfig, case_id: &str, out: &mut dyn Write) -> Result<(), AppError> {
    let reports = workspace::load_reports(cfg)?;
    let report = reports
        .iter()
        .find(|r| r.case_id == case_id)
        .ok_or_else(|| AppError::Data(format!("no report for case {case_id}")))?;
    write!(out, "{}", render_explanations(report)).map_err(io_err)
}
