use std::path::{Path, PathBuf};

use pacc_core::evaluation::OutcomeConfig;
use pacc_core::models::TrainingConfig;
use pacc_core::TierDefaults;
use serde::{Deserialize, Serialize};

use crate::AppError;

/// Environment variable naming the JSON config file.
pub const CONFIG_ENV: &str = "PACC_SELECT_CONFIG";

/// File names inside the data directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileNames {
    pub cases: String,
    pub watchlist: String,
    pub registry: String,
    pub uid_register: String,
    pub truth: String,
    pub models: String,
    pub reports: String,
    pub plan: String,
    pub signals: String,
    pub selection: String,
    pub state: String,
    pub run_log: String,
    pub evaluation: String,
}

impl Default for FileNames {
    fn default() -> Self {
        FileNames {
            cases: "cases.jsonl".into(),
            watchlist: "watchlist.csv".into(),
            registry: "registry.csv".into(),
            uid_register: "vies.csv".into(),
            truth: "truth.jsonl".into(),
            models: "models.json".into(),
            reports: "reports.jsonl".into(),
            plan: "plan.json".into(),
            signals: "signals.jsonl".into(),
            selection: "selection.jsonl".into(),
            state: "state.json".into(),
            run_log: "run_log.jsonl".into(),
            evaluation: "evaluation.json".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub data_dir: PathBuf,
    pub files: FileNames,
    /// Rule files; empty means the shipped rule bases.
    pub rules: Vec<PathBuf>,
    pub uid_quota: usize,
    pub uid_days_per_month: u32,
    pub port: u16,
    pub seed: u64,
    /// Scoring batches per simulated month.
    pub cadence: u32,
    pub tier_defaults: TierDefaults,
    pub outcomes: OutcomeConfig,
    pub training: TrainingConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            data_dir: PathBuf::from("."),
            files: FileNames::default(),
            rules: Vec::new(),
            uid_quota: pacc_core::sources::DEFAULT_DAILY_QUOTA,
            uid_days_per_month: 30,
            port: 8080,
            seed: 0,
            cadence: 2,
            tier_defaults: TierDefaults::default(),
            outcomes: OutcomeConfig::default(),
            training: TrainingConfig::default(),
        }
    }
}

impl AppConfig {
    pub fn from_json(text: &str) -> Result<AppConfig, AppError> {
        let cfg: AppConfig =
            serde_json::from_str(text).map_err(|e| AppError::Data(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<AppConfig, AppError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::Data(format!("cannot read config {}: {e}", path.display())))?;
        AppConfig::from_json(&text)
    }

    /// The file named by `--config`, else by the environment variable, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<AppConfig, AppError> {
        if let Some(p) = explicit {
            return AppConfig::load(p);
        }
        match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => AppConfig::load(Path::new(&p)),
            _ => Ok(AppConfig::default()),
        }
    }

    pub fn validate(&self) -> Result<(), AppError> {
        if self.cadence == 0 {
            return Err(AppError::Data("config: cadence must be at least 1".into()));
        }
        if self.port == 0 {
            return Err(AppError::Data(
                "config: port must be between 1 and 65535".into(),
            ));
        }
        self.tier_defaults
            .validate()
            .map_err(|e| AppError::Data(format!("config: {e}")))?;
        Ok(())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.data_dir.join(name)
    }
}
