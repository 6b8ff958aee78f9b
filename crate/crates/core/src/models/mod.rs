//! Predictive models whose outputs feed `model.*` references and peer calls in rules.

pub mod effectiveness;
pub mod kmeans;
pub mod metrics;
pub mod peers;
pub mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{CaseKind, FeatureSchema, NotApplicable, TaxpayerCase};
use crate::rules::{MODEL_COMPANY_FRAUD, MODEL_EFFECTIVENESS_RISK};

pub use effectiveness::{effectiveness_risk, EffectivenessModel, GradientDescent, ScalingGroup};
pub use kmeans::{
    assign_cluster, fit_clusters, ClusterFit, ClusterModel, FeatureTransform, KChoice,
};
pub use peers::{peer_zscore, PeerStats, RobustStat};
pub use tree::{DecisionTree, TreeNode, TreeParams};

pub const MODELS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("missing feature {0}")]
    MissingFeature(String),
    #[error("invalid cluster count {0}")]
    InvalidK(usize),
    #[error("need at least {needed} complete cases, got {got}")]
    TooFewCases { needed: usize, got: usize },
    #[error("all clustering features are constant")]
    AllFeaturesConstant,
    #[error("unknown feature {0}")]
    UnknownFeature(String),
    #[error("unsupported models format version {0}")]
    UnsupportedVersion(u32),
    #[error("invalid models document: {0}")]
    Json(String),
}

/// Numeric values of `features` in order, or the first one that is missing.
pub fn feature_vector(case: &TaxpayerCase, features: &[String]) -> Result<Vec<f64>, NotApplicable> {
    features
        .iter()
        .map(|f| {
            case.number(f)
                .ok_or_else(|| NotApplicable::missing_feature(f))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterClassifier {
    pub cluster_id: usize,
    pub feature_list: Vec<String>,
    pub max_depth: usize,
    pub tree: DecisionTree,
}

impl ClusterClassifier {
    pub fn predict(&self, case: &TaxpayerCase) -> Result<f64, NotApplicable> {
        Ok(self
            .tree
            .predict(&feature_vector(case, &self.feature_list)?))
    }
}

/// One tree per cluster that received labeled training cases, in cluster order.
///
/// Only audited cases with every classifier feature are used; the label is
/// `outcome.fraud_found`.
pub fn fit_cluster_classifiers(
    model: &ClusterModel,
    training: &[&TaxpayerCase],
    features: &[String],
    params: TreeParams,
) -> Vec<ClusterClassifier> {
    let mut xs: Vec<Vec<Vec<f64>>> = vec![Vec::new(); model.k];
    let mut ys: Vec<Vec<bool>> = vec![Vec::new(); model.k];
    for case in training {
        let Some(outcome) = case.outcome.as_ref().filter(|o| o.audited) else {
            continue;
        };
        let (Ok(c), Ok(x)) = (model.assign(case), feature_vector(case, features)) else {
            continue;
        };
        xs[c].push(x);
        ys[c].push(outcome.fraud_found);
    }
    xs.into_iter()
        .zip(ys)
        .enumerate()
        .filter(|(_, (x, _))| !x.is_empty())
        .map(|(cluster_id, (x, y))| ClusterClassifier {
            cluster_id,
            feature_list: features.to_vec(),
            max_depth: params.max_depth,
            tree: DecisionTree::fit(&x, &y, params),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompanyModels {
    pub cluster: ClusterModel,
    pub classifiers: Vec<ClusterClassifier>,
}

impl CompanyModels {
    pub fn classifier(&self, cluster_id: usize) -> Option<&ClusterClassifier> {
        self.classifiers.iter().find(|c| c.cluster_id == cluster_id)
    }
}

pub fn predict_company_fraud(
    models: &CompanyModels,
    case: &TaxpayerCase,
) -> Result<f64, NotApplicable> {
    let cluster = models.cluster.assign(case)?;
    models
        .classifier(cluster)
        .ok_or_else(|| NotApplicable::new(format!("no classifier for cluster {cluster}")))?
        .predict(case)
}

/// Everything `models.json` holds. Absent parts make the dependent rules not applicable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModels {
    pub format_version: u32,
    pub company: Option<CompanyModels>,
    pub peers: Option<PeerStats>,
    pub effectiveness: Option<EffectivenessModel>,
}

impl Default for TrainedModels {
    fn default() -> Self {
        TrainedModels {
            format_version: MODELS_FORMAT_VERSION,
            company: None,
            peers: None,
            effectiveness: None,
        }
    }
}

impl TrainedModels {
    /// Value of `model.<id>` for a case.
    pub fn output(&self, id: &str, case: &TaxpayerCase) -> Result<f64, NotApplicable> {
        match id {
            MODEL_COMPANY_FRAUD => match &self.company {
                Some(m) => predict_company_fraud(m, case),
                None => Err(NotApplicable::new("company models not trained")),
            },
            MODEL_EFFECTIVENESS_RISK => match &self.effectiveness {
                Some(m) => m.risk(case),
                None => Err(NotApplicable::new("effectiveness model not trained")),
            },
            other => Err(NotApplicable::new(format!("unknown model {other}"))),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("models serialize")
    }

    pub fn from_json(text: &str) -> Result<TrainedModels, ModelError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ModelError::Json(e.to_string()))?;
        let version = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .unwrap_or(0) as u32;
        if version != MODELS_FORMAT_VERSION {
            return Err(ModelError::UnsupportedVersion(version));
        }
        serde_json::from_value(value).map_err(|e| ModelError::Json(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub seed: u64,
    pub company_k: KChoice,
    pub company_cluster_features: Vec<String>,
    pub classifier_features: Vec<String>,
    pub tree: TreeParams,
    pub peer_k: KChoice,
    pub peer_cluster_features: Vec<String>,
    pub effectiveness_features: Vec<String>,
    pub gradient_descent: GradientDescent,
    pub qualitative_weight: f64,
    pub frequency_weight: f64,
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let size = names(&["revenue_eur", "employee_count", "total_assets_eur"]);
        TrainingConfig {
            seed: 0,
            company_k: KChoice::Auto,
            company_cluster_features: size.clone(),
            classifier_features: names(&[
                "personnel_cost_ratio",
                "output_tax_ratio",
                "input_tax_ratio",
                "cash_share",
                "export_share",
                "late_filings_count",
            ]),
            tree: TreeParams::default(),
            peer_k: KChoice::Auto,
            peer_cluster_features: size,
            effectiveness_features: names(&[
                "employee_count",
                "input_tax_ratio",
                "ic_transaction_count",
                "late_filings_count",
                "company_age_months",
                "director_changes_count",
                "sector_risk_grade",
            ]),
            gradient_descent: GradientDescent::default(),
            qualitative_weight: 1.0,
            frequency_weight: 1.0,
        }
    }
}

impl TrainingConfig {
    fn check_features(&self, schema: &FeatureSchema) -> Result<(), ModelError> {
        let all = [
            &self.company_cluster_features,
            &self.classifier_features,
            &self.peer_cluster_features,
            &self.effectiveness_features,
        ];
        for f in all.into_iter().flatten() {
            if schema.type_of(f) != Some(crate::domain::FeatureType::Number) {
                return Err(ModelError::UnknownFeature(f.clone()));
            }
        }
        Ok(())
    }
}

/// Feature groups the effectiveness model scales by the qualitative and frequency weights.
pub fn scaling_group(feature: &str) -> ScalingGroup {
    match feature {
        "sector_risk_grade" => ScalingGroup::Qualitative,
        "ic_transaction_count" | "late_filings_count" | "director_changes_count" => {
            ScalingGroup::Frequency
        }
        _ => ScalingGroup::None,
    }
}

/// Trains every model family from the corpus, using only outcomes visible at `clock`.
///
/// Company clusters and classifiers come from company-audit cases, the effectiveness
/// model from missing-trader cases, and peer statistics from all cases. A family
/// without enough data is left out rather than failing the whole run.
pub fn train_models(
    cases: &[TaxpayerCase],
    schema: &FeatureSchema,
    cfg: &TrainingConfig,
    clock: u32,
) -> Result<TrainedModels, ModelError> {
    cfg.check_features(schema)?;
    let visible = |c: &TaxpayerCase| {
        c.outcome
            .as_ref()
            .is_some_and(|o| o.audited && o.is_visible_at(clock))
    };

    let company_cases: Vec<&TaxpayerCase> = cases
        .iter()
        .filter(|c| c.kind == CaseKind::CompanyAudit)
        .collect();
    let company = match fit_clusters(
        &company_cases,
        &cfg.company_cluster_features,
        schema,
        cfg.company_k,
        cfg.seed,
    ) {
        Ok(fit) => {
            let labeled: Vec<&TaxpayerCase> = company_cases
                .iter()
                .copied()
                .filter(|c| visible(c))
                .collect();
            let classifiers =
                fit_cluster_classifiers(&fit.model, &labeled, &cfg.classifier_features, cfg.tree);
            Some(CompanyModels {
                cluster: fit.model,
                classifiers,
            })
        }
        Err(ModelError::TooFewCases { .. }) => None,
        Err(e) => return Err(e),
    };

    let all: Vec<&TaxpayerCase> = cases.iter().collect();
    let peers = match fit_clusters(
        &all,
        &cfg.peer_cluster_features,
        schema,
        cfg.peer_k,
        cfg.seed.wrapping_add(1),
    ) {
        Ok(fit) => {
            let compared: Vec<String> = schema.numeric_features().map(str::to_string).collect();
            Some(PeerStats::compute(fit.model, &all, &compared))
        }
        Err(ModelError::TooFewCases { .. }) => None,
        Err(e) => return Err(e),
    };

    let labeled_mt: Vec<(&TaxpayerCase, bool)> = cases
        .iter()
        .filter(|c| c.kind == CaseKind::MissingTrader && visible(c))
        .map(|c| (c, c.outcome.as_ref().is_some_and(|o| o.fraud_found)))
        .collect();
    let groups: Vec<ScalingGroup> = cfg
        .effectiveness_features
        .iter()
        .map(|f| scaling_group(f))
        .collect();
    let gd = GradientDescent {
        seed: cfg.seed.wrapping_add(2),
        ..cfg.gradient_descent
    };
    let effectiveness =
        match EffectivenessModel::fit(&labeled_mt, &cfg.effectiveness_features, &groups, gd) {
            Ok(mut m) => {
                m.qualitative_weight = cfg.qualitative_weight;
                m.frequency_weight = cfg.frequency_weight;
                Some(m)
            }
            Err(ModelError::TooFewCases { .. }) => None,
            Err(e) => return Err(e),
        };

    Ok(TrainedModels {
        format_version: MODELS_FORMAT_VERSION,
        company,
        peers,
        effectiveness,
    })
}
