use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{feature_vector, ModelError};
use crate::domain::{NotApplicable, TaxpayerCase};

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Keeps the logistic output strictly inside (0, 1) when `z` saturates f64.
fn open_unit(p: f64) -> f64 {
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Which multiplicative scaling applies to an input feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingGroup {
    None,
    /// Scaled by `qualitative_weight` (expert-assigned grades).
    Qualitative,
    /// Scaled by `frequency_weight` (event counts).
    Frequency,
}

/// Logistic risk model over raw feature values.
///
/// `risk = logistic(intercept + Σ weight_i · scale_i · x_i)` where `scale_i` is
/// `qualitative_weight`, `frequency_weight` or 1 depending on the feature's group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectivenessModel {
    pub features: Vec<String>,
    pub groups: Vec<ScalingGroup>,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub qualitative_weight: f64,
    pub frequency_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientDescent {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for GradientDescent {
    fn default() -> Self {
        GradientDescent {
            learning_rate: 0.1,
            epochs: 500,
            seed: 0,
        }
    }
}

impl EffectivenessModel {
    fn scale(&self, i: usize) -> f64 {
        match self.groups.get(i).copied().unwrap_or(ScalingGroup::None) {
            ScalingGroup::None => 1.0,
            ScalingGroup::Qualitative => self.qualitative_weight,
            ScalingGroup::Frequency => self.frequency_weight,
        }
    }

    pub fn linear(&self, x: &[f64]) -> f64 {
        self.intercept
            + x.iter()
                .zip(&self.weights)
                .enumerate()
                .map(|(i, (xi, wi))| wi * self.scale(i) * xi)
                .sum::<f64>()
    }

    pub fn risk_raw(&self, x: &[f64]) -> f64 {
        open_unit(logistic(self.linear(x)))
    }

    pub fn risk(&self, case: &TaxpayerCase) -> Result<f64, NotApplicable> {
        Ok(self.risk_raw(&feature_vector(case, &self.features)?))
    }

    /// Fits weights by full-batch gradient descent on the mean logistic loss.
    ///
    /// Inputs are standardized for the descent and the standardization is folded back
    /// into the weights, so the stored model applies to raw values. Labeled cases missing
    /// any feature are skipped.
    pub fn fit(
        cases: &[(&TaxpayerCase, bool)],
        features: &[String],
        groups: &[ScalingGroup],
        gd: GradientDescent,
    ) -> Result<EffectivenessModel, ModelError> {
        let rows: Vec<(Vec<f64>, bool)> = cases
            .iter()
            .filter_map(|(c, y)| feature_vector(c, features).ok().map(|x| (x, *y)))
            .collect();
        if rows.is_empty() {
            return Err(ModelError::TooFewCases { needed: 1, got: 0 });
        }
        let n = rows.len() as f64;
        let d = features.len();
        let means: Vec<f64> = (0..d)
            .map(|j| rows.iter().map(|(x, _)| x[j]).sum::<f64>() / n)
            .collect();
        let sds: Vec<f64> = (0..d)
            .map(|j| {
                let v = rows
                    .iter()
                    .map(|(x, _)| (x[j] - means[j]).powi(2))
                    .sum::<f64>()
                    / n;
                if v > 1e-24 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let z: Vec<Vec<f64>> = rows
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .enumerate()
                    .map(|(j, v)| (v - means[j]) / sds[j])
                    .collect()
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(gd.seed);
        let mut w: Vec<f64> = (0..d).map(|_| rng.random_range(-0.01..0.01)).collect();
        let mut b = 0.0;
        let mut grad = vec![0.0; d];
        for _ in 0..gd.epochs {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut gb = 0.0;
            for (zi, (_, y)) in z.iter().zip(&rows) {
                let p = logistic(b + zi.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>());
                let err = p - if *y { 1.0 } else { 0.0 };
                for (g, v) in grad.iter_mut().zip(zi) {
                    *g += err * v;
                }
                gb += err;
            }
            for (wi, g) in w.iter_mut().zip(&grad) {
                *wi -= gd.learning_rate * g / n;
            }
            b -= gd.learning_rate * gb / n;
        }
        let weights: Vec<f64> = w.iter().zip(&sds).map(|(wi, s)| wi / s).collect();
        let intercept = b - weights
            .iter()
            .zip(&means)
            .map(|(wi, m)| wi * m)
            .sum::<f64>();
        Ok(EffectivenessModel {
            features: features.to_vec(),
            groups: groups.to_vec(),
            weights,
            intercept,
            qualitative_weight: 1.0,
            frequency_weight: 1.0,
        })
    }
}

pub fn effectiveness_risk(
    model: &EffectivenessModel,
    case: &TaxpayerCase,
) -> Result<f64, NotApplicable> {
    model.risk(case)
}
