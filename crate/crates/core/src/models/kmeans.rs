use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::silhouette;
use super::{feature_vector, ModelError};
use crate::domain::{FeatureSchema, NotApplicable, TaxpayerCase};

pub const MAX_LLOYD_ITERATIONS: usize = 100;
const AUTO_K: std::ops::RangeInclusive<usize> = 2..=8;
const SILHOUETTE_SAMPLE: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KChoice {
    Fixed(usize),
    /// Best mean silhouette over k = 2..=8.
    Auto,
}

/// Applied to a raw feature before standardization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureTransform {
    Identity,
    /// `sign(x) * ln(1 + |x|)`, for heavy-tailed money and count features.
    SignedLog,
}

impl FeatureTransform {
    pub fn for_unit(unit: &str) -> Self {
        match unit {
            "EUR" | "count" => FeatureTransform::SignedLog,
            _ => FeatureTransform::Identity,
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            FeatureTransform::Identity => x,
            FeatureTransform::SignedLog => x.signum() * x.abs().ln_1p(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub stddev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub feature_list: Vec<String>,
    pub transforms: Vec<FeatureTransform>,
    pub standardization: Vec<Standardization>,
    pub centroids: Vec<Vec<f64>>,
}

/// A fitted model plus the trace used by tests and diagnostics.
#[derive(Debug, Clone)]
pub struct ClusterFit {
    pub model: ClusterModel,
    /// Training assignments, aligned with the complete cases in input order.
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after each Lloyd update.
    pub wcss_history: Vec<f64>,
    pub iterations: usize,
    /// Input indices of the cases that had every feature and were used.
    pub used_cases: Vec<usize>,
}

impl ClusterModel {
    /// Standardized vector for a case, or the first missing feature.
    pub fn embed(&self, case: &TaxpayerCase) -> Result<Vec<f64>, NotApplicable> {
        let raw = feature_vector(case, &self.feature_list)?;
        Ok(self.embed_raw(&raw))
    }

    pub fn embed_raw(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(&self.transforms)
            .zip(&self.standardization)
            .map(|((x, t), s)| (t.apply(*x) - s.mean) / s.stddev)
            .collect()
    }

    /// Nearest centroid by Euclidean distance; ties go to the lowest cluster id.
    pub fn nearest(&self, point: &[f64]) -> usize {
        nearest(&self.centroids, point).0
    }

    pub fn assign(&self, case: &TaxpayerCase) -> Result<usize, NotApplicable> {
        Ok(self.nearest(&self.embed(case)?))
    }
}

pub fn assign_cluster(model: &ClusterModel, case: &TaxpayerCase) -> Result<usize, ModelError> {
    model
        .assign(case)
        .map_err(|na| ModelError::MissingFeature(na.0))
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

pub fn wcss(points: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum()
}

/// Result of Lloyd's algorithm on an already-standardized matrix.
#[derive(Debug, Clone)]
pub struct LloydResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub wcss_history: Vec<f64>,
    pub iterations: usize,
}

fn kmeans_pp_init(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[idx].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// k-means++ seeding followed by Lloyd iterations until assignments are stable
/// or [`MAX_LLOYD_ITERATIONS`] is reached.
pub fn lloyd(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> LloydResult {
    assert!(k >= 1 && k <= points.len(), "k must be in 1..=n");
    let dim = points[0].len();
    let mut centroids = kmeans_pp_init(points, k, rng);
    let mut assignments = vec![usize::MAX; points.len()];
    let mut wcss_history = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_LLOYD_ITERATIONS {
        iterations += 1;
        let mut changed = false;
        for (a, p) in assignments.iter_mut().zip(points) {
            let n = nearest(&centroids, p).0;
            if *a != n {
                *a = n;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        // Empty clusters restart at the point farthest from its own centroid.
        for c in 0..k {
            if counts[c] == 0 {
                let far = points
                    .iter()
                    .zip(&assignments)
                    .enumerate()
                    .max_by(|(_, (p, &a)), (_, (q, &b))| {
                        sq_dist(p, &centroids[a]).total_cmp(&sq_dist(q, &centroids[b]))
                    })
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                centroids[c] = points[far].clone();
            }
        }
        wcss_history.push(wcss(points, &centroids, &assignments));
    }
    LloydResult {
        centroids,
        assignments,
        wcss_history,
        iterations,
    }
}

/// Fits a cluster model over the cases that have every listed feature.
///
/// Constant features are dropped unless all features are constant and `k == 1`,
/// in which case they are kept with unit scale so every case embeds to zero.
pub fn fit_clusters(
    cases: &[&TaxpayerCase],
    features: &[String],
    schema: &FeatureSchema,
    k: KChoice,
    seed: u64,
) -> Result<ClusterFit, ModelError> {
    let mut used_cases = Vec::new();
    let mut raw = Vec::new();
    for (i, c) in cases.iter().enumerate() {
        if let Ok(v) = feature_vector(c, features) {
            used_cases.push(i);
            raw.push(v);
        }
    }
    let min_needed = match k {
        KChoice::Fixed(k) if k == 0 => return Err(ModelError::InvalidK(0)),
        KChoice::Fixed(k) => k,
        KChoice::Auto => *AUTO_K.start(),
    };
    if raw.len() < min_needed {
        return Err(ModelError::TooFewCases {
            needed: min_needed,
            got: raw.len(),
        });
    }
    let all_transforms: Vec<FeatureTransform> = features
        .iter()
        .map(|f| FeatureTransform::for_unit(schema.get(f).map(|s| s.unit.as_str()).unwrap_or("")))
        .collect();
    let transformed: Vec<Vec<f64>> = raw
        .iter()
        .map(|r| {
            r.iter()
                .zip(&all_transforms)
                .map(|(x, t)| t.apply(*x))
                .collect()
        })
        .collect();
    let n = transformed.len() as f64;
    let stats: Vec<Standardization> = (0..features.len())
        .map(|j| {
            let mean = transformed.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = transformed
                .iter()
                .map(|r| (r[j] - mean).powi(2))
                .sum::<f64>()
                / n;
            Standardization {
                mean,
                stddev: var.sqrt(),
            }
        })
        .collect();
    let mut keep: Vec<usize> = (0..features.len())
        .filter(|&j| stats[j].stddev > 1e-12)
        .collect();
    let mut standardization: Vec<Standardization> =
        keep.iter().map(|&j| stats[j].clone()).collect();
    if keep.is_empty() {
        if min_needed > 1 || matches!(k, KChoice::Auto) {
            return Err(ModelError::AllFeaturesConstant);
        }
        keep = (0..features.len()).collect();
        standardization = stats
            .iter()
            .map(|s| Standardization {
                mean: s.mean,
                stddev: 1.0,
            })
            .collect();
    }
    let feature_list: Vec<String> = keep.iter().map(|&j| features[j].clone()).collect();
    let transforms: Vec<FeatureTransform> = keep.iter().map(|&j| all_transforms[j]).collect();
    let points: Vec<Vec<f64>> = transformed
        .iter()
        .map(|r| {
            keep.iter()
                .zip(&standardization)
                .map(|(&j, s)| (r[j] - s.mean) / s.stddev)
                .collect()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let result = match k {
        KChoice::Fixed(k) => lloyd(&points, k, &mut rng),
        KChoice::Auto => {
            let sample_idx: Vec<usize> = if points.len() > SILHOUETTE_SAMPLE {
                let mut s = sample(&mut rng, points.len(), SILHOUETTE_SAMPLE).into_vec();
                s.sort_unstable();
                s
            } else {
                (0..points.len()).collect()
            };
            let sample_pts: Vec<Vec<f64>> = sample_idx.iter().map(|&i| points[i].clone()).collect();
            let mut best: Option<(f64, LloydResult)> = None;
            for k in AUTO_K.filter(|&k| k < points.len()) {
                let r = lloyd(&points, k, &mut rng);
                let labels: Vec<usize> = sample_idx.iter().map(|&i| r.assignments[i]).collect();
                let s = silhouette(&sample_pts, &labels);
                if best.as_ref().is_none_or(|(b, _)| s > *b) {
                    best = Some((s, r));
                }
            }
            match best {
                Some((_, r)) => r,
                None => {
                    return Err(ModelError::TooFewCases {
                        needed: 3,
                        got: points.len(),
                    })
                }
            }
        }
    };
    let model = ClusterModel {
        k: result.centroids.len(),
        feature_list,
        transforms,
        standardization,
        centroids: result.centroids,
    };
    Ok(ClusterFit {
        model,
        assignments: result.assignments,
        wcss_history: result.wcss_history,
        iterations: result.iterations,
        used_cases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{CaseKind, FeatureValue};
    use crate::testkit::random_case;

    fn case_with(id: usize, values: &[(&str, f64)]) -> TaxpayerCase {
        let mut rng = ChaCha8Rng::seed_from_u64(id as u64);
        let mut c = random_case(
            &mut rng,
            &FeatureSchema::shipped(),
            id,
            CaseKind::CompanyAudit,
        );
        for (f, v) in values {
            c.features.insert(f.to_string(), FeatureValue::Number(*v));
        }
        c
    }

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn wcss_never_increases() {
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(10..200);
            let dim = rng.random_range(1..5);
            let k = rng.random_range(1..=8.min(n));
            let points: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect())
                .collect();
            let r = lloyd(&points, k, &mut rng);
            for w in r.wcss_history.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "seed {seed}: {} -> {}", w[0], w[1]);
            }
            assert!(r.iterations <= MAX_LLOYD_ITERATIONS);
        }
    }

    #[test]
    fn single_case_centroid_is_origin() {
        let c = case_with(1, &[("revenue_eur", 1e6), ("employee_count", 12.0)]);
        let fit = fit_clusters(
            &[&c],
            &names(&["revenue_eur", "employee_count"]),
            &FeatureSchema::shipped(),
            KChoice::Fixed(1),
            0,
        )
        .unwrap();
        assert_eq!(fit.model.k, 1);
        assert!(fit.model.centroids[0].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn duplicates_have_zero_wcss() {
        let c = case_with(1, &[("revenue_eur", 1e6), ("employee_count", 12.0)]);
        let cases = vec![&c; 10];
        let features = names(&["revenue_eur", "employee_count"]);
        let fit = fit_clusters(
            &cases,
            &features,
            &FeatureSchema::shipped(),
            KChoice::Fixed(1),
            0,
        )
        .unwrap();
        let points: Vec<Vec<f64>> = cases.iter().map(|c| fit.model.embed(c).unwrap()).collect();
        assert_eq!(wcss(&points, &fit.model.centroids, &fit.assignments), 0.0);
    }

    #[test]
    fn constant_features_and_too_few_cases_are_errors() {
        let c = case_with(1, &[("revenue_eur", 1e6)]);
        let features = names(&["revenue_eur"]);
        let schema = FeatureSchema::shipped();
        let cases = vec![&c; 5];
        assert_eq!(
            fit_clusters(&cases, &features, &schema, KChoice::Fixed(2), 0).unwrap_err(),
            ModelError::AllFeaturesConstant
        );
        assert_eq!(
            fit_clusters(&cases, &features, &schema, KChoice::Auto, 0).unwrap_err(),
            ModelError::AllFeaturesConstant
        );
        assert_eq!(
            fit_clusters(&cases[..1], &features, &schema, KChoice::Fixed(3), 0).unwrap_err(),
            ModelError::TooFewCases { needed: 3, got: 1 }
        );
        assert_eq!(
            fit_clusters(&cases, &features, &schema, KChoice::Fixed(0), 0).unwrap_err(),
            ModelError::InvalidK(0)
        );
    }

    fn model(centroids: Vec<Vec<f64>>) -> ClusterModel {
        let d = centroids[0].len();
        ClusterModel {
            k: centroids.len(),
            feature_list: (0..d).map(|i| format!("f{i}")).collect(),
            transforms: vec![FeatureTransform::Identity; d],
            standardization: vec![
                Standardization {
                    mean: 0.0,
                    stddev: 1.0
                };
                d
            ],
            centroids,
        }
    }

    #[test]
    fn nearest_centroid_and_ties() {
        let m = model(vec![vec![-1.0, 0.0], vec![1.0, 0.0], vec![5.0, 5.0]]);
        assert_eq!(m.nearest(&[5.0, 5.0]), 2);
        assert_eq!(m.nearest(&[0.0, 0.0]), 0);
        assert_eq!(m.nearest(&[0.0, 3.0]), 0);
    }

    #[test]
    fn missing_feature_fails_assignment() {
        let schema = FeatureSchema::shipped();
        let features = names(&["revenue_eur", "employee_count"]);
        let a = case_with(1, &[("revenue_eur", 1e6), ("employee_count", 12.0)]);
        let b = case_with(2, &[("revenue_eur", 1e4), ("employee_count", 2.0)]);
        let fit = fit_clusters(&[&a, &b], &features, &schema, KChoice::Fixed(2), 0).unwrap();
        let mut c = a.clone();
        c.features
            .insert("employee_count".into(), FeatureValue::Missing);
        assert_eq!(
            assign_cluster(&fit.model, &c),
            Err(ModelError::MissingFeature(
                "missing feature employee_count".into()
            ))
        );
    }

    #[test]
    fn auto_k_finds_three_groups() {
        let schema = FeatureSchema::shipped();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let centers = [1e4, 1e6, 1e8];
        let cases: Vec<TaxpayerCase> = (0..300)
            .map(|i| {
                let base = centers[i % 3];
                case_with(
                    i,
                    &[
                        ("revenue_eur", base * rng.random_range(0.8..1.25)),
                        ("total_assets_eur", base * rng.random_range(0.8..1.25)),
                    ],
                )
            })
            .collect();
        let refs: Vec<&TaxpayerCase> = cases.iter().collect();
        let fit = fit_clusters(
            &refs,
            &names(&["revenue_eur", "total_assets_eur"]),
            &schema,
            KChoice::Auto,
            1,
        )
        .unwrap();
        assert_eq!(fit.model.k, 3);
        let truth: Vec<usize> = (0..300).map(|i| i % 3).collect();
        assert_eq!(
            super::super::metrics::adjusted_rand_index(&truth, &fit.assignments),
            1.0
        );
    }
}
