use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::kmeans::ClusterModel;
use crate::domain::{NotApplicable, TaxpayerCase};

/// Robust-z scale factor that makes MAD consistent with the standard deviation of a normal.
pub const MAD_SCALE: f64 = 1.4826;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustStat {
    pub median: f64,
    pub mad: f64,
    pub count: usize,
}

impl RobustStat {
    pub fn of(values: &[f64]) -> Option<RobustStat> {
        if values.is_empty() {
            return None;
        }
        let m = median(values.to_vec());
        let mad = median(values.iter().map(|v| (v - m).abs()).collect());
        Some(RobustStat {
            median: m,
            mad,
            count: values.len(),
        })
    }

    /// Zero MAD leaves the z-score undefined.
    pub fn is_degenerate(&self) -> bool {
        self.mad <= 0.0
    }
}

pub fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        values[n / 2 - 1] + (values[n / 2] - values[n / 2 - 1]) / 2.0
    }
}

/// Median and MAD per peer cluster and per numeric feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerStats {
    pub cluster: ClusterModel,
    /// Indexed by cluster id.
    pub stats: Vec<BTreeMap<String, RobustStat>>,
}

impl PeerStats {
    /// Statistics over the given cases, grouped by their assignment under `cluster`.
    /// Cases missing a clustering feature are left out; missing values of a compared
    /// feature are skipped for that feature only.
    pub fn compute(
        cluster: ClusterModel,
        cases: &[&TaxpayerCase],
        features: &[String],
    ) -> PeerStats {
        let mut values: Vec<BTreeMap<&str, Vec<f64>>> = vec![BTreeMap::new(); cluster.k];
        for case in cases {
            let Ok(c) = cluster.assign(case) else {
                continue;
            };
            for f in features {
                if let Some(v) = case.number(f) {
                    values[c].entry(f.as_str()).or_default().push(v);
                }
            }
        }
        let stats = values
            .into_iter()
            .map(|m| {
                m.into_iter()
                    .filter_map(|(f, v)| RobustStat::of(&v).map(|s| (f.to_string(), s)))
                    .collect()
            })
            .collect();
        PeerStats { cluster, stats }
    }

    fn lookup(
        &self,
        case: &TaxpayerCase,
        feature: &str,
    ) -> Result<(RobustStat, f64), NotApplicable> {
        let cluster = self.cluster.assign(case)?;
        let value = case
            .number(feature)
            .ok_or_else(|| NotApplicable::missing_feature(feature))?;
        let stat = self
            .stats
            .get(cluster)
            .and_then(|m| m.get(feature))
            .ok_or_else(|| {
                NotApplicable::new(format!(
                    "no peer statistics for {feature} in cluster {cluster}"
                ))
            })?;
        Ok((*stat, value))
    }

    /// `(value - median) / (1.4826 * MAD)` within the case's peer cluster.
    pub fn zscore(&self, case: &TaxpayerCase, feature: &str) -> Result<f64, NotApplicable> {
        let (stat, value) = self.lookup(case, feature)?;
        if stat.is_degenerate() {
            return Err(NotApplicable::new(format!("peer MAD of {feature} is zero")));
        }
        Ok((value - stat.median) / (MAD_SCALE * stat.mad))
    }

    /// `value / median` within the case's peer cluster.
    pub fn ratio(&self, case: &TaxpayerCase, feature: &str) -> Result<f64, NotApplicable> {
        let (stat, value) = self.lookup(case, feature)?;
        if stat.median == 0.0 {
            return Err(NotApplicable::new(format!(
                "peer median of {feature} is zero"
            )));
        }
        Ok(value / stat.median)
    }
}

pub fn peer_zscore(
    stats: &PeerStats,
    case: &TaxpayerCase,
    feature: &str,
) -> Result<f64, NotApplicable> {
    stats.zscore(case, feature)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_mad() {
        let s = RobustStat::of(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!(s.median, 3.0);
        assert_eq!(s.mad, 1.0);
        let even = RobustStat::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(even.median, 2.5);
        assert_eq!(even.mad, 1.0);
        assert!(RobustStat::of(&[5.0, 5.0, 5.0]).unwrap().is_degenerate());
        assert!(RobustStat::of(&[]).is_none());
    }
}
