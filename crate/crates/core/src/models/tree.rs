use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 4,
            min_leaf: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        /// Fraction of positive training samples.
        probability: f64,
        samples: usize,
    },
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Binary CART classifier stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
    pub n_features: usize,
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl DecisionTree {
    /// Grows a tree by greedy Gini-impurity splits.
    ///
    /// A node becomes a leaf at `max_depth`, when it is pure, or when no split leaves
    /// `min_leaf` samples on both sides while lowering impurity.
    pub fn fit(x: &[Vec<f64>], y: &[bool], params: TreeParams) -> DecisionTree {
        assert_eq!(x.len(), y.len());
        let n_features = x.first().map_or(0, Vec::len);
        let mut tree = DecisionTree {
            nodes: Vec::new(),
            n_features,
        };
        let idx: Vec<usize> = (0..x.len()).collect();
        tree.grow(x, y, idx, 0, params);
        tree
    }

    fn grow(
        &mut self,
        x: &[Vec<f64>],
        y: &[bool],
        idx: Vec<usize>,
        depth: usize,
        params: TreeParams,
    ) -> usize {
        let id = self.nodes.len();
        let pos = idx.iter().filter(|&&i| y[i]).count();
        let n = idx.len();
        let probability = if n == 0 { 0.0 } else { pos as f64 / n as f64 };
        self.nodes.push(TreeNode::Leaf {
            probability,
            samples: n,
        });
        if depth >= params.max_depth || pos == 0 || pos == n {
            return id;
        }
        let Some(best) = best_split(x, y, &idx, params.min_leaf.max(1), self.n_features) else {
            return id;
        };
        if best.impurity >= gini(pos, n) - 1e-12 {
            return id;
        }
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| x[i][best.feature] <= best.threshold);
        let left = self.grow(x, y, l, depth + 1, params);
        let right = self.grow(x, y, r, depth + 1, params);
        self.nodes[id] = TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    /// Node ids from the root to the leaf reached by `x`.
    pub fn path(&self, x: &[f64]) -> Vec<usize> {
        let mut out = vec![0];
        let mut at = 0;
        while let TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } = &self.nodes[at]
        {
            at = if x[*feature] <= *threshold {
                *left
            } else {
                *right
            };
            out.push(at);
        }
        out
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let leaf = *self.path(x).last().expect("path is never empty");
        match self.nodes[leaf] {
            TreeNode::Leaf { probability, .. } => probability,
            TreeNode::Split { .. } => unreachable!("paths end at leaves"),
        }
    }

    pub fn depth(&self) -> usize {
        fn d(t: &DecisionTree, at: usize) -> usize {
            match &t.nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + d(t, *left).max(d(t, *right)),
            }
        }
        d(self, 0)
    }
}

fn best_split(
    x: &[Vec<f64>],
    y: &[bool],
    idx: &[usize],
    min_leaf: usize,
    n_features: usize,
) -> Option<BestSplit> {
    let n = idx.len();
    if n < 2 * min_leaf {
        return None;
    }
    let total_pos = idx.iter().filter(|&&i| y[i]).count();
    let mut best: Option<BestSplit> = None;
    let mut order = idx.to_vec();
    for f in 0..n_features {
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
        let mut left_pos = 0;
        for k in 1..n {
            if y[order[k - 1]] {
                left_pos += 1;
            }
            let (lv, rv) = (x[order[k - 1]][f], x[order[k]][f]);
            if k < min_leaf || n - k < min_leaf || lv == rv {
                continue;
            }
            let impurity = (k as f64 * gini(left_pos, k)
                + (n - k) as f64 * gini(total_pos - left_pos, n - k))
                / n as f64;
            if best.as_ref().is_none_or(|b| impurity < b.impurity - 1e-15) {
                let mid = lv + (rv - lv) / 2.0;
                // Guard against midpoints that round up to the right value.
                let threshold = if mid < rv { mid } else { lv };
                best = Some(BestSplit {
                    feature: f,
                    threshold,
                    impurity,
                });
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_class_is_one_leaf() {
        let x = vec![vec![1.0], vec![2.0], vec![3.0]];
        let t = DecisionTree::fit(&x, &[true, true, true], TreeParams::default());
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.predict(&[0.0]), 1.0);
    }

    #[test]
    fn depth_zero_is_class_prior() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<bool> = (0..20).map(|i| i < 5).collect();
        let t = DecisionTree::fit(
            &x,
            &y,
            TreeParams {
                max_depth: 0,
                min_leaf: 5,
            },
        );
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.predict(&[3.0]), 0.25);
    }

    #[test]
    fn learns_threshold() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 7) as f64, i as f64]).collect();
        let y: Vec<bool> = (0..40).map(|i| i >= 30).collect();
        let t = DecisionTree::fit(&x, &y, TreeParams::default());
        assert_eq!(t.depth(), 1);
        assert_eq!(t.predict(&[0.0, 35.0]), 1.0);
        assert_eq!(t.predict(&[0.0, 3.0]), 0.0);
        assert!(
            matches!(t.nodes[0], TreeNode::Split { feature: 1, threshold, .. } if threshold == 29.5)
        );
    }

    #[test]
    fn respects_min_leaf_and_depth() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f64>> = (0..300)
            .map(|_| vec![rng.random(), rng.random(), rng.random()])
            .collect();
        let y: Vec<bool> = x.iter().map(|r| r[0] + r[1] * r[2] > 0.7).collect();
        let t = DecisionTree::fit(
            &x,
            &y,
            TreeParams {
                max_depth: 3,
                min_leaf: 10,
            },
        );
        assert!(t.depth() <= 3);
        for node in &t.nodes {
            if let TreeNode::Leaf {
                samples,
                probability,
            } = node
            {
                assert!(*samples >= 10);
                assert!((0.0..=1.0).contains(probability));
            }
        }
    }
}
