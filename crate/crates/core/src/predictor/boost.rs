//! Gradient boosting on logistic loss with small regression trees.
//!
//! Each round fits a depth-limited regression tree to the negative
//! gradients (label minus predicted probability) by exhaustive threshold
//! search over the sorted unique values of every feature. Leaf values are
//! Newton steps (sum of residuals over sum of hessians). Split-gain ties
//! break lexicographically by (feature index, threshold), so training is
//! fully deterministic.

use super::linear::sigmoid;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub rounds: u32,
    pub max_depth: u32,
    pub shrinkage: f64,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            rounds: 100,
            max_depth: 3,
            shrinkage: 0.1,
        }
    }
}

/// Flat tree node; `feature == usize::MAX` marks a leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    pub value: f64,
}

impl TreeNode {
    fn leaf(value: f64) -> Self {
        Self {
            feature: usize::MAX,
            threshold: 0.0,
            left: 0,
            right: 0,
            value,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.feature == usize::MAX
    }
}

pub type Tree = Vec<TreeNode>;

fn tree_output(tree: &Tree, x: &[f64]) -> f64 {
    let mut idx = 0;
    loop {
        let node = &tree[idx];
        if node.is_leaf() {
            return node.value;
        }
        idx = if x[node.feature] <= node.threshold {
            node.left
        } else {
            node.right
        };
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Exhaustive best-split search on squared error of the residuals.
/// Candidate thresholds are midpoints between consecutive distinct values.
/// Returns None when no split strictly reduces the error.
pub fn best_split(rows: &[usize], features: &[Vec<f64>], residuals: &[f64]) -> Option<SplitChoice> {
    let total_sum: f64 = rows.iter().map(|&i| residuals[i]).sum();
    let total_sq: f64 = rows.iter().map(|&i| residuals[i] * residuals[i]).sum();
    let n = rows.len() as f64;
    if rows.len() < 2 {
        return None;
    }
    let parent_sse = total_sq - total_sum * total_sum / n;

    let dim = features[0].len();
    let mut best: Option<SplitChoice> = None;
    let mut order: Vec<usize> = rows.to_vec();
    for feature in 0..dim {
        order.sort_by(|&a, &b| {
            features[a][feature]
                .partial_cmp(&features[b][feature])
                .expect("finite feature values")
                .then(a.cmp(&b))
        });
        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        let mut left_n = 0.0;
        for k in 0..order.len() - 1 {
            let i = order[k];
            let r = residuals[i];
            left_sum += r;
            left_sq += r * r;
            left_n += 1.0;
            let v = features[i][feature];
            let v_next = features[order[k + 1]][feature];
            if v == v_next {
                continue;
            }
            let threshold = v + (v_next - v) / 2.0;
            let right_sum = total_sum - left_sum;
            let right_sq = total_sq - left_sq;
            let right_n = n - left_n;
            let sse = (left_sq - left_sum * left_sum / left_n)
                + (right_sq - right_sum * right_sum / right_n);
            let gain = parent_sse - sse;
            // Strictly-better comparison in (feature, threshold) iteration
            // order makes ties deterministic.
            if gain > 1e-12 && best.is_none_or(|b| gain > b.gain) {
                best = Some(SplitChoice {
                    feature,
                    threshold,
                    gain,
                });
            }
        }
    }
    best
}

fn build_tree(
    rows: Vec<usize>,
    features: &[Vec<f64>],
    residuals: &[f64],
    hessians: &[f64],
    max_depth: u32,
) -> Tree {
    let mut tree = Tree::new();
    build_node(rows, features, residuals, hessians, max_depth, &mut tree);
    tree
}

fn leaf_value(rows: &[usize], residuals: &[f64], hessians: &[f64]) -> f64 {
    let num: f64 = rows.iter().map(|&i| residuals[i]).sum();
    let den: f64 = rows.iter().map(|&i| hessians[i]).sum();
    num / (den + 1e-12)
}

fn build_node(
    rows: Vec<usize>,
    features: &[Vec<f64>],
    residuals: &[f64],
    hessians: &[f64],
    depth_left: u32,
    tree: &mut Tree,
) -> usize {
    let idx = tree.len();
    if depth_left == 0 {
        tree.push(TreeNode::leaf(leaf_value(&rows, residuals, hessians)));
        return idx;
    }
    match best_split(&rows, features, residuals) {
        None => {
            tree.push(TreeNode::leaf(leaf_value(&rows, residuals, hessians)));
            idx
        }
        Some(split) => {
            tree.push(TreeNode::leaf(0.0)); // placeholder, patched below
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                .into_iter()
                .partition(|&i| features[i][split.feature] <= split.threshold);
            let left = build_node(left_rows, features, residuals, hessians, depth_left - 1, tree);
            let right =
                build_node(right_rows, features, residuals, hessians, depth_left - 1, tree);
            tree[idx] = TreeNode {
                feature: split.feature,
                threshold: split.threshold,
                left,
                right,
                value: 0.0,
            };
            idx
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    /// Log-odds of the positive class on the training split.
    pub base_score: f64,
    pub shrinkage: f64,
    pub trees: Vec<Tree>,
}

impl BoostedModel {
    pub fn train(rows: &[(Vec<f64>, bool)], params: &BoostParams) -> Result<Self, String> {
        let n = rows.len();
        if n == 0 {
            return Err("empty training set".into());
        }
        let dim = rows[0].0.len();
        if rows.iter().any(|(x, _)| x.len() != dim) {
            return Err("inconsistent feature dimensions".into());
        }
        let features: Vec<Vec<f64>> = rows.iter().map(|(x, _)| x.clone()).collect();
        let targets: Vec<f64> = rows.iter().map(|(_, y)| if *y { 1.0 } else { 0.0 }).collect();
        let positives = targets.iter().sum::<f64>();
        let negatives = n as f64 - positives;
        if positives == 0.0 || negatives == 0.0 {
            return Err("single-class training data".into());
        }
        let base_score = (positives / negatives).ln();

        let mut scores = vec![base_score; n];
        let mut trees = Vec::with_capacity(params.rounds as usize);
        let mut residuals = vec![0.0; n];
        let mut hessians = vec![0.0; n];
        for _ in 0..params.rounds {
            for i in 0..n {
                let p = sigmoid(scores[i]);
                residuals[i] = targets[i] - p;
                hessians[i] = (p * (1.0 - p)).max(1e-12);
            }
            let tree = build_tree(
                (0..n).collect(),
                &features,
                &residuals,
                &hessians,
                params.max_depth,
            );
            for i in 0..n {
                scores[i] += params.shrinkage * tree_output(&tree, &features[i]);
            }
            trees.push(tree);
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err("training diverged to non-finite scores".into());
        }
        Ok(Self {
            base_score,
            shrinkage: params.shrinkage,
            trees,
        })
    }

    pub fn predict_proba(&self, features: &[f64]) -> Result<f64, String> {
        for tree in &self.trees {
            for node in tree {
                if !node.is_leaf() && node.feature >= features.len() {
                    return Err(format!(
                        "feature dimension {} too small for model (needs index {})",
                        features.len(),
                        node.feature
                    ));
                }
            }
        }
        let mut z = self.base_score;
        for tree in &self.trees {
            z += self.shrinkage * tree_output(tree, features);
        }
        Ok(sigmoid(z))
    }
}
