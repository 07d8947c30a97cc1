//! Regression forests of CART trees.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::derive_seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForestError {
    #[error("design has {x} rows but outcome has {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("no training rows")]
    Empty,
    #[error("non-finite value in the design or outcome")]
    NonFinite,
    #[error("model was trained on {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid forest parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub mtry: usize,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    n_features: usize,
}

impl RegressionTree {
    pub fn predict_row(&self, row: impl Fn(usize) -> f64) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    at = if row(feature) <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows()).map(|i| self.predict_row(|j| x[(i, j)])).collect()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Leaf values in node order.
    pub fn leaf_values(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf(v) => Some(*v),
                Node::Split { .. } => None,
            })
            .collect()
    }

    /// Root split as `(feature, threshold)`, if the root is not a leaf.
    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes[0] {
            Node::Split { feature, threshold, .. } => Some((feature, threshold)),
            Node::Leaf(_) => None,
        }
    }
}

/// A chosen split: feature, threshold and children's total squared error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub sse: f64,
}

fn sum_and_sse(y: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = y.clone().count() as f64;
    let s: f64 = y.clone().sum();
    let m = s / n;
    (s, y.map(|v| (v - m) * (v - m)).sum())
}

/// Best split over `features` for the rows `idx`.
///
/// Minimizes the children's summed squared deviation; ties go to the lower
/// feature index and then the lower threshold.
pub fn best_split(
    x: &DMatrix<f64>,
    y: &[f64],
    idx: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<SplitChoice> {
    let n = idx.len();
    if n < 2 * min_leaf.max(1) {
        return None;
    }
    let total: f64 = idx.iter().map(|&i| y[i]).sum();
    let mut best: Option<(f64, usize, f64)> = None; // (score, feature, threshold)
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
    let mut sorted_features = features.to_vec();
    sorted_features.sort_unstable();
    for &f in &sorted_features {
        pairs.clear();
        pairs.extend(idx.iter().map(|&i| (x[(i, f)], y[i])));
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left_sum = 0.0;
        for k in 1..n {
            left_sum += pairs[k - 1].1;
            if pairs[k - 1].0 == pairs[k].0 || k < min_leaf || n - k < min_leaf {
                continue;
            }
            let right_sum = total - left_sum;
            // maximizing this is equivalent to minimizing the children's SSE
            let score = left_sum * left_sum / k as f64 + right_sum * right_sum / (n - k) as f64;
            let threshold = 0.5 * (pairs[k - 1].0 + pairs[k].0);
            let improves = match best {
                None => true,
                Some((b, _, _)) => score > b + 1e-12 * b.abs().max(1.0),
            };
            if improves {
                best = Some((score, f, threshold));
            }
        }
    }
    best.map(|(_, feature, threshold)| {
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[(i, feature)] <= threshold);
        let sse = sum_and_sse(l.iter().map(|&i| y[i])).1 + sum_and_sse(r.iter().map(|&i| y[i])).1;
        SplitChoice { feature, threshold, sse }
    })
}

/// Grow one tree on the rows `idx` (duplicates allowed).
pub fn fit_tree_on(
    x: &DMatrix<f64>,
    y: &[f64],
    idx: Vec<usize>,
    params: &TreeParams,
    rng: &mut ChaCha8Rng,
) -> RegressionTree {
    let p = x.ncols();
    let mtry = params.mtry.clamp(1, p.max(1));
    let mut nodes = Vec::new();
    // (node slot, rows, depth)
    let mut stack = vec![(0usize, idx, 0usize)];
    nodes.push(Node::Leaf(f64::NAN));
    while let Some((slot, rows, depth)) = stack.pop() {
        let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64;
        let constant = rows.iter().all(|&i| y[i] == y[rows[0]]);
        let depth_ok = params.max_depth.is_none_or(|d| depth < d);
        let split = if constant || !depth_ok || p == 0 {
            None
        } else {
            let features = sample(rng, p, mtry).into_vec();
            best_split(x, y, &rows, &features, params.min_leaf)
        };
        match split {
            None => nodes[slot] = Node::Leaf(mean),
            Some(s) => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&i| x[(i, s.feature)] <= s.threshold);
                let left = nodes.len();
                nodes.push(Node::Leaf(f64::NAN));
                let right = nodes.len();
                nodes.push(Node::Leaf(f64::NAN));
                nodes[slot] = Node::Split { feature: s.feature, threshold: s.threshold, left, right };
                stack.push((right, r, depth + 1));
                stack.push((left, l, depth + 1));
            }
        }
    }
    RegressionTree { nodes, n_features: p }
}

pub fn fit_tree(x: &DMatrix<f64>, y: &[f64], params: &TreeParams, rng: &mut ChaCha8Rng) -> Result<RegressionTree, ForestError> {
    check_training(x, y)?;
    Ok(fit_tree_on(x, y, (0..x.nrows()).collect(), params, rng))
}

fn check_training(x: &DMatrix<f64>, y: &[f64]) -> Result<(), ForestError> {
    if x.nrows() != y.len() {
        return Err(ForestError::LengthMismatch { x: x.nrows(), y: y.len() });
    }
    if y.is_empty() {
        return Err(ForestError::Empty);
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(ForestError::NonFinite);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestParams {
    pub trees: usize,
    /// Features tried per split; `None` means `max(1, p / 3)`.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { trees: 1000, mtry: None, min_leaf: 5, max_depth: None, bootstrap: true, seed: 0 }
    }
}

impl ForestParams {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn tree_params(&self, p: usize) -> TreeParams {
        TreeParams {
            mtry: self.mtry.unwrap_or((p / 3).max(1)),
            min_leaf: self.min_leaf,
            max_depth: self.max_depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForestModel {
    pub trees: Vec<RegressionTree>,
    pub params: ForestParams,
    n_features: usize,
}

fn grow(x: &DMatrix<f64>, y: &[f64], params: &ForestParams, b: usize) -> RegressionTree {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, &[b as u64]));
    let n = x.nrows();
    let idx = if params.bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    fit_tree_on(x, y, idx, &params.tree_params(x.ncols()), &mut rng)
}

pub fn fit_forest(x: &DMatrix<f64>, y: &[f64], params: &ForestParams) -> Result<ForestModel, ForestError> {
    check_training(x, y)?;
    if params.trees == 0 || params.min_leaf == 0 || params.mtry == Some(0) {
        return Err(ForestError::InvalidParams("trees, mtry and min_leaf must be positive".into()));
    }
    #[cfg(feature = "parallel")]
    let trees = {
        use rayon::prelude::*;
        (0..params.trees).into_par_iter().map(|b| grow(x, y, params, b)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let trees = (0..params.trees).map(|b| grow(x, y, params, b)).collect();
    Ok(ForestModel { trees, params: *params, n_features: x.ncols() })
}

impl ForestModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>, ForestError> {
        if x.ncols() != self.n_features {
            return Err(ForestError::DimensionMismatch { expected: self.n_features, got: x.ncols() });
        }
        let b = self.trees.len() as f64;
        Ok((0..x.nrows())
            .map(|i| self.trees.iter().map(|t| t.predict_row(|j| x[(i, j)])).sum::<f64>() / b)
            .collect())
    }
}
