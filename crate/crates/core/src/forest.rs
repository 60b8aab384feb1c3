//! CART trees and bagged ensembles.
//!
//! Classification trees split on Gini impurity and store class-frequency
//! vectors in their leaves; regression trees split on squared-error reduction
//! and store the leaf mean. Each tree draws its own bootstrap sample and
//! feature subsets from a ChaCha stream keyed by `(seed, tree index)`, so fits
//! are reproducible regardless of how trees are scheduled across threads.

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::seeding::rng_from;

/// Number of candidate features examined per split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, d: usize) -> usize {
        let m = match self {
            MaxFeatures::Sqrt => (d as f64).sqrt().floor() as usize,
            MaxFeatures::All => d,
            MaxFeatures::Count(c) => c,
        };
        m.clamp(1, d.max(1))
    }
}

/// Ensemble hyperparameters shared by forest teachers and students.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or `min_leaf` binds.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub seed: u64,
}

impl ForestParams {
    pub fn classifier(n_trees: usize, seed: u64) -> Self {
        Self {
            n_trees,
            max_depth: None,
            min_leaf: 1,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            seed,
        }
    }

    pub fn regressor(n_trees: usize, seed: u64) -> Self {
        Self {
            max_features: MaxFeatures::All,
            ..Self::classifier(n_trees, seed)
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn with_max_depth(&self, max_depth: Option<usize>) -> Self {
        Self {
            max_depth,
            ..self.clone()
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return invalid("a forest needs at least one tree");
        }
        if self.min_leaf == 0 {
            return invalid("min_leaf must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        value: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// A fitted tree stored as a flat node array; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_value(&self, x: ArrayView1<'_, f64>) -> &[f64] {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Clone, Copy)]
enum Target<'a> {
    Classes { classes: &'a [usize], k: usize },
    Values(&'a [f64]),
}

impl Target<'_> {
    fn leaf(&self, idx: &[usize]) -> Vec<f64> {
        match *self {
            Target::Classes { classes, k } => {
                let mut counts = vec![0.0; k];
                for &i in idx {
                    counts[classes[i]] += 1.0;
                }
                let n = idx.len() as f64;
                counts.iter_mut().for_each(|c| *c /= n);
                counts
            }
            Target::Values(y) => {
                let s: f64 = idx.iter().map(|&i| y[i]).sum();
                vec![s / idx.len() as f64]
            }
        }
    }

    fn is_pure(&self, idx: &[usize]) -> bool {
        match *self {
            Target::Classes { classes, .. } => idx.iter().all(|&i| classes[i] == classes[idx[0]]),
            Target::Values(y) => idx.iter().all(|&i| y[i] == y[idx[0]]),
        }
    }
}

struct Builder<'a> {
    x: &'a Array2<f64>,
    target: Target<'a>,
    max_depth: Option<usize>,
    min_leaf: usize,
    max_features: usize,
    nodes: Vec<Node>,
    feature_order: Vec<usize>,
}

struct BestSplit {
    score: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn grow(&mut self, idx: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: self.target.leaf(&idx),
        });
        let depth_ok = self.max_depth.is_none_or(|m| depth < m);
        if !depth_ok || idx.len() < 2 * self.min_leaf || self.target.is_pure(&idx) {
            return id;
        }
        let Some(best) = self.best_split(&idx, rng) else {
            return id;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.x[[i, best.feature]] <= best.threshold);
        drop(idx);
        let l = self.grow(left, depth + 1, rng);
        let r = self.grow(right, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: l,
            right: r,
        };
        id
    }

    fn best_split(&mut self, idx: &[usize], rng: &mut ChaCha8Rng) -> Option<BestSplit> {
        self.feature_order.shuffle(rng);
        let order = self.feature_order.clone();
        let mut best: Option<BestSplit> = None;
        let mut visited = 0;
        let mut sorted = idx.to_vec();
        for &feature in &order {
            if visited == self.max_features {
                break;
            }
            let first = self.x[[idx[0], feature]];
            if idx.iter().all(|&i| self.x[[i, feature]] == first) {
                continue;
            }
            visited += 1;
            sorted.sort_unstable_by(|&a, &b| self.x[[a, feature]].total_cmp(&self.x[[b, feature]]));
            if let Some((score, threshold)) = self.scan(&sorted, feature) {
                if best.as_ref().is_none_or(|b| score > b.score) {
                    best = Some(BestSplit {
                        score,
                        feature,
                        threshold,
                    });
                }
            }
        }
        best
    }

    /// Best threshold on one feature; the score is the proxy that is
    /// maximized (Σ c²/n for Gini, S²/n for variance).
    fn scan(&self, sorted: &[usize], feature: usize) -> Option<(f64, f64)> {
        let n = sorted.len();
        let min_leaf = self.min_leaf;
        let mut best: Option<(f64, f64)> = None;
        let consider = |pos: usize, score: f64, best: &mut Option<(f64, f64)>| {
            let lo = self.x[[sorted[pos - 1], feature]];
            let hi = self.x[[sorted[pos], feature]];
            if lo >= hi || pos < min_leaf || n - pos < min_leaf {
                return;
            }
            if best.is_none_or(|(s, _)| score > s) {
                let mut t = 0.5 * (lo + hi);
                if t >= hi {
                    t = lo;
                }
                *best = Some((score, t));
            }
        };
        match self.target {
            Target::Classes { classes, k } => {
                let mut total = vec![0.0; k];
                for &i in sorted {
                    total[classes[i]] += 1.0;
                }
                let mut left = vec![0.0; k];
                let mut left_sq = 0.0;
                let mut right_sq: f64 = total.iter().map(|c| c * c).sum();
                for pos in 1..n {
                    let c = classes[sorted[pos - 1]];
                    let r = total[c] - left[c];
                    left_sq += 2.0 * left[c] + 1.0;
                    right_sq -= 2.0 * r - 1.0;
                    left[c] += 1.0;
                    let nl = pos as f64;
                    let nr = (n - pos) as f64;
                    consider(pos, left_sq / nl + right_sq / nr, &mut best);
                }
            }
            Target::Values(y) => {
                let total: f64 = sorted.iter().map(|&i| y[i]).sum();
                let mut left = 0.0;
                for pos in 1..n {
                    left += y[sorted[pos - 1]];
                    let right = total - left;
                    let nl = pos as f64;
                    let nr = (n - pos) as f64;
                    consider(pos, left * left / nl + right * right / nr, &mut best);
                }
            }
        }
        best
    }
}

fn build_tree(
    x: &Array2<f64>,
    target: Target<'_>,
    params: &ForestParams,
    tree_index: usize,
) -> Tree {
    let n = x.nrows();
    let mut rng = rng_from(params.seed, &[tree_index as u64]);
    let idx: Vec<usize> = if params.bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut builder = Builder {
        x,
        target,
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        max_features: params.max_features.resolve(x.ncols()),
        nodes: Vec::new(),
        feature_order: (0..x.ncols()).collect(),
    };
    builder.grow(idx, 0, &mut rng);
    Tree {
        nodes: builder.nodes,
    }
}

/// A bagged ensemble whose prediction is the mean of its trees' leaf values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub n_outputs: usize,
}

impl Forest {
    /// Gini classification forest over class indices in `[0, k)`.
    pub fn fit_classifier(
        x: &Array2<f64>,
        classes: &[usize],
        k: usize,
        params: &ForestParams,
    ) -> Result<Self> {
        params.validate()?;
        if x.nrows() != classes.len() || x.nrows() == 0 {
            return invalid("feature rows and class labels disagree or are empty");
        }
        if classes.iter().any(|&c| c >= k) {
            return invalid("class index out of range");
        }
        let target = Target::Classes { classes, k };
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| build_tree(x, target, params, t))
            .collect();
        Ok(Self {
            trees,
            n_features: x.ncols(),
            n_outputs: k,
        })
    }

    /// Squared-error regression forest for a single output.
    pub fn fit_regressor(x: &Array2<f64>, y: &[f64], params: &ForestParams) -> Result<Self> {
        params.validate()?;
        if x.nrows() != y.len() || x.nrows() == 0 {
            return invalid("feature rows and targets disagree or are empty");
        }
        if y.iter().any(|v| !v.is_finite()) {
            return invalid("regression targets must be finite");
        }
        let target = Target::Values(y);
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| build_tree(x, target, params, t))
            .collect();
        Ok(Self {
            trees,
            n_features: x.ncols(),
            n_outputs: 1,
        })
    }

    pub fn predict_row(&self, x: ArrayView1<'_, f64>) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_outputs];
        for tree in &self.trees {
            for (a, v) in acc.iter_mut().zip(tree.leaf_value(x)) {
                *a += v;
            }
        }
        let m = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= m);
        acc
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.n_features {
            return invalid(format!(
                "forest expects {} features, got {}",
                self.n_features,
                x.ncols()
            ));
        }
        let rows: Vec<Vec<f64>> = (0..x.nrows())
            .into_par_iter()
            .map(|i| self.predict_row(x.row(i)))
            .collect();
        let mut out = Array2::zeros((x.nrows(), self.n_outputs));
        for (i, r) in rows.into_iter().enumerate() {
            for (j, v) in r.into_iter().enumerate() {
                out[[i, j]] = v;
            }
        }
        Ok(out)
    }
}
