//! Bagged regression trees (CART, variance reduction).
//!
//! Tree `i` draws from `ChaCha8Rng::seed_from_u64(seed)` switched to stream
//! `i`, so the forest is the same whether trees are grown serially or in
//! parallel.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::serialize::f64_vec;
use super::{ModelError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Root is depth 0; depth-1 trees are stumps.
    pub max_depth: usize,
    /// Minimum number of samples in each child of a split.
    pub min_leaf: usize,
    /// Candidate features per split; `None` means `ceil(sqrt(n_features))`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: 12, min_leaf: 2, features_per_split: None, bootstrap: true }
    }
}

const LEAF: u32 = u32::MAX;

/// Flat binary tree. Node `i` is a leaf when `feature[i] == u32::MAX`;
/// otherwise samples with `x[feature] <= threshold` go to `left[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub feature: Vec<u32>,
    #[serde(with = "f64_vec")]
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    /// Row-major `n_nodes × n_outputs`; zeros on split nodes.
    #[serde(with = "f64_vec")]
    pub value: Vec<f64>,
}

impl Tree {
    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            if t.feature[i] == LEAF {
                0
            } else {
                1 + walk(t, t.left[i] as usize).max(walk(t, t.right[i] as usize))
            }
        }
        walk(self, 0)
    }

    fn leaf_for(&self, features: &[f64]) -> usize {
        let mut i = 0;
        while self.feature[i] != LEAF {
            i = if features[self.feature[i] as usize] <= self.threshold[i] { self.left[i] } else { self.right[i] } as usize;
        }
        i
    }

    fn push_leaf(&mut self, value: &[f64]) -> usize {
        self.feature.push(LEAF);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.value.extend_from_slice(value);
        self.feature.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub params: ForestParams,
    pub n_features: usize,
    pub n_outputs: usize,
    pub trees: Vec<Tree>,
}

impl ForestModel {
    /// Mean of the trees' leaf values.
    pub fn predict(&self, features: &[f64]) -> Vec<f64> {
        let q = self.n_outputs;
        let mut out = vec![0.0; q];
        for t in &self.trees {
            let leaf = t.leaf_for(features);
            for (o, v) in out.iter_mut().zip(&t.value[leaf * q..(leaf + 1) * q]) {
                *o += v;
            }
        }
        let n = self.trees.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    pub(crate) fn validate(&self) -> Result<usize> {
        let bad = |m: &str| Err(ModelError::Format(format!("forest: {m}")));
        if self.trees.len() != self.params.n_trees || self.trees.is_empty() {
            return bad("tree count differs from n_trees");
        }
        for t in &self.trees {
            let n = t.feature.len();
            if n == 0
                || t.threshold.len() != n
                || t.left.len() != n
                || t.right.len() != n
                || t.value.len() != n * self.n_outputs
            {
                return bad("node arrays have inconsistent lengths");
            }
            // children always come after their parent, so every node is reachable
            // exactly once when each non-root node has exactly one parent
            let mut parents = vec![0u32; n];
            for i in 0..n {
                if t.feature[i] == LEAF {
                    continue;
                }
                if t.feature[i] as usize >= self.n_features || !t.threshold[i].is_finite() {
                    return bad("split on invalid feature or threshold");
                }
                for c in [t.left[i], t.right[i]] {
                    if c as usize <= i || c as usize >= n {
                        return bad("child index out of order");
                    }
                    parents[c as usize] += 1;
                }
            }
            if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
                return bad("nodes are not a single tree");
            }
            if t.value.iter().any(|v| !v.is_finite()) {
                return bad("non-finite leaf value");
            }
        }
        Ok(self.n_outputs)
    }
}

pub fn fit_forest(features: &[Vec<f64>], targets: &[Vec<f64>], params: &ForestParams, seed: u64) -> Result<ForestModel> {
    let n = features.len();
    if n == 0 {
        return Err(ModelError::EmptyTrain);
    }
    if targets.len() != n {
        return Err(ModelError::ShapeMismatch(format!("{n} feature rows, {} targets", targets.len())));
    }
    let p = features[0].len();
    let q = targets[0].len();
    if params.n_trees == 0 || params.min_leaf == 0 {
        return Err(ModelError::InvalidParams("n_trees and min_leaf must be >= 1".into()));
    }
    let mtry = params.features_per_split.unwrap_or_else(|| (p as f64).sqrt().ceil() as usize);
    if p == 0 || mtry == 0 || mtry > p {
        return Err(ModelError::InvalidParams(format!("features_per_split {mtry} with {p} features")));
    }

    let grower = Grower { x: features, y: targets, q, mtry, params };
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let rows: Vec<usize> =
                if params.bootstrap { (0..n).map(|_| rng.random_range(0..n)).collect() } else { (0..n).collect() };
            grower.grow(rows, &mut rng)
        })
        .collect();
    Ok(ForestModel { params: params.clone(), n_features: p, n_outputs: q, trees })
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [Vec<f64>],
    q: usize,
    mtry: usize,
    params: &'a ForestParams,
}

struct Split {
    feature: usize,
    threshold: f64,
    /// Sum over children of count × variance.
    cost: f64,
}

impl Grower<'_> {
    fn grow(&self, rows: Vec<usize>, rng: &mut ChaCha8Rng) -> Tree {
        let mut tree = Tree { feature: vec![], threshold: vec![], left: vec![], right: vec![], value: vec![] };
        self.node(&mut tree, rows, 0, rng);
        tree
    }

    fn node(&self, tree: &mut Tree, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let pure = rows.iter().all(|&r| self.y[r] == self.y[rows[0]]);
        let split = if pure || depth >= self.params.max_depth || rows.len() < 2 * self.params.min_leaf {
            None
        } else {
            self.best_split(&rows, rng)
        };
        let Some(split) = split else {
            return tree.push_leaf(&self.mean(&rows));
        };

        let id = tree.push_leaf(&vec![0.0; self.q]);
        tree.feature[id] = split.feature as u32;
        tree.threshold[id] = split.threshold;
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[i][split.feature] <= split.threshold);
        let left = self.node(tree, l, depth + 1, rng);
        let right = self.node(tree, r, depth + 1, rng);
        tree.left[id] = left as u32;
        tree.right[id] = right as u32;
        id
    }

    fn mean(&self, rows: &[usize]) -> Vec<f64> {
        let mut m = vec![0.0; self.q];
        for &r in rows {
            for (a, b) in m.iter_mut().zip(&self.y[r]) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|a| *a /= rows.len() as f64);
        m
    }

    fn best_split(&self, rows: &[usize], rng: &mut ChaCha8Rng) -> Option<Split> {
        let n = rows.len();
        let q = self.q;
        let min_leaf = self.params.min_leaf;
        let p = self.x[0].len();
        let candidates = sample(rng, p, self.mtry);

        let mut total = vec![0.0; q];
        let mut total_sq = 0.0;
        for &r in rows {
            for (t, v) in total.iter_mut().zip(&self.y[r]) {
                *t += v;
                total_sq += v * v;
            }
        }

        let mut best: Option<Split> = None;
        let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
        let mut left = vec![0.0; q];
        for f in candidates.iter() {
            order.clear();
            order.extend(rows.iter().map(|&r| (self.x[r][f], r)));
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            if order[0].0 == order[n - 1].0 {
                continue;
            }
            left.iter_mut().for_each(|v| *v = 0.0);
            for k in 1..n {
                for (l, v) in left.iter_mut().zip(&self.y[order[k - 1].1]) {
                    *l += v;
                }
                if k < min_leaf || n - k < min_leaf || order[k - 1].0 == order[k].0 {
                    continue;
                }
                // SSE(left) + SSE(right) = Σy² − |Σ_L|²/k − |Σ_R|²/(n−k)
                let (kl, kr) = (k as f64, (n - k) as f64);
                let explained: f64 =
                    left.iter().zip(&total).map(|(l, t)| l * l / kl + (t - l) * (t - l) / kr).sum();
                let cost = (total_sq - explained).max(0.0);
                if best.as_ref().is_none_or(|b| cost < b.cost) {
                    let (lo, hi) = (order[k - 1].0, order[k].0);
                    let mid = 0.5 * (lo + hi);
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some(Split { feature: f, threshold, cost });
                }
            }
        }
        best
    }
}
