use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Binary regression tree; rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

struct Builder<'a> {
    x: &'a FeatureMatrix,
    y: &'a [f64],
    max_depth: Option<usize>,
    mtry: usize,
    nodes: Vec<Node>,
}

impl RegressionTree {
    /// Grows a least-squares tree on `rows` (duplicates allowed). With
    /// `mtry < n_cols` a fresh random feature subset is drawn at each split.
    pub fn fit<R: Rng>(
        x: &FeatureMatrix,
        y: &[f64],
        rows: &[usize],
        max_depth: Option<usize>,
        mtry: usize,
        rng: &mut R,
    ) -> Self {
        let mut b = Builder {
            x,
            y,
            max_depth,
            mtry: mtry.clamp(1, x.n_cols().max(1)),
            nodes: Vec::new(),
        };
        let mut rows = rows.to_vec();
        b.grow(&mut rows, 0, rng);
        RegressionTree { nodes: b.nodes }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    fn leaf_of(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    /// Replaces every leaf value by the mean target of the given rows that
    /// land in it. Leaves receiving no rows keep their value.
    pub fn refit_leaves(&mut self, x: &FeatureMatrix, y: &[f64], rows: &[usize]) {
        let mut acc = vec![(0.0f64, 0usize); self.nodes.len()];
        for &r in rows {
            let leaf = self.leaf_of(x.row(r));
            acc[leaf].0 += y[r];
            acc[leaf].1 += 1;
        }
        for (node, (sum, n)) in self.nodes.iter_mut().zip(acc) {
            if let Node::Leaf { value } = node {
                if n > 0 {
                    *value = sum / n as f64;
                }
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
}

impl Builder<'_> {
    fn grow<R: Rng>(&mut self, rows: &mut [usize], depth: usize, rng: &mut R) -> usize {
        let id = self.nodes.len();
        let n = rows.len() as f64;
        let mean = rows.iter().map(|&r| self.y[r]).sum::<f64>() / n;
        self.nodes.push(Node::Leaf { value: mean });
        let depth_ok = self.max_depth.is_none_or(|d| depth < d);
        if !depth_ok || rows.len() < 2 {
            return id;
        }
        let sse = rows.iter().map(|&r| (self.y[r] - mean).powi(2)).sum::<f64>();
        if sse <= 0.0 {
            return id;
        }
        let p = self.x.n_cols();
        let features: Vec<usize> = if self.mtry >= p {
            (0..p).collect()
        } else {
            let mut f = index::sample(rng, p, self.mtry).into_vec();
            f.sort_unstable();
            f
        };
        let Some((feature, threshold)) = self.best_split(rows, &features) else {
            return id;
        };
        let mut lo = 0;
        for i in 0..rows.len() {
            if self.x.get(rows[i], feature) <= threshold {
                rows.swap(lo, i);
                lo += 1;
            }
        }
        let (left_rows, right_rows) = rows.split_at_mut(lo);
        let left = self.grow(left_rows, depth + 1, rng);
        let right = self.grow(right_rows, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    /// Split maximising the between-child sum of squares.
    fn best_split(&self, rows: &[usize], features: &[usize]) -> Option<(usize, f64)> {
        let n = rows.len();
        let total: f64 = rows.iter().map(|&r| self.y[r]).sum();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order: Vec<(f64, f64)> = Vec::with_capacity(n);
        for &f in features {
            order.clear();
            order.extend(rows.iter().map(|&r| (self.x.get(r, f), self.y[r])));
            order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for i in 0..n - 1 {
                left_sum += order[i].1;
                let (a, b) = (order[i].0, order[i + 1].0);
                if a == b {
                    continue;
                }
                let nl = (i + 1) as f64;
                let nr = (n - i - 1) as f64;
                let right_sum = total - left_sum;
                // SSE reduction up to a constant.
                let score = left_sum * left_sum / nl + right_sum * right_sum / nr;
                if best.is_none_or(|(s, _, _)| score > s) {
                    let mut t = a + (b - a) / 2.0;
                    if t >= b {
                        t = a;
                    }
                    best = Some((score, f, t));
                }
            }
        }
        let (score, f, t) = best?;
        if score <= total * total / n as f64 {
            return None;
        }
        Some((f, t))
    }
}

/// Bagged trees with per-split random feature subsets. Tree structure is
/// grown on a bootstrap resample; leaf values are the mean of all training
/// rows reaching the leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaggedTreesModel {
    pub n_features: usize,
    pub trees: Vec<RegressionTree>,
}

impl BaggedTreesModel {
    pub fn fit(
        x: &FeatureMatrix,
        y: &[f64],
        n_trees: usize,
        max_depth: Option<usize>,
        mtry: usize,
        seed: u64,
    ) -> Self {
        let n = x.n_rows();
        let all: Vec<usize> = (0..n).collect();
        let trees = par::map_range(n_trees, |t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut tree = RegressionTree::fit(x, y, &sample, max_depth, mtry, &mut rng);
            tree.refit_leaves(x, y, &all);
            tree
        });
        BaggedTreesModel {
            n_features: x.n_cols(),
            trees,
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Least-squares gradient boosting from a constant start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedTreesModel {
    pub n_features: usize,
    pub base: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegressionTree>,
}

impl BoostedTreesModel {
    pub fn fit(x: &FeatureMatrix, y: &[f64], n_trees: usize, learning_rate: f64, max_depth: usize) -> Self {
        let n = x.n_rows();
        let base = y.iter().sum::<f64>() / n as f64;
        let mut trees = Vec::new();
        if learning_rate > 0.0 {
            let rows: Vec<usize> = (0..n).collect();
            let mut fitted = vec![base; n];
            let mut residual = vec![0.0; n];
            // Full feature set at every split, so the stream is never drawn.
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            for _ in 0..n_trees {
                for i in 0..n {
                    residual[i] = y[i] - fitted[i];
                }
                let tree = RegressionTree::fit(x, &residual, &rows, Some(max_depth), x.n_cols(), &mut rng);
                for (i, f) in fitted.iter_mut().enumerate() {
                    *f += learning_rate * tree.predict_row(x.row(i));
                }
                trees.push(tree);
            }
        }
        BoostedTreesModel {
            n_features: x.n_cols(),
            base,
            learning_rate,
            trees,
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.base
            + self
                .trees
                .iter()
                .map(|t| self.learning_rate * t.predict_row(row))
                .sum::<f64>()
    }
}
