//! Base regressors, cross-validation, grid search and linear stacking.
//!
//! Three learner families sit behind [`LearnerSpec`]: k-nearest neighbours
//! on standardised features, bagged regression trees with random feature
//! subsets at each split, and gradient-boosted regression trees. Every fit
//! is a pure function of `(data, spec, seed)`; per-tree random streams make
//! results independent of thread scheduling.

mod cv;
mod ensemble;
mod knn;
mod matrix;
mod tree;

pub use cv::{cv_predict, fold_assignment, grid_search, train_test_split, GridSearchResult};
pub use ensemble::{fit_stack, predict_grid, EnsembleFitReport, EnsembleModel, StackFit, MODEL_FORMAT_VERSION};
pub use knn::KnnModel;
pub use matrix::FeatureMatrix;
pub use tree::{BaggedTreesModel, BoostedTreesModel, RegressionTree};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Features tried at each split of a bagged tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturesPerSplit {
    Sqrt,
    Third,
    All,
    Count(usize),
}

impl FeaturesPerSplit {
    pub fn resolve(&self, p: usize) -> usize {
        let m = match self {
            FeaturesPerSplit::Sqrt => (p as f64).sqrt().floor() as usize,
            FeaturesPerSplit::Third => p / 3,
            FeaturesPerSplit::All => p,
            FeaturesPerSplit::Count(k) => *k,
        };
        m.clamp(1, p.max(1))
    }
}

/// A learner family with its hyperparameters. `max_depth: None` grows
/// trees until leaves are pure or hold a single row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    Knn {
        k: usize,
    },
    BaggedTrees {
        n_trees: usize,
        max_depth: Option<usize>,
        features_per_split: FeaturesPerSplit,
    },
    BoostedTrees {
        n_trees: usize,
        learning_rate: f64,
        max_depth: usize,
    },
}

impl LearnerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LearnerSpec::Knn { .. } => "knn",
            LearnerSpec::BaggedTrees { .. } => "bagged_trees",
            LearnerSpec::BoostedTrees { .. } => "boosted_trees",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("{}: {m}", self.kind())));
        match self {
            LearnerSpec::Knn { k } if *k == 0 => bad("k must be >= 1"),
            LearnerSpec::BaggedTrees { n_trees, .. } if *n_trees == 0 => bad("n_trees must be >= 1"),
            LearnerSpec::BoostedTrees {
                n_trees,
                learning_rate,
                ..
            } => {
                if *n_trees == 0 {
                    bad("n_trees must be >= 1")
                } else if !(learning_rate.is_finite() && *learning_rate >= 0.0) {
                    bad("learning_rate must be finite and >= 0")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// The default search grids for each family.
    pub fn default_grid() -> Vec<Vec<LearnerSpec>> {
        let knn = [1, 5, 10, 25].map(|k| LearnerSpec::Knn { k }).to_vec();
        let mut bagged = Vec::new();
        for n_trees in [100, 300] {
            for max_depth in [Some(8), Some(16), None] {
                for features_per_split in [FeaturesPerSplit::Sqrt, FeaturesPerSplit::Third] {
                    bagged.push(LearnerSpec::BaggedTrees {
                        n_trees,
                        max_depth,
                        features_per_split,
                    });
                }
            }
        }
        let mut boosted = Vec::new();
        for n_trees in [200, 500] {
            for learning_rate in [0.05, 0.1] {
                for max_depth in [3, 6] {
                    boosted.push(LearnerSpec::BoostedTrees {
                        n_trees,
                        learning_rate,
                        max_depth,
                    });
                }
            }
        }
        vec![knn, bagged, boosted]
    }
}

/// A fitted base learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainedModel {
    Knn(KnnModel),
    BaggedTrees(BaggedTreesModel),
    BoostedTrees(BoostedTreesModel),
}

impl TrainedModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self {
            TrainedModel::Knn(m) => m.predict_row(row),
            TrainedModel::BaggedTrees(m) => m.predict_row(row),
            TrainedModel::BoostedTrees(m) => m.predict_row(row),
        }
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        crate::par::map_range(x.n_rows(), |i| self.predict_row(x.row(i)))
    }

    pub fn n_features(&self) -> usize {
        match self {
            TrainedModel::Knn(m) => m.n_features(),
            TrainedModel::BaggedTrees(m) => m.n_features,
            TrainedModel::BoostedTrees(m) => m.n_features,
        }
    }
}

/// Fits one base learner.
pub fn train_base(spec: &LearnerSpec, x: &FeatureMatrix, y: &[f64], seed: u64) -> Result<TrainedModel> {
    spec.validate()?;
    if x.n_rows() == 0 {
        return Err(Error::InvalidInput("cannot train on an empty feature matrix".into()));
    }
    if x.n_rows() != y.len() {
        return Err(Error::InvalidInput(format!(
            "{} feature rows but {} targets",
            x.n_rows(),
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("targets must be finite".into()));
    }
    Ok(match spec {
        LearnerSpec::Knn { k } => TrainedModel::Knn(KnnModel::fit(x, y, *k)),
        LearnerSpec::BaggedTrees {
            n_trees,
            max_depth,
            features_per_split,
        } => TrainedModel::BaggedTrees(BaggedTreesModel::fit(
            x,
            y,
            *n_trees,
            *max_depth,
            features_per_split.resolve(x.n_cols()),
            seed,
        )),
        LearnerSpec::BoostedTrees {
            n_trees,
            learning_rate,
            max_depth,
        } => TrainedModel::BoostedTrees(BoostedTreesModel::fit(x, y, *n_trees, *learning_rate, *max_depth)),
    })
}
