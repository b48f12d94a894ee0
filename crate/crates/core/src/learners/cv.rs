use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{train_base, FeatureMatrix, LearnerSpec};
use crate::error::{Error, Result};
use crate::par;

/// Derives an independent seed for a numbered sub-task.
pub(crate) fn sub_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded random partition of `0..n` into `k` folds: rows are shuffled and
/// the row at shuffled position `p` goes to fold `p % k`, so fold sizes
/// differ by at most one and the first folds are the larger ones.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::InvalidInput(format!("{n} rows cannot fill {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (p, row) in order.into_iter().enumerate() {
        fold[row] = p % k;
    }
    Ok(fold)
}

/// Out-of-fold predictions: each row is predicted by a model trained on the
/// other `k - 1` folds.
pub fn cv_predict(spec: &LearnerSpec, x: &FeatureMatrix, y: &[f64], k: usize, seed: u64) -> Result<Vec<f64>> {
    let folds = fold_assignment(x.n_rows(), k, seed)?;
    let per_fold = par::map_range(k, |f| -> Result<Vec<(usize, f64)>> {
        let train: Vec<usize> = (0..folds.len()).filter(|i| folds[*i] != f).collect();
        let test: Vec<usize> = (0..folds.len()).filter(|i| folds[*i] == f).collect();
        let ty: Vec<f64> = train.iter().map(|i| y[*i]).collect();
        let model = train_base(spec, &x.select_rows(&train), &ty, sub_seed(seed, f as u64))?;
        Ok(test.into_iter().map(|i| (i, model.predict_row(x.row(i)))).collect())
    });
    let mut out = vec![0.0; x.n_rows()];
    for fold in per_fold {
        for (i, p) in fold? {
            out[i] = p;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best: LearnerSpec,
    pub best_index: usize,
    /// Cross-validated RMSE of each grid entry, in grid order.
    pub cv_rmse: Vec<f64>,
}

/// Picks the grid entry with the lowest k-fold RMSE (first entry wins ties).
/// All candidates share the same fold assignment.
pub fn grid_search(
    grid: &[LearnerSpec],
    x: &FeatureMatrix,
    y: &[f64],
    k: usize,
    seed: u64,
) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty hyperparameter grid".into()));
    }
    let scores = par::map_slice(grid, |spec| -> Result<f64> {
        let oof = cv_predict(spec, x, y, k, seed)?;
        let sse: f64 = oof.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum();
        Ok((sse / y.len() as f64).sqrt())
    });
    let cv_rmse = scores.into_iter().collect::<Result<Vec<f64>>>()?;
    let mut best_index = 0;
    for (i, s) in cv_rmse.iter().enumerate() {
        if *s < cv_rmse[best_index] {
            best_index = i;
        }
    }
    Ok(GridSearchResult {
        best: grid[best_index].clone(),
        best_index,
        cv_rmse,
    })
}

/// Seeded split of `0..n` into training and testing indices (sorted).
pub fn train_test_split(n: usize, train_frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&train_frac) {
        return Err(Error::InvalidInput(format!("train fraction {train_frac} outside [0, 1]")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (n as f64 * train_frac).round() as usize;
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
