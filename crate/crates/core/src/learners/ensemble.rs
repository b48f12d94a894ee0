use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cv::sub_seed;
use super::{cv_predict, grid_search, train_base, FeatureMatrix, LearnerSpec, TrainedModel};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::ols;
use crate::par;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// The out-of-fold design was singular; the minimum-norm solution was
    /// used.
    pub collinear: bool,
}

/// OLS of `y` on the out-of-fold prediction columns (one per base learner)
/// with an intercept.
pub fn fit_stack(oof: &[Vec<f64>], y: &[f64]) -> Result<StackFit> {
    if oof.is_empty() {
        return Err(Error::InvalidInput("stacking needs at least one base learner".into()));
    }
    if oof.iter().any(|c| c.len() != y.len()) {
        return Err(Error::InvalidInput("out-of-fold columns must have one row per target".into()));
    }
    let cols: Vec<&[f64]> = oof.iter().map(|c| c.as_slice()).collect();
    let fit = ols::fit(&cols, y)?;
    if fit.rank_deficient {
        log::warn!("stacking design is collinear (rcond {:.3e})", fit.rcond);
    }
    Ok(StackFit {
        intercept: fit.intercept,
        coefficients: fit.coefficients,
        collinear: fit.rank_deficient,
    })
}

/// Stacked ensemble: `max(0, intercept + sum coef_i * base_i(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub format_version: u32,
    pub feature_names: Vec<String>,
    pub base_specs: Vec<LearnerSpec>,
    pub base_models: Vec<TrainedModel>,
    pub meta_intercept: f64,
    pub meta_coefficients: Vec<f64>,
    pub collinear: bool,
}

/// Diagnostics collected while fitting an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleFitReport {
    pub chosen: Vec<LearnerSpec>,
    pub cv_rmse: Vec<Vec<f64>>,
    pub oof_rmse: Vec<f64>,
    pub stack_in_sample_rmse: f64,
}

impl EnsembleModel {
    /// Grid-searches each learner family, stacks the out-of-fold predictions
    /// of the winners and refits the winners on all rows.
    pub fn fit(
        family_grids: &[Vec<LearnerSpec>],
        x: &FeatureMatrix,
        y: &[f64],
        k: usize,
        seed: u64,
    ) -> Result<(EnsembleModel, EnsembleFitReport)> {
        if family_grids.is_empty() {
            return Err(Error::InvalidInput("no learner families configured".into()));
        }
        let mut chosen = Vec::new();
        let mut cv_rmse = Vec::new();
        let mut oof = Vec::new();
        for (i, grid) in family_grids.iter().enumerate() {
            let family_seed = sub_seed(seed, 1000 + i as u64);
            let gs = grid_search(grid, x, y, k, family_seed)?;
            oof.push(cv_predict(&gs.best, x, y, k, family_seed)?);
            chosen.push(gs.best);
            cv_rmse.push(gs.cv_rmse);
        }
        let stack = fit_stack(&oof, y)?;
        let base_models = chosen
            .iter()
            .enumerate()
            .map(|(i, s)| train_base(s, x, y, sub_seed(seed, 2000 + i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let rmse = |p: &[f64]| (p.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
        let stacked: Vec<f64> = (0..y.len())
            .map(|r| stack.intercept + stack.coefficients.iter().zip(&oof).map(|(c, col)| c * col[r]).sum::<f64>())
            .collect();
        let report = EnsembleFitReport {
            oof_rmse: oof.iter().map(|c| rmse(c)).collect(),
            stack_in_sample_rmse: rmse(&stacked),
            chosen: chosen.clone(),
            cv_rmse,
        };
        Ok((
            EnsembleModel {
                format_version: MODEL_FORMAT_VERSION,
                feature_names: x.column_names().to_vec(),
                base_specs: chosen,
                base_models,
                meta_intercept: stack.intercept,
                meta_coefficients: stack.coefficients,
                collinear: stack.collinear,
            },
            report,
        ))
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let raw = self.meta_intercept
            + self
                .base_models
                .iter()
                .zip(&self.meta_coefficients)
                .map(|(m, c)| c * m.predict_row(row))
                .sum::<f64>();
        raw.max(0.0)
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        par::map_range(x.n_rows(), |i| self.predict_row(x.row(i)))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: EnsembleModel = serde_json::from_str(text)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                m.format_version
            )));
        }
        if m.base_models.len() != m.meta_coefficients.len() {
            return Err(Error::InvalidInput("one meta coefficient is needed per base model".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        EnsembleModel::from_json(&text)
    }
}

/// Applies the ensemble to every cell of an aligned predictor stack (one
/// grid per feature, in feature order). Cells masked in any layer stay
/// masked.
pub fn predict_grid(ensemble: &EnsembleModel, predictors: &[&Grid]) -> Result<Grid> {
    if predictors.len() != ensemble.n_features() {
        return Err(Error::InvalidInput(format!(
            "model expects {} predictor layers, got {}",
            ensemble.n_features(),
            predictors.len()
        )));
    }
    let first = predictors[0];
    if predictors.iter().any(|g| !g.is_aligned(first)) {
        return Err(Error::Misaligned);
    }
    let geom = *first.geometry();
    Grid::from_fn(geom, "Mg/ha", |col, row| {
        let i = geom.index(col, row);
        let mut features = Vec::with_capacity(predictors.len());
        for g in predictors {
            features.push(g.get_index(i)? as f64);
        }
        Some(ensemble.predict_row(&features) as f32)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridGeometry;
    use crate::learners::FeaturesPerSplit;

    #[test]
    fn stack_exact_single_column() {
        let y: Vec<f64> = (0..10).map(|i| i as f64 * 1.5 + 2.0).collect();
        let s = fit_stack(&[y.clone()], &y).unwrap();
        assert!(s.intercept.abs() < 1e-10);
        assert!((s.coefficients[0] - 1.0).abs() < 1e-10);
        assert!(!s.collinear);
    }

    #[test]
    fn stack_flags_identical_columns() {
        let c: Vec<f64> = (0..10).map(|i| (i * i) as f64).collect();
        let y: Vec<f64> = c.iter().map(|v| v + 1.0).collect();
        assert!(fit_stack(&[c.clone(), c], &y).unwrap().collinear);
    }

    #[test]
    fn stack_recovers_blend() {
        let c1: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin() * 10.0).collect();
        let c2: Vec<f64> = (0..50).map(|i| (i as f64 * 0.7).cos() * 20.0 + i as f64).collect();
        let y: Vec<f64> = c1.iter().zip(&c2).map(|(a, b)| 0.3 * a + 0.7 * b).collect();
        let s = fit_stack(&[c1, c2], &y).unwrap();
        assert!((s.coefficients[0] - 0.3).abs() < 1e-8);
        assert!((s.coefficients[1] - 0.7).abs() < 1e-8);
        assert!(s.intercept.abs() < 1e-8);
    }

    fn toy_ensemble() -> (EnsembleModel, FeatureMatrix) {
        let n = 30;
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, (i % 7) as f64]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 3.0 * r[0] + r[1]).collect();
        let x = FeatureMatrix::from_rows(&rows, vec!["a".into(), "b".into()]).unwrap();
        let grids = vec![
            vec![LearnerSpec::Knn { k: 1 }, LearnerSpec::Knn { k: 3 }],
            vec![LearnerSpec::BaggedTrees {
                n_trees: 5,
                max_depth: Some(4),
                features_per_split: FeaturesPerSplit::All,
            }],
        ];
        let (m, _) = EnsembleModel::fit(&grids, &x, &y, 5, 1).unwrap();
        (m, x)
    }

    #[test]
    fn ensemble_json_roundtrip_and_version_check() {
        let (m, x) = toy_ensemble();
        let back = EnsembleModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back.predict(&x), m.predict(&x));
        let mut v = m.clone();
        v.format_version = 99;
        assert!(EnsembleModel::from_json(&serde_json::to_string(&v).unwrap()).is_err());
    }

    #[test]
    fn predictions_are_nonnegative() {
        let (mut m, x) = toy_ensemble();
        m.meta_intercept = -1e6;
        assert!(m.predict(&x).iter().all(|p| *p == 0.0));
    }

    #[test]
    fn grid_prediction_matches_rows_and_masks() {
        let (m, _) = toy_ensemble();
        let g = GridGeometry::new(4, 3, 0.0, 0.0, 30.0).unwrap();
        let a = Grid::from_fn(g, "", |c, r| Some((c * 3 + r) as f32)).unwrap();
        let mut valid = vec![true; 12];
        valid[5] = false;
        let b = Grid::new(g, "", (0..12).map(|i| (i % 7) as f32).collect(), valid).unwrap();
        let out = predict_grid(&m, &[&a, &b]).unwrap();
        assert_eq!(out.get_index(5), None);
        for i in (0..12).filter(|i| *i != 5) {
            let row = [a.get_index(i).unwrap() as f64, b.get_index(i).unwrap() as f64];
            assert_eq!(out.get_index(i).unwrap(), m.predict_row(&row) as f32);
        }
        let c = Grid::filled(GridGeometry::new(2, 2, 0.0, 0.0, 30.0).unwrap(), "", 1.0).unwrap();
        assert!(matches!(predict_grid(&m, &[&a, &c]), Err(Error::Misaligned)));
        assert!(predict_grid(&m, &[&a]).is_err());

        let k1 = Grid::filled(g, "", 4.0).unwrap();
        let k2 = Grid::filled(g, "", 2.0).unwrap();
        let flat = predict_grid(&m, &[&k1, &k2]).unwrap();
        assert!(flat.values().iter().all(|v| *v == flat.values()[0]));
    }
}
