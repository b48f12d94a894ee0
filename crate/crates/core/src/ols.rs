//! Ordinary least squares with an intercept.
//!
//! Columns are centred and scaled to unit length before the normal equations
//! are formed, then solved through a symmetric eigendecomposition. Eigen
//! directions whose eigenvalue falls below `RCOND * max_eigenvalue` are
//! dropped, which yields the minimum-norm solution (in the standardised
//! coordinates) for rank-deficient designs and flags them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reciprocal condition threshold below which the design counts as
/// singular.
pub const RCOND: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Smallest over largest eigenvalue of the standardised cross-product
    /// matrix (0 when a column is constant).
    pub rcond: f64,
    pub rank_deficient: bool,
}

impl OlsFit {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(row)
                .map(|(b, x)| b * x)
                .sum::<f64>()
    }
}

/// Fits `y = b0 + sum_j b_j * columns[j]`.
pub fn fit(columns: &[&[f64]], y: &[f64]) -> Result<OlsFit> {
    let n = y.len();
    let p = columns.len();
    if n == 0 {
        return Err(Error::InvalidInput("OLS needs at least one observation".into()));
    }
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidInput("OLS columns must match the response length".into()));
    }
    let ybar = y.iter().sum::<f64>() / n as f64;
    if p == 0 {
        return Ok(OlsFit {
            intercept: ybar,
            coefficients: Vec::new(),
            rcond: 1.0,
            rank_deficient: false,
        });
    }
    let means: Vec<f64> = columns
        .iter()
        .map(|c| c.iter().sum::<f64>() / n as f64)
        .collect();
    let mut norms = vec![0.0; p];
    for (j, c) in columns.iter().enumerate() {
        norms[j] = c.iter().map(|x| (x - means[j]).powi(2)).sum::<f64>().sqrt();
    }
    let scale: Vec<f64> = norms.iter().map(|s| if *s > 0.0 { *s } else { 1.0 }).collect();

    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    for i in 0..n {
        let dy = y[i] - ybar;
        for a in 0..p {
            let za = (columns[a][i] - means[a]) / scale[a];
            xty[a] += za * dy;
            for b in a..p {
                let zb = (columns[b][i] - means[b]) / scale[b];
                xtx[(a, b)] += za * zb;
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
    }

    let eig = SymmetricEigen::new(xtx);
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let min_ev = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let rcond = if max_ev > 0.0 { (min_ev / max_ev).max(0.0) } else { 0.0 };
    let cutoff = RCOND * max_ev;
    let mut z = DVector::<f64>::zeros(p);
    for k in 0..p {
        let ev = eig.eigenvalues[k];
        if ev > cutoff && ev > 0.0 {
            let v = eig.eigenvectors.column(k);
            let proj = v.dot(&xty) / ev;
            z += v * proj;
        }
    }
    let coefficients: Vec<f64> = (0..p).map(|j| z[j] / scale[j]).collect();
    let intercept = ybar
        - coefficients
            .iter()
            .zip(&means)
            .map(|(b, m)| b * m)
            .sum::<f64>();
    Ok(OlsFit {
        intercept,
        coefficients,
        rcond,
        rank_deficient: rcond < RCOND,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_linear_recovery() {
        let c1: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin() * 40.0 + 50.0).collect();
        let c2: Vec<f64> = (0..50).map(|i| (i as f64 * 0.11).cos() * 300.0 + 800.0).collect();
        let y: Vec<f64> = c1.iter().zip(&c2).map(|(a, b)| 9.555 + 1.135 * a - 0.023 * b).collect();
        let f = fit(&[&c1, &c2], &y).unwrap();
        assert!((f.intercept - 9.555).abs() < 1e-9);
        assert!((f.coefficients[0] - 1.135).abs() < 1e-12);
        assert!((f.coefficients[1] + 0.023).abs() < 1e-12);
        assert!(!f.rank_deficient);
    }

    #[test]
    fn duplicate_columns_are_flagged_and_split() {
        let c: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = c.iter().map(|v| 2.0 * v + 1.0).collect();
        let f = fit(&[&c, &c], &y).unwrap();
        assert!(f.rank_deficient);
        assert!((f.coefficients[0] - 1.0).abs() < 1e-9);
        assert!((f.coefficients[1] - 1.0).abs() < 1e-9);
        assert!((f.intercept - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_column_is_flagged() {
        let c: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let k = vec![3.0; 10];
        let y: Vec<f64> = c.iter().map(|v| v * 0.5).collect();
        let f = fit(&[&c, &k], &y).unwrap();
        assert!(f.rank_deficient);
        assert_eq!(f.coefficients[1], 0.0);
        assert!((f.coefficients[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn no_columns_is_mean() {
        let f = fit(&[], &[1.0, 2.0, 6.0]).unwrap();
        assert_eq!(f.intercept, 3.0);
    }
}
