use serde::{Deserialize, Serialize};

use super::FeatureMatrix;

/// k-nearest-neighbour regressor on z-scored features (Euclidean distance,
/// ties resolved by training-row order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    k: usize,
    means: Vec<f64>,
    scales: Vec<f64>,
    rows: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl KnnModel {
    pub fn fit(x: &FeatureMatrix, y: &[f64], k: usize) -> Self {
        let n = x.n_rows();
        let p = x.n_cols();
        let mut means = vec![0.0; p];
        let mut scales = vec![1.0; p];
        for j in 0..p {
            let m = (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (x.get(i, j) - m).powi(2)).sum::<f64>() / n as f64;
            means[j] = m;
            if var > 0.0 {
                scales[j] = var.sqrt();
            }
        }
        let rows = (0..n)
            .map(|i| {
                x.row(i)
                    .iter()
                    .zip(means.iter().zip(&scales))
                    .map(|(v, (m, s))| (v - m) / s)
                    .collect()
            })
            .collect();
        KnnModel {
            k: k.min(n),
            means,
            scales,
            rows,
            targets: y.to_vec(),
        }
    }

    pub fn n_features(&self) -> usize {
        self.means.len()
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let z: Vec<f64> = row
            .iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        let mut d: Vec<(f64, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < d.len() {
            d.select_nth_unstable_by(self.k - 1, cmp);
            d.truncate(self.k);
        }
        d.iter().map(|(_, i)| self.targets[*i]).sum::<f64>() / d.len() as f64
    }
}
