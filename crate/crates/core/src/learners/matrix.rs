use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major feature table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
    column_names: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(n_rows: usize, n_cols: usize, values: Vec<f64>, column_names: Vec<String>) -> Result<Self> {
        if values.len() != n_rows * n_cols {
            return Err(Error::InvalidInput(format!(
                "feature matrix needs {} values, got {}",
                n_rows * n_cols,
                values.len()
            )));
        }
        if column_names.len() != n_cols {
            return Err(Error::InvalidInput(format!(
                "{} column names for {n_cols} columns",
                column_names.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("feature values must be finite".into()));
        }
        Ok(FeatureMatrix {
            n_rows,
            n_cols,
            values,
            column_names,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], column_names: Vec<String>) -> Result<Self> {
        let n_cols = column_names.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n_cols) {
            return Err(Error::InvalidInput(format!(
                "row has {} values, expected {n_cols}",
                bad.len()
            )));
        }
        FeatureMatrix::new(rows.len(), n_cols, rows.concat(), column_names)
    }

    /// Reads a CSV with a header row. `target` (if given) is split off as the
    /// response; `skip` columns are ignored (e.g. identifiers).
    pub fn read_csv(path: &Path, target: Option<&str>, skip: &[&str]) -> Result<(Self, Option<Vec<f64>>)> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
        let target_idx = match target {
            Some(t) => Some(
                headers
                    .iter()
                    .position(|h| h == t)
                    .ok_or_else(|| Error::MissingColumn(t.to_string()))?,
            ),
            None => None,
        };
        let feature_idx: Vec<usize> = (0..headers.len())
            .filter(|i| Some(*i) != target_idx && !skip.contains(&&headers[*i]))
            .collect();
        let names = feature_idx.iter().map(|i| headers[*i].to_string()).collect();
        let mut values = Vec::new();
        let mut y = Vec::new();
        let mut n_rows = 0;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let parse = |i: usize| -> Result<f64> {
                rec[i].trim().parse::<f64>().map_err(|_| {
                    Error::InvalidInput(format!("`{}` in column {} is not numeric", &rec[i], &headers[i]))
                })
            };
            for &i in &feature_idx {
                values.push(parse(i)?);
            }
            if let Some(t) = target_idx {
                y.push(parse(t)?);
            }
            n_rows += 1;
        }
        let m = FeatureMatrix::new(n_rows, feature_idx.len(), values, names)?;
        Ok((m, target_idx.map(|_| y)))
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols + j]
    }

    /// Rows picked by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(idx.len() * self.n_cols);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            n_rows: idx.len(),
            n_cols: self.n_cols,
            values,
            column_names: self.column_names.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn csv_with_target_and_skip() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "id,a,y,b\nx1,1,10,2\nx2,3,20,4").unwrap();
        let (m, y) = FeatureMatrix::read_csv(f.path(), Some("y"), &["id"]).unwrap();
        assert_eq!(m.column_names(), ["a", "b"]);
        assert_eq!(m.row(1), &[3.0, 4.0]);
        assert_eq!(y.unwrap(), vec![10.0, 20.0]);
        assert!(FeatureMatrix::read_csv(f.path(), Some("zz"), &[]).is_err());
    }

    #[test]
    fn shape_checks() {
        assert!(FeatureMatrix::new(2, 2, vec![1.0; 3], vec!["a".into(), "b".into()]).is_err());
        assert!(FeatureMatrix::new(1, 1, vec![f64::NAN], vec!["a".into()]).is_err());
        let m = FeatureMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]], vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(m.select_rows(&[1]).row(0), &[3.0, 4.0]);
    }
}
