use nalgebra::DMatrix;
use std::path::Path;

use crate::error::{Error, Result};

/// Observed data: covariate matrix, outcomes, and optional censoring flags
/// (survival models only).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub censored: Option<Vec<bool>>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: Vec<f64>, censored: Option<Vec<bool>>) -> Result<Self> {
        let n = x.nrows();
        if n == 0 || x.ncols() == 0 {
            return Err(Error::InvalidInput("dataset must have n >= 1, d >= 1".into()));
        }
        if y.len() != n {
            return Err(Error::InvalidInput(format!(
                "y length {} does not match {} rows of x",
                y.len(),
                n
            )));
        }
        if let Some(c) = &censored {
            if c.len() != n {
                return Err(Error::InvalidInput("censoring vector length mismatch".into()));
            }
        }
        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite values in dataset".into()));
        }
        Ok(Dataset { x, y, censored })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// Dataset with observation `i` removed (for brute-force LOO).
    pub fn without(&self, i: usize) -> Dataset {
        let n = self.n();
        let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let x = DMatrix::from_fn(n - 1, self.d(), |r, c| self.x[(keep[r], c)]);
        let y = keep.iter().map(|&j| self.y[j]).collect();
        let censored = self
            .censored
            .as_ref()
            .map(|c| keep.iter().map(|&j| c[j]).collect());
        Dataset { x, y, censored }
    }

    /// Covariate row `i` as an owned vector.
    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.d()).map(|c| self.x[(i, c)]).collect()
    }

    /// Read a dataset from CSV with a header row. Expected columns are
    /// `x1..xd`, `y`, and optionally `cens` (0/1). Missing or non-numeric
    /// values are rejected with the offending line number.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let mut x_cols = Vec::new();
        let mut y_col = None;
        let mut cens_col = None;
        for (idx, name) in headers.iter().enumerate() {
            let name = name.trim();
            if name == "y" {
                y_col = Some(idx);
            } else if name == "cens" {
                cens_col = Some(idx);
            } else if name.starts_with('x') && name[1..].parse::<usize>().is_ok() {
                x_cols.push((name[1..].parse::<usize>().unwrap(), idx));
            } else {
                return Err(Error::InvalidInput(format!(
                    "unexpected CSV column '{name}' (expected x1..xd, y, cens)"
                )));
            }
        }
        x_cols.sort();
        let y_col =
            y_col.ok_or_else(|| Error::InvalidInput("CSV is missing a 'y' column".into()))?;
        if x_cols.is_empty() {
            return Err(Error::InvalidInput("CSV has no covariate columns x1..xd".into()));
        }

        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut ys = Vec::new();
        let mut cens = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            // +2: header line plus one-based numbering
            let lineno = line + 2;
            let parse = |idx: usize| -> Result<f64> {
                record
                    .get(idx)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        Error::InvalidInput(format!(
                            "line {lineno}: missing or non-numeric value in column {}",
                            headers.get(idx).unwrap_or("?")
                        ))
                    })
            };
            let mut row = Vec::with_capacity(x_cols.len());
            for &(_, idx) in &x_cols {
                row.push(parse(idx)?);
            }
            rows.push(row);
            ys.push(parse(y_col)?);
            if let Some(idx) = cens_col {
                let v = parse(idx)?;
                if v != 0.0 && v != 1.0 {
                    return Err(Error::InvalidInput(format!(
                        "line {lineno}: cens must be 0 or 1"
                    )));
                }
                cens.push(v == 1.0);
            }
        }
        if rows.is_empty() {
            return Err(Error::InvalidInput("CSV contains no data rows".into()));
        }
        let d = x_cols.len();
        let x = DMatrix::from_fn(rows.len(), d, |r, c| rows[r][c]);
        Dataset::new(x, ys, cens_col.map(|_| cens))
    }
}
