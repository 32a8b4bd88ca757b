use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One additive covariance term. Magnitudes and length scales are stored on
/// the log scale so optimization stays unconstrained.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelTerm {
    Constant { log_magnitude: f64 },
    Linear { log_magnitude: f64 },
    SquaredExponential {
        log_magnitude: f64,
        /// Length 1 (shared across dimensions) or length d (per-dimension).
        log_length_scales: Vec<f64>,
    },
}

/// Sum of covariance terms plus a diagonal jitter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelSpec {
    pub terms: Vec<KernelTerm>,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn default_jitter() -> f64 {
    1e-10
}

impl KernelSpec {
    pub fn new(terms: Vec<KernelTerm>) -> Self {
        KernelSpec { terms, jitter: default_jitter() }
    }

    /// Squared-exponential-only kernel with a shared or per-dimension scale.
    pub fn squared_exponential(log_magnitude: f64, log_length_scales: Vec<f64>) -> Self {
        KernelSpec::new(vec![KernelTerm::SquaredExponential {
            log_magnitude,
            log_length_scales,
        }])
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::InvalidInput("kernel has no terms".into()));
        }
        if !(self.jitter > 0.0) {
            return Err(Error::InvalidInput("jitter must be positive".into()));
        }
        for t in &self.terms {
            if let KernelTerm::SquaredExponential { log_length_scales, .. } = t {
                if log_length_scales.len() != 1 && log_length_scales.len() != d {
                    return Err(Error::InvalidInput(format!(
                        "length-scale vector must have length 1 or {d}, got {}",
                        log_length_scales.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// k(a, b) for two covariate rows.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| match t {
                KernelTerm::Constant { log_magnitude } => (2.0 * log_magnitude).exp(),
                KernelTerm::Linear { log_magnitude } => {
                    (2.0 * log_magnitude).exp()
                        * a.iter().zip(b).map(|(ai, bi)| ai * bi).sum::<f64>()
                }
                KernelTerm::SquaredExponential { log_magnitude, log_length_scales } => {
                    let mut r2 = 0.0;
                    for (idx, (ai, bi)) in a.iter().zip(b).enumerate() {
                        let ls = if log_length_scales.len() == 1 {
                            log_length_scales[0]
                        } else {
                            log_length_scales[idx]
                        };
                        let z = (ai - bi) / ls.exp();
                        r2 += z * z;
                    }
                    (2.0 * log_magnitude).exp() * (-0.5 * r2).exp()
                }
            })
            .sum()
    }

    /// Cross-covariance vector k(x*, X).
    pub fn cross(&self, xs: &[f64], x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| {
                let row: Vec<f64> = (0..x.ncols()).map(|c| x[(i, c)]).collect();
                self.eval(xs, &row)
            })
            .collect()
    }

    /// Flatten all kernel parameters (log scale) for optimizers / designs.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::new();
        for t in &self.terms {
            match t {
                KernelTerm::Constant { log_magnitude }
                | KernelTerm::Linear { log_magnitude } => p.push(*log_magnitude),
                KernelTerm::SquaredExponential { log_magnitude, log_length_scales } => {
                    p.push(*log_magnitude);
                    p.extend_from_slice(log_length_scales);
                }
            }
        }
        p
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (ti, t) in self.terms.iter().enumerate() {
            match t {
                KernelTerm::Constant { .. } => names.push(format!("k{ti}_const_log_mag")),
                KernelTerm::Linear { .. } => names.push(format!("k{ti}_lin_log_mag")),
                KernelTerm::SquaredExponential { log_length_scales, .. } => {
                    names.push(format!("k{ti}_se_log_mag"));
                    for j in 0..log_length_scales.len() {
                        names.push(format!("k{ti}_se_log_ls{j}"));
                    }
                }
            }
        }
        names
    }

    /// Inverse of [`params`]; panics if the layout does not match.
    pub fn with_params(&self, p: &[f64]) -> KernelSpec {
        let mut spec = self.clone();
        let mut it = p.iter();
        for t in &mut spec.terms {
            match t {
                KernelTerm::Constant { log_magnitude }
                | KernelTerm::Linear { log_magnitude } => *log_magnitude = *it.next().unwrap(),
                KernelTerm::SquaredExponential { log_magnitude, log_length_scales } => {
                    *log_magnitude = *it.next().unwrap();
                    for ls in log_length_scales.iter_mut() {
                        *ls = *it.next().unwrap();
                    }
                }
            }
        }
        assert!(it.next().is_none(), "kernel parameter vector too long");
        spec
    }

    /// Rescale every squared-exponential length scale by `mult` (flexibility sweeps).
    pub fn scale_length_scales(&self, mult: f64) -> KernelSpec {
        let mut spec = self.clone();
        for t in &mut spec.terms {
            if let KernelTerm::SquaredExponential { log_length_scales, .. } = t {
                for ls in log_length_scales.iter_mut() {
                    *ls += mult.ln();
                }
            }
        }
        spec
    }
}

/// Build the n x n covariance matrix for covariates `x`, adding enough jitter
/// that a Cholesky factorization succeeds. The jitter starts at
/// `spec.jitter * mean(diag)` and is escalated by factors of 10 up to 1e-4
/// relative before failing.
pub fn build_covariance(x: &DMatrix<f64>, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite covariates".into()));
    }
    spec.validate(x.ncols())?;
    let n = x.nrows();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..x.ncols()).map(|c| x[(i, c)]).collect())
        .collect();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = spec.eval(&rows[i], &rows[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    let mean_diag = k.diagonal().mean().max(f64::MIN_POSITIVE);
    let mut jitter = spec.jitter * mean_diag;
    let max_jitter = 1e-4 * mean_diag;
    loop {
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if Cholesky::new(kj.clone()).is_some() {
            return Ok(kj);
        }
        jitter *= 10.0;
        if jitter > max_jitter {
            return Err(Error::NotPositiveDefinite { jitter });
        }
    }
}
