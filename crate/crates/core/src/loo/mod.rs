//! Leave-one-out predictive estimators.
//!
//! All estimators produce a [`LooReport`] with per-point log predictive
//! densities; [`brute_force_loo`] refits the model n times and serves as the
//! ground-truth oracle the fast estimators are compared against.

mod brute;
mod estimators;
mod gaussian;

pub use brute::{brute_force_loo, brute_force_loo_subset, FitMethod};
pub use estimators::{
    cumulant_series_loo, ep_loo, la_loo, posterior_marginals, q_loo, tilted_marginals,
    tq_loo, tq_loo_with_truncation_level, training_lpd, waic, CavityRoute, CumulantSeries,
    Marginal, TruncationConfig, WaicVariant,
};
pub use gaussian::{gaussian_exact_loo, GaussianLooResult};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// A point whose estimate could not be produced.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PointFailure {
    pub index: usize,
    pub reason: String,
}

/// Per-point leave-one-out results for one estimation method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LooReport {
    pub schema_version: u32,
    pub method: String,
    /// log p(y_i | x_i, D_{-i}); `None` where the point failed.
    pub lpd: Vec<Option<f64>>,
    /// Sum of the available lpd values (n x LOO).
    pub sum_lpd: f64,
    /// Conditional predictive ordinate exp(lpd_i).
    pub cpo: Vec<Option<f64>>,
    /// Probability integral transform values, when the likelihood admits them.
    pub pit: Option<Vec<Option<f64>>>,
    /// Effective number of parameters sum_i (training lpd_i - loo lpd_i),
    /// when training densities were available.
    pub p_eff: Option<f64>,
    /// Points whose value is present but numerically suspect.
    pub unstable: Vec<usize>,
    pub failures: Vec<PointFailure>,
    pub warnings: Vec<String>,
}

impl LooReport {
    pub fn new(method: impl Into<String>, lpd: Vec<Option<f64>>) -> Self {
        let sum_lpd = lpd.iter().flatten().sum();
        let cpo = lpd.iter().map(|v| v.map(f64::exp)).collect();
        LooReport {
            schema_version: REPORT_SCHEMA_VERSION,
            method: method.into(),
            lpd,
            sum_lpd,
            cpo,
            pit: None,
            p_eff: None,
            unstable: Vec::new(),
            failures: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.lpd.len()
    }

    /// Attach training predictive densities, computing p_eff.
    pub fn with_training_lpd(mut self, training: &[f64]) -> Self {
        let p_eff: f64 = training
            .iter()
            .zip(&self.lpd)
            .filter_map(|(t, l)| l.map(|l| t - l))
            .sum();
        self.p_eff = Some(p_eff);
        if p_eff < 0.0 {
            self.warnings.push(format!(
                "negative effective number of parameters ({p_eff:.3}); estimator may be \
                 anti-conservative"
            ));
        }
        self
    }
}

/// Difference between a fast estimator and a reference (usually brute force).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonStats {
    /// Sum of per-point deltas.
    pub bias: f64,
    /// sqrt of sum_i (delta_i - bias/n)^2 over the n paired points. This is
    /// the spread of the centred deltas; the literal textbook variant that
    /// subtracts the full sum from each term inflates the value by ~n and is
    /// deliberately not used.
    pub std: f64,
    /// (index, candidate lpd - reference lpd) for every point present in both.
    pub deltas: Vec<(usize, f64)>,
}

/// Compare per-point estimates; points failing in either report are excluded
/// pairwise.
pub fn compare(reference: &LooReport, candidate: &LooReport) -> Result<ComparisonStats> {
    if reference.n() != candidate.n() {
        return Err(Error::InvalidInput(format!(
            "reports cover {} and {} points",
            reference.n(),
            candidate.n()
        )));
    }
    let deltas: Vec<(usize, f64)> = reference
        .lpd
        .iter()
        .zip(&candidate.lpd)
        .enumerate()
        .filter_map(|(i, (r, c))| match (r, c) {
            (Some(r), Some(c)) => Some((i, c - r)),
            _ => None,
        })
        .collect();
    if deltas.is_empty() {
        return Err(Error::InvalidInput("no points present in both reports".into()));
    }
    let n = deltas.len() as f64;
    let bias: f64 = deltas.iter().map(|(_, d)| d).sum();
    let centred_ss: f64 = deltas.iter().map(|(_, d)| (d - bias / n).powi(2)).sum();
    Ok(ComparisonStats { bias, std: centred_ss.sqrt(), deltas })
}

/// Reliability warnings from the effective number of parameters.
///
/// Cavity-based estimators (LA-LOO, EP-LOO) stay reliable at higher model
/// flexibility than the posterior-marginal ones, so the relative-p_eff rule
/// only fires for the latter; a per-point note fires for any method once a
/// single observation carries more than 0.2 effective parameters.
pub fn diagnostics(report: &LooReport, training_lpd: &[f64]) -> Result<Vec<String>> {
    if training_lpd.len() != report.n() {
        return Err(Error::InvalidInput("training lpd length mismatch".into()));
    }
    let mut warnings = Vec::new();
    let n = report.n() as f64;
    let mut p_eff = 0.0;
    let mut worst: Option<(usize, f64)> = None;
    for (i, (t, l)) in training_lpd.iter().zip(&report.lpd).enumerate() {
        if let Some(l) = l {
            let pi = t - l;
            p_eff += pi;
            if pi > 0.2 && worst.map(|(_, w)| pi > w).unwrap_or(true) {
                worst = Some((i, pi));
            }
        }
    }
    let rel = p_eff / n;
    let cavity_based = matches!(report.method.as_str(), "la_loo" | "ep_loo");
    if !cavity_based && rel > 0.05 {
        warnings.push(format!(
            "method {} is unreliable at relative effective parameters {:.3} (> 0.05); \
             prefer a cavity-based estimator or brute force",
            report.method, rel
        ));
    } else if !cavity_based && rel > 0.02 {
        warnings.push(format!(
            "relative effective parameters {:.3} in the 0.02-0.05 range; method {} may \
             start to degrade",
            rel, report.method
        ));
    }
    if let Some((i, pi)) = worst {
        warnings.push(format!(
            "point {i} has effective parameters {pi:.3} (> 0.2); its LOO estimate is \
             likely biased for all fast methods"
        ));
    }
    Ok(warnings)
}
