//! Importance-weight diagnostics: effective sample size and Pareto-smoothed
//! importance sampling (generalized Pareto tail fit via the empirical-Bayes
//! profile posterior, tail weights replaced by expected order statistics).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::log_sum_exp;

/// S_eff = 1 / sum w_s^2 for normalized weights; in [1, S], equal to S only
/// for uniform weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    if sum_sq <= 0.0 {
        return 0.0;
    }
    1.0 / sum_sq
}

/// Outcome of Pareto smoothing raw importance weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsisResult {
    /// Smoothed log-weights on the same (unnormalized) scale as the input.
    pub log_weights: Vec<f64>,
    /// Fitted generalized Pareto shape; `None` when the sample was too small
    /// for a tail fit and the weights were passed through.
    pub khat: Option<f64>,
    /// Number of tail weights replaced.
    pub m: usize,
    pub warnings: Vec<String>,
}

pub const KHAT_WARN_THRESHOLD: f64 = 0.7;
const MIN_SAMPLES_FOR_FIT: usize = 25;

/// Pareto-smooth raw log-weights. The M = min(S/5, 3 sqrt(S)) largest weights
/// are modelled with a generalized Pareto distribution over the M+1-th weight
/// and replaced by the expected order statistics of the fit, capped at the
/// maximum raw weight.
pub fn psis_smooth(raw_log_weights: &[f64]) -> Result<PsisResult> {
    let s = raw_log_weights.len();
    if s == 0 {
        return Err(Error::InvalidInput("no weights".into()));
    }
    if raw_log_weights.iter().any(|w| w.is_nan()) {
        return Err(Error::InvalidInput("NaN log-weight".into()));
    }
    if s < MIN_SAMPLES_FOR_FIT {
        return Ok(PsisResult {
            log_weights: raw_log_weights.to_vec(),
            khat: None,
            m: 0,
            warnings: vec![format!(
                "only {s} weights (< {MIN_SAMPLES_FOR_FIT}): tail not fitted, weights passed \
                 through"
            )],
        });
    }
    let m = ((s as f64 / 5.0).min(3.0 * (s as f64).sqrt()).round() as usize).clamp(1, s - 1);
    // work on the linear scale relative to the max weight
    let max_lw = raw_log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = raw_log_weights.iter().map(|lw| (lw - max_lw).exp()).collect();
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| w[a].partial_cmp(&w[b]).unwrap());
    let tail_idx = &order[s - m..];
    let cutoff = w[order[s - m - 1]];
    let exceedances: Vec<f64> = tail_idx.iter().map(|&i| w[i] - cutoff).collect();
    if exceedances.last().map(|&e| e <= 0.0).unwrap_or(true) {
        // flat tail: nothing to smooth
        return Ok(PsisResult {
            log_weights: raw_log_weights.to_vec(),
            khat: Some(0.0),
            m: 0,
            warnings: Vec::new(),
        });
    }
    let (khat, sigma) = gpd_fit(&exceedances, s);
    let mut log_weights = raw_log_weights.to_vec();
    let max_w = w[order[s - 1]];
    for (j, &i) in tail_idx.iter().enumerate() {
        // expected order statistic at plotting position (j + 1/2) / m
        let p = (j as f64 + 0.5) / m as f64;
        let q = gpd_quantile(p, khat, sigma);
        let smoothed = (cutoff + q).min(max_w);
        log_weights[i] = smoothed.ln() + max_lw;
    }
    let mut warnings = Vec::new();
    if khat > KHAT_WARN_THRESHOLD {
        warnings.push(format!(
            "Pareto shape khat = {khat:.2} exceeds {KHAT_WARN_THRESHOLD}: importance weights \
             are unreliable"
        ));
    }
    Ok(PsisResult { log_weights, khat: Some(khat), m, warnings })
}

/// Empirical-Bayes generalized Pareto fit to exceedances (ascending not
/// required). Returns (khat, sigma); khat is regularized toward 0.5 with a
/// weight-10 pseudo-sample, which stabilizes small tails.
fn gpd_fit(x: &[f64], n_total: usize) -> (f64, f64) {
    let mut x = x.to_vec();
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = x.len();
    let x_max = x[n - 1];
    let quart = x[(n as f64 / 4.0 + 0.5).floor() as usize - 1].max(f64::MIN_POSITIVE);
    let grid = 30 + (n as f64).sqrt().floor() as usize;
    let mut thetas = Vec::with_capacity(grid);
    let mut logliks = Vec::with_capacity(grid);
    // theta = -k/sigma; heavy tails (k > 0) correspond to negative theta
    for j in 1..=grid {
        let theta =
            1.0 / x_max + (1.0 - (grid as f64 / (j as f64 - 0.5)).sqrt()) / (3.0 * quart);
        let k = x.iter().map(|&xi| (-theta * xi).ln_1p()).sum::<f64>() / n as f64;
        // profile log-likelihood of theta
        let ll = n as f64 * ((-theta / k).ln() - k - 1.0);
        if ll.is_finite() {
            thetas.push(theta);
            logliks.push(ll);
        }
    }
    if thetas.is_empty() {
        return (0.5, x_max.max(1e-300));
    }
    let lse = log_sum_exp(&logliks);
    let theta_hat: f64 = thetas
        .iter()
        .zip(&logliks)
        .map(|(t, l)| t * (l - lse).exp())
        .sum();
    let k = x.iter().map(|&xi| (-theta_hat * xi).ln_1p()).sum::<f64>() / n as f64;
    let sigma = if theta_hat != 0.0 { -k / theta_hat } else { x_max };
    // shrink toward 0.5 (pseudo-observations), stronger for small tails
    let khat = (n as f64 * k + 5.0) / (n as f64 + 10.0);
    let _ = n_total;
    (khat, sigma.abs().max(1e-300))
}

/// Quantile of GPD(k, sigma) with location 0: sigma/k ((1-p)^{-k} - 1).
fn gpd_quantile(p: f64, k: f64, sigma: f64) -> f64 {
    if k.abs() < 1e-12 {
        -sigma * (1.0 - p).ln()
    } else {
        sigma / k * ((1.0 - p).powf(-k) - 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ess_trivial_cases() {
        let uniform = vec![0.01; 100];
        assert_relative_eq!(effective_sample_size(&uniform), 100.0, epsilon = 1e-9);
        let mut degenerate = vec![0.0; 50];
        degenerate[7] = 1.0;
        assert_relative_eq!(effective_sample_size(&degenerate), 1.0, epsilon = 1e-12);
        let two = vec![0.5, 0.5, 0.0, 0.0];
        assert_relative_eq!(effective_sample_size(&two), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn small_sample_passthrough() {
        let lw: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        let r = psis_smooth(&lw).unwrap();
        assert!(r.khat.is_none());
        assert_eq!(r.log_weights, lw);
        assert_eq!(r.m, 0);
    }

    #[test]
    fn recovers_synthetic_pareto_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (k_true, sigma) = (0.5, 1.0);
        // linear-scale weights that are i.i.d. GPD(k=0.5) draws; exceedances
        // over any threshold are again GPD with the same shape
        let lw: Vec<f64> = (0..2000)
            .map(|_| {
                let u: f64 = rng.gen_range(0.0..1.0);
                let x: f64 = sigma / k_true * ((1.0 - u).powf(-k_true) - 1.0);
                x.ln()
            })
            .collect();
        let r = psis_smooth(&lw).unwrap();
        let khat = r.khat.unwrap();
        assert!((khat - k_true).abs() < 0.1, "khat = {khat}");
    }

    #[test]
    fn near_uniform_weights_are_light_tailed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lw: Vec<f64> = (0..400).map(|_| rng.gen_range(-0.01..0.01)).collect();
        let r = psis_smooth(&lw).unwrap();
        assert!(r.khat.unwrap() < 0.5);
        assert!(r.warnings.is_empty());
        for (a, b) in lw.iter().zip(&r.log_weights) {
            assert!((a - b).abs() < 0.05);
        }
    }

    #[test]
    fn dominant_weight_triggers_khat_warning() {
        let mut lw = vec![0.0; 100];
        // one sample carries essentially all the mass; a few mid-size weights
        // give the fitter a tail to work with
        for (i, v) in lw.iter_mut().enumerate() {
            *v = (i as f64) * 0.05;
        }
        lw[99] = 40.0;
        let r = psis_smooth(&lw).unwrap();
        assert!(r.khat.unwrap() > 0.7, "khat = {:?}", r.khat);
        assert!(!r.warnings.is_empty());
    }

    #[test]
    fn smoothing_caps_at_max_and_preserves_non_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let lw: Vec<f64> = (0..500).map(|_| rng.gen_range(0.0..1.0f64).powi(4) * 8.0).collect();
        let r = psis_smooth(&lw).unwrap();
        let max_raw = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let max_smooth = r.log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(max_smooth <= max_raw + 1e-12);
        // exactly m weights changed
        let changed = lw
            .iter()
            .zip(&r.log_weights)
            .filter(|(a, b)| (*a - *b).abs() > 1e-12)
            .count();
        assert!(changed <= r.m);
        // shift invariance of khat
        let shifted: Vec<f64> = lw.iter().map(|v| v + 123.0).collect();
        let r2 = psis_smooth(&shifted).unwrap();
        assert_relative_eq!(r.khat.unwrap(), r2.khat.unwrap(), epsilon = 1e-10);
    }
}
