//! Parallel expectation propagation with damping.
//!
//! All sites are updated from the same posterior, the update is damped in the
//! natural parameters, and the damping factor is halved whenever the proposed
//! posterior refresh loses positive definiteness. Heavy-tailed likelihoods run
//! in a robust mode that permits negative site precisions and floors cavity
//! precisions instead of failing.

use super::{posterior_from_sites, CavityDistribution, GaussianPosterior, SiteParams};
use crate::error::{Error, Result};
use crate::model::{Likelihood, Obs};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct EpConfig {
    pub max_iter: usize,
    /// Convergence threshold on the largest undamped site-parameter change.
    pub tol: f64,
    pub initial_damping: f64,
    /// Allow negative site precisions and floor non-positive cavity
    /// precisions. `None` selects automatically from log-concavity.
    pub robust: Option<bool>,
    /// Warm-start site natural parameters (tau, nu), e.g. the full-data sites
    /// when refitting leave-one-out folds.
    pub init: Option<(Vec<f64>, Vec<f64>)>,
}

impl Default for EpConfig {
    fn default() -> Self {
        EpConfig { max_iter: 200, tol: 1e-6, initial_damping: 0.8, robust: None, init: None }
    }
}

/// Result of an EP fit.
#[derive(Debug, Clone)]
pub struct EPState {
    pub sites: SiteParams,
    pub posterior: GaussianPosterior,
    /// Leave-one-out cavities computed from the converged posterior; `None`
    /// where the cavity precision was non-positive.
    pub cavities: Vec<Option<CavityDistribution>>,
    /// log int p(y_i|f) q_{-i}(f) df for each available cavity.
    pub tilted_log_z0: Vec<Option<f64>>,
    /// Indices whose cavity failed at least once during the final sweep.
    pub cavity_failures: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// Damping factor in effect when the iteration stopped.
    pub final_damping: f64,
}

/// log int N(f|m, v) exp(nu f - tau f^2 / 2) df; finite for tau >= 0 and for
/// moderately negative tau (1 + tau v > 0).
fn log_unnormalized_site_mass(m: f64, v: f64, tau: f64, nu: f64) -> f64 {
    let a = 1.0 + tau * v;
    let b = m / v + nu;
    -0.5 * a.ln() + b * b * v / (2.0 * a) - m * m / (2.0 * v)
}

const MIN_CAVITY_PRECISION: f64 = 1e-8;

pub fn ep_fit(
    k: &DMatrix<f64>,
    likelihood: &Likelihood,
    obs: &[Obs],
    config: &EpConfig,
) -> Result<EPState> {
    let n = k.nrows();
    if obs.len() != n {
        return Err(Error::InvalidInput(format!(
            "covariance is {n}x{n} but there are {} observations",
            obs.len()
        )));
    }
    let robust = config.robust.unwrap_or(!likelihood.is_log_concave());

    let (mut tau, mut nu) = match &config.init {
        Some((t, v)) if t.len() == n && v.len() == n => (t.clone(), v.clone()),
        Some(_) => {
            return Err(Error::InvalidInput("warm-start site vectors have wrong length".into()))
        }
        None => (vec![0.0; n], vec![0.0; n]),
    };
    // last successful tilted normalizer per site (for the evidence)
    let mut log_zhat = vec![f64::NAN; n];
    let (mut mu, mut sigma) = match posterior_from_sites(k, &tau, &nu) {
        Ok(ms) => ms,
        Err(_) if config.init.is_some() => {
            // unusable warm start: fall back to the prior
            tau = vec![0.0; n];
            nu = vec![0.0; n];
            posterior_from_sites(k, &tau, &nu)?
        }
        Err(e) => return Err(e),
    };

    let mut delta = config.initial_damping;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iter {
        iterations += 1;
        // propose full updates for every site from the shared posterior
        let mut tau_prop = tau.clone();
        let mut nu_prop = nu.clone();
        for i in 0..n {
            let s_ii = sigma[(i, i)];
            let mut tau_cav = 1.0 / s_ii - tau[i];
            if tau_cav <= MIN_CAVITY_PRECISION {
                if robust {
                    tau_cav = MIN_CAVITY_PRECISION;
                } else {
                    continue; // keep the old site this sweep
                }
            }
            let nu_cav = mu[i] / s_ii - nu[i];
            let (m_cav, v_cav) = (nu_cav / tau_cav, 1.0 / tau_cav);
            let Ok(tm) = likelihood.tilted_moments(&obs[i], m_cav, v_cav) else {
                continue;
            };
            if !(tm.var > 0.0) || !tm.mean.is_finite() {
                continue;
            }
            let mut tau_new = 1.0 / tm.var - tau_cav;
            let mut nu_new = tm.mean / tm.var - nu_cav;
            if !robust && tau_new < 0.0 {
                // quadrature noise around a flat site; clamp to "no curvature"
                tau_new = 0.0;
                nu_new = 0.0;
            }
            tau_prop[i] = tau_new;
            nu_prop[i] = nu_new;
            log_zhat[i] = tm.log_z0;
        }

        let change = (0..n)
            .map(|i| (tau_prop[i] - tau[i]).abs().max((nu_prop[i] - nu[i]).abs()))
            .fold(0.0, f64::max);
        if change < config.tol {
            converged = true;
            break;
        }

        // damped acceptance, halving the damping until the refresh is SPD
        let mut accepted = false;
        while delta >= 1e-3 {
            let tau_d: Vec<f64> =
                (0..n).map(|i| tau[i] + delta * (tau_prop[i] - tau[i])).collect();
            let nu_d: Vec<f64> = (0..n).map(|i| nu[i] + delta * (nu_prop[i] - nu[i])).collect();
            match posterior_from_sites(k, &tau_d, &nu_d) {
                Ok((mu_new, sigma_new)) => {
                    tau = tau_d;
                    nu = nu_d;
                    mu = mu_new;
                    sigma = sigma_new;
                    accepted = true;
                    break;
                }
                Err(_) => delta *= 0.5,
            }
        }
        if !accepted {
            return Err(Error::NonConvergence {
                method: "ep".into(),
                iterations,
                detail: "posterior refresh failed at the minimum damping".into(),
            });
        }
    }

    if !converged {
        return Err(Error::NonConvergence {
            method: "ep".into(),
            iterations,
            detail: format!("site parameters still moving after {iterations} sweeps"),
        });
    }

    // final cavities and tilted normalizers from the converged posterior
    let mut cavities: Vec<Option<CavityDistribution>> = vec![None; n];
    let mut tilted_log_z0: Vec<Option<f64>> = vec![None; n];
    let mut cavity_failures = Vec::new();
    for i in 0..n {
        match super::cavity_remove(mu[i], sigma[(i, i)], tau[i], nu[i]) {
            Ok(c) => {
                cavities[i] = Some(c);
                if let Ok(tm) = likelihood.tilted_moments(&obs[i], c.mean, c.var) {
                    tilted_log_z0[i] = Some(tm.log_z0);
                    log_zhat[i] = tm.log_z0;
                }
            }
            Err(_) => cavity_failures.push(i),
        }
    }

    // evidence: log Z = -1/2 log|I + K T| + 1/2 nu^T mu
    //                   + sum_i [log Zhat_i - log int q_{-i} t̃_i]
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = tau[i] * k[(i, j)];
        }
        m[(i, i)] += 1.0;
    }
    let log_det = super::log_det_lu(m)?;
    let nu_v = DVector::from_column_slice(&nu);
    let mut log_marginal = -0.5 * log_det + 0.5 * nu_v.dot(&mu);
    for i in 0..n {
        if let Some(c) = cavities[i] {
            if log_zhat[i].is_finite() {
                log_marginal +=
                    log_zhat[i] - log_unnormalized_site_mass(c.mean, c.var, tau[i], nu[i]);
            }
        }
    }

    Ok(EPState {
        sites: SiteParams { log_z: log_zhat, tau, nu },
        posterior: GaussianPosterior { mean: mu, cov: sigma, log_marginal },
        cavities,
        tilted_log_z0,
        cavity_failures,
        iterations,
        converged,
        final_damping: delta,
    })
}
