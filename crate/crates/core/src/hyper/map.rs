//! Type-II MAP: maximize the approximate log marginal likelihood plus a
//! weakly-informative prior over the unconstrained hyperparameters with a
//! derivative-free coordinate-wise adaptive pattern search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{ep_fit, laplace_fit, EpConfig, LaplaceConfig};
use crate::loo::FitMethod;
use crate::math::log_norm_pdf;
use crate::model::{data_observations, Dataset, GlvmModel};

/// Independent normal prior on each unconstrained (log-scale) hyperparameter,
/// i.e. log-normal on the positive scale.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HyperPrior {
    pub mean: f64,
    pub sd: f64,
}

impl Default for HyperPrior {
    fn default() -> Self {
        HyperPrior { mean: 0.0, sd: 3.0 }
    }
}

impl HyperPrior {
    pub fn log_density(&self, params: &[f64]) -> f64 {
        params
            .iter()
            .map(|&p| log_norm_pdf(p, self.mean, self.sd * self.sd))
            .sum()
    }
}

/// log p(y|X, params) + log p(params): the MAP objective. Returns an error if
/// the latent fit fails at these hyperparameters.
pub fn log_posterior(
    data: &Dataset,
    model: &GlvmModel,
    params: &[f64],
    method: FitMethod,
    prior: &HyperPrior,
) -> Result<f64> {
    let m = model.with_params(params)?;
    let k = m.covariance(&data.x)?;
    let obs = data_observations(data);
    let evidence = match method {
        FitMethod::Laplace => {
            laplace_fit(&k, &m.likelihood, &obs, &LaplaceConfig::default())?
                .posterior
                .log_marginal
        }
        FitMethod::Ep => {
            ep_fit(&k, &m.likelihood, &obs, &EpConfig::default())?.posterior.log_marginal
        }
    };
    Ok(evidence + prior.log_density(params))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapConfig {
    /// Budget of objective evaluations.
    pub max_evals: usize,
    /// Stop once every coordinate step has shrunk below this.
    pub step_tol: f64,
    /// Initial coordinate step on the unconstrained scale.
    pub init_step: f64,
    pub prior: HyperPrior,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig { max_evals: 600, step_tol: 1e-6, init_step: 0.5, prior: HyperPrior::default() }
    }
}

#[derive(Debug, Clone)]
pub struct MapResult {
    pub model: GlvmModel,
    pub params: Vec<f64>,
    pub objective: f64,
    pub evaluations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

/// Coordinate-wise adaptive pattern search: each coordinate keeps its own
/// step, doubled after a successful move and halved otherwise. The objective
/// never decreases across accepted steps; if the evaluation budget runs out
/// first, the best point found is returned with a warning.
pub fn map_optimize(
    data: &Dataset,
    model: &GlvmModel,
    method: FitMethod,
    cfg: &MapConfig,
) -> Result<MapResult> {
    let mut params = model.params();
    let p = params.len();
    if p == 0 {
        return Err(Error::InvalidInput("model has no hyperparameters".into()));
    }
    let mut evals = 0usize;
    let eval = |params: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        log_posterior(data, model, params, method, &cfg.prior).unwrap_or(f64::NEG_INFINITY)
    };
    let mut best = eval(&params, &mut evals);
    if !best.is_finite() {
        return Err(Error::NumericalFailure(
            "MAP objective is not finite at the initial hyperparameters".into(),
        ));
    }
    let mut steps = vec![cfg.init_step; p];
    let mut converged = false;
    'outer: while evals < cfg.max_evals {
        let mut improved = false;
        for j in 0..p {
            if steps[j] < cfg.step_tol {
                continue;
            }
            let mut moved = false;
            for dir in [1.0, -1.0] {
                if evals >= cfg.max_evals {
                    break 'outer;
                }
                let mut cand = params.clone();
                cand[j] += dir * steps[j];
                let v = eval(&cand, &mut evals);
                if v > best {
                    params = cand;
                    best = v;
                    moved = true;
                    break;
                }
            }
            if moved {
                steps[j] *= 2.0;
                improved = true;
            } else {
                steps[j] *= 0.5;
            }
        }
        if !improved && steps.iter().all(|&s| s < cfg.step_tol) {
            converged = true;
            break;
        }
    }
    let mut warnings = Vec::new();
    if !converged {
        warnings.push(format!(
            "MAP search stopped after {evals} evaluations before all steps shrank below \
             {:.0e}; returning the best point found",
            cfg.step_tol
        ));
    }
    Ok(MapResult {
        model: model.with_params(&params)?,
        params,
        objective: best,
        evaluations: evals,
        converged,
        warnings,
    })
}
