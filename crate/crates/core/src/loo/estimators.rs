//! Fast LOO estimators that reuse a single full-data fit: cavity-based
//! (LA-LOO, EP-LOO), posterior-marginal quadrature (Q-LOO, TQ-LOO), and the
//! WAIC / cumulant-expansion family.

use serde::{Deserialize, Serialize};

use super::{LooReport, PointFailure};
use crate::error::{Error, Result};
use crate::inference::{cavity_remove, CavityDistribution, EPState, GaussianPosterior, LaplaceState};
use crate::model::{Likelihood, Obs};
use crate::quadrature::{integrate_with_fallback, QuadratureGrid};

/// A per-point Gaussian summary (mean, variance) of the latent posterior used
/// by the marginal-based estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Marginal {
    pub mean: f64,
    pub var: f64,
}

/// Gaussian marginals read straight off the joint approximation ("-G").
pub fn posterior_marginals(post: &GaussianPosterior) -> Vec<Marginal> {
    (0..post.n())
        .map(|i| Marginal { mean: post.mean[i], var: post.marginal_var(i) })
        .collect()
}

/// Tilted marginals ("-L"): moments of q_{-i}(f) p(y_i|f), a cheap marginal
/// improvement over the joint Gaussian. Falls back to the Gaussian marginal
/// where a cavity is unavailable.
pub fn tilted_marginals(
    cavities: &[Option<CavityDistribution>],
    post: &GaussianPosterior,
    likelihood: &Likelihood,
    obs: &[Obs],
) -> Result<Vec<Marginal>> {
    let mut out = Vec::with_capacity(obs.len());
    for i in 0..obs.len() {
        match cavities[i] {
            Some(c) => {
                let tm = likelihood.tilted_moments(&obs[i], c.mean, c.var)?;
                out.push(Marginal { mean: tm.mean, var: tm.var });
            }
            None => out.push(Marginal { mean: post.mean[i], var: post.marginal_var(i) }),
        }
    }
    Ok(out)
}

/// Training log predictive densities log int p(y_i|f) q(f_i) df_i.
pub fn training_lpd(
    marginals: &[Marginal],
    likelihood: &Likelihood,
    obs: &[Obs],
) -> Result<Vec<f64>> {
    marginals
        .iter()
        .zip(obs)
        .map(|(m, o)| Ok(likelihood.tilted_moments(o, m.mean, m.var)?.log_z0))
        .collect()
}

pub(crate) fn pit_vector(
    likelihood: &Likelihood,
    obs: &[Obs],
    predictive: &[Option<(f64, f64)>],
) -> Option<Vec<Option<f64>>> {
    if likelihood.is_discrete() {
        return None;
    }
    let pit: Vec<Option<f64>> = obs
        .iter()
        .zip(predictive)
        .map(|(o, p)| p.and_then(|(m, v)| likelihood.predictive_cdf(o.y, m, v).ok()))
        .collect();
    Some(pit)
}

/// EP-LOO: the per-point predictive density is the tilted zeroth moment
/// already produced by the EP iteration; nothing is recomputed.
pub fn ep_loo(state: &EPState, likelihood: &Likelihood, obs: &[Obs]) -> Result<LooReport> {
    let n = obs.len();
    if state.posterior.n() != n {
        return Err(Error::InvalidInput("EP state does not match observations".into()));
    }
    let lpd: Vec<Option<f64>> = state.tilted_log_z0.clone();
    let mut report = LooReport::new("ep_loo", lpd);
    for i in 0..n {
        if state.tilted_log_z0[i].is_none() {
            report
                .failures
                .push(PointFailure { index: i, reason: "cavity failure".into() });
        }
    }
    let predictive: Vec<Option<(f64, f64)>> =
        state.cavities.iter().map(|c| c.map(|c| (c.mean, c.var))).collect();
    report.pit = pit_vector(likelihood, obs, &predictive);
    let tr = training_lpd(&posterior_marginals(&state.posterior), likelihood, obs)?;
    Ok(report.with_training_lpd(&tr))
}

/// How the LA-LOO cavity is formed; the two routes are algebraically
/// identical and kept separate as a cross-check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CavityRoute {
    /// Divide the Laplace site out of the posterior marginal.
    SiteRemoval,
    /// Linear-response form: v_{-i} = (1/Sigma_ii - W_i)^{-1},
    /// m_{-i} = f_i - v_{-i} g_i.
    LinearResponse,
}

/// LA-LOO: cavity from the Laplace fit, predictive density by quadrature of
/// the likelihood against it.
pub fn la_loo(
    state: &LaplaceState,
    likelihood: &Likelihood,
    obs: &[Obs],
    route: CavityRoute,
) -> Result<LooReport> {
    let n = obs.len();
    if state.posterior.n() != n {
        return Err(Error::InvalidInput("Laplace state does not match observations".into()));
    }
    let mut lpd: Vec<Option<f64>> = vec![None; n];
    let mut predictive: Vec<Option<(f64, f64)>> = vec![None; n];
    let mut failures = Vec::new();
    let mut unstable = Vec::new();
    for i in 0..n {
        let s_ii = state.posterior.marginal_var(i);
        let cavity = match route {
            CavityRoute::SiteRemoval => {
                cavity_remove(state.posterior.mean[i], s_ii, state.sites.tau[i], state.sites.nu[i])
            }
            CavityRoute::LinearResponse => {
                // the true curvature, even when negative, keeps this route
                // identical to dividing the site out of the marginal
                let tau_cav = 1.0 / s_ii - state.curvature[i];
                if tau_cav > 0.0 {
                    let v = 1.0 / tau_cav;
                    Ok(CavityDistribution { mean: state.mode[i] - v * state.grad[i], var: v })
                } else {
                    Err(Error::CavityFailure {
                        index: i,
                        detail: format!("non-positive cavity precision {tau_cav:.3e}"),
                    })
                }
            }
        };
        match cavity {
            Ok(c) => {
                match likelihood.tilted_moments(&obs[i], c.mean, c.var) {
                    Ok(tm) => lpd[i] = Some(tm.log_z0),
                    Err(e) => {
                        failures.push(PointFailure { index: i, reason: e.to_string() });
                        continue;
                    }
                }
                predictive[i] = Some((c.mean, c.var));
                if state.improper_sites.contains(&i) {
                    // non-positive curvature at the mode: the cavity comes
                    // from an improper site and may over-widen
                    unstable.push(i);
                }
            }
            Err(e) => failures.push(PointFailure { index: i, reason: e.to_string() }),
        }
    }
    let mut report = LooReport::new("la_loo", lpd);
    report.failures = failures;
    report.unstable = unstable;
    report.pit = pit_vector(likelihood, obs, &predictive);
    let tr = training_lpd(&posterior_marginals(&state.posterior), likelihood, obs)?;
    Ok(report.with_training_lpd(&tr))
}

/// Q-LOO: lpd_i = -log int q(f_i) / p(y_i|f_i) df_i.
///
/// The reciprocal-likelihood integrand can diverge (Gaussian likelihood with
/// marginal variance above the noise variance, probit in general); such
/// points keep their value but are flagged unstable.
pub fn q_loo(
    marginals: &[Marginal],
    likelihood: &Likelihood,
    obs: &[Obs],
    nodes: usize,
) -> Result<LooReport> {
    let n = obs.len();
    if marginals.len() != n {
        return Err(Error::InvalidInput("marginals do not match observations".into()));
    }
    let mut lpd: Vec<Option<f64>> = vec![None; n];
    let mut failures = Vec::new();
    let mut unstable = Vec::new();
    for i in 0..n {
        let m = marginals[i];
        let known_divergent = !likelihood.ratio_quadrature_stable(m.var);
        let res = integrate_with_fallback(m.mean, m.var, nodes, |f| {
            (-likelihood.loglik_value(&obs[i], f)).exp()
        });
        match res {
            Ok(integral) if integral.value > 0.0 && integral.value.is_finite() => {
                lpd[i] = Some(-integral.value.ln());
                if integral.unstable || known_divergent {
                    unstable.push(i);
                }
            }
            Ok(_) => failures.push(PointFailure {
                index: i,
                reason: "non-positive ratio integral".into(),
            }),
            Err(e) => failures.push(PointFailure { index: i, reason: e.to_string() }),
        }
    }
    let mut report = LooReport::new("q_loo", lpd);
    report.failures = failures;
    report.unstable = unstable;
    let tr = training_lpd(marginals, likelihood, obs)?;
    Ok(report.with_training_lpd(&tr))
}

/// Truncation settings for [`tq_loo`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TruncationConfig {
    /// Target mass of the truncated region; the truncation level is
    /// c = c0 / int_a^b q/p df.
    pub c0: f64,
    /// Integration half-width (a, b) = mean +- half_width * sd.
    pub half_width: f64,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        TruncationConfig { c0: 1e-4, half_width: 6.0 }
    }
}

impl TruncationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c0 > 0.0) {
            return Err(Error::InvalidInput("c0 must be positive".into()));
        }
        if !(self.half_width >= 1.0) {
            return Err(Error::InvalidInput("half-width must be at least 1 sd".into()));
        }
        Ok(())
    }
}

/// TQ-LOO with an explicit truncation level `c` per point:
/// lpd_i = log[ int p q w df / int q w df ] with w(f) = 1/max(p(y|f), c).
/// `c = 0` recovers Q-LOO; `c` above max_f p(y|f) recovers the posterior
/// predictive density.
pub fn tq_loo_with_truncation_level(
    marginals: &[Marginal],
    likelihood: &Likelihood,
    obs: &[Obs],
    nodes: usize,
    c_levels: &[f64],
) -> Result<LooReport> {
    let n = obs.len();
    if marginals.len() != n || c_levels.len() != n {
        return Err(Error::InvalidInput("marginals do not match observations".into()));
    }
    let mut lpd: Vec<Option<f64>> = vec![None; n];
    let mut failures = Vec::new();
    for i in 0..n {
        let m = marginals[i];
        let c = c_levels[i];
        if !(c >= 0.0) {
            return Err(Error::InvalidInput("truncation level must be non-negative".into()));
        }
        let grid = QuadratureGrid::adapt(m.mean, m.var, nodes)?;
        let w = |f: f64| 1.0 / likelihood.loglik_value(&obs[i], f).exp().max(c);
        let num = grid.integrate(|f| likelihood.loglik_value(&obs[i], f).exp() * w(f))?;
        let den = grid.integrate(&w)?;
        if num.value > 0.0 && den.value > 0.0 && num.value.is_finite() && den.value.is_finite() {
            lpd[i] = Some(num.value.ln() - den.value.ln());
        } else {
            failures.push(PointFailure { index: i, reason: "degenerate truncated integral".into() });
        }
    }
    let mut report = LooReport::new("tq_loo", lpd);
    report.failures = failures;
    let tr = training_lpd(marginals, likelihood, obs)?;
    Ok(report.with_training_lpd(&tr))
}

/// TQ-LOO: Q-LOO stabilized by truncating the importance ratio 1/p(y_i|f) at
/// a level chosen so the clipped region carries mass c0 of the raw integral.
pub fn tq_loo(
    marginals: &[Marginal],
    likelihood: &Likelihood,
    obs: &[Obs],
    nodes: usize,
    cfg: &TruncationConfig,
) -> Result<LooReport> {
    cfg.validate()?;
    let mut c_levels = Vec::with_capacity(obs.len());
    for (m, o) in marginals.iter().zip(obs) {
        // raw ratio integral on the finite window (a, b); dense trapezoid so a
        // divergent ratio saturates instead of poisoning the level
        let window = QuadratureGrid::trapezoid(m.mean, m.var * (cfg.half_width / 6.0).powi(2), 2001)?;
        let raw = window.integrate(|f| (-likelihood.loglik_value(o, f)).exp())?;
        let c = if raw.value > 0.0 && raw.value.is_finite() { cfg.c0 / raw.value } else { 0.0 };
        c_levels.push(c);
    }
    tq_loo_with_truncation_level(marginals, likelihood, obs, nodes, &c_levels)
}

/// Which WAIC flavour to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WaicVariant {
    /// Gibbs-training-difference form: 2 E[log p] - log E[p].
    G,
    /// Functional-variance form: log E[p] - Var[log p].
    V,
}

/// Per-point WAIC with expectations over the latent marginal by quadrature.
pub fn waic(
    marginals: &[Marginal],
    likelihood: &Likelihood,
    obs: &[Obs],
    nodes: usize,
    variant: WaicVariant,
) -> Result<LooReport> {
    let n = obs.len();
    if marginals.len() != n {
        return Err(Error::InvalidInput("marginals do not match observations".into()));
    }
    let mut lpd: Vec<Option<f64>> = vec![None; n];
    let mut failures = Vec::new();
    let mut training = vec![0.0; n];
    for i in 0..n {
        let m = marginals[i];
        match waic_point(&m, likelihood, &obs[i], nodes, variant) {
            Ok((value, tr)) => {
                lpd[i] = Some(value);
                training[i] = tr;
            }
            Err(e) => failures.push(PointFailure { index: i, reason: e.to_string() }),
        }
    }
    let method = match variant {
        WaicVariant::G => "waic_g",
        WaicVariant::V => "waic_v",
    };
    let mut report = LooReport::new(method, lpd);
    report.failures = failures;
    Ok(report.with_training_lpd(&training))
}

fn waic_point(
    m: &Marginal,
    likelihood: &Likelihood,
    o: &Obs,
    nodes: usize,
    variant: WaicVariant,
) -> Result<(f64, f64)> {
    // a point the model pins down exactly needs no correction
    if m.var < 1e-12 {
        let v = likelihood.loglik_value(o, m.mean);
        return Ok((v, v));
    }
    let grid = QuadratureGrid::adapt(m.mean, m.var, nodes)?;
    let log_e = grid.log_integrate(|f| likelihood.loglik_value(o, f))?;
    let e_log = grid.integrate(|f| likelihood.loglik_value(o, f))?.value;
    let value = match variant {
        WaicVariant::G => 2.0 * e_log - log_e,
        WaicVariant::V => {
            let var_log = grid
                .integrate(|f| {
                    let d = likelihood.loglik_value(o, f) - e_log;
                    d * d
                })?
                .value;
            log_e - var_log
        }
    };
    if !value.is_finite() {
        return Err(Error::NumericalFailure("non-finite WAIC value".into()));
    }
    Ok((value, log_e))
}

/// Functional cumulants of log p(y_i|f) under the latent marginal, and the
/// alternating partial sums that estimate LOO from them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CumulantSeries {
    pub order: usize,
    /// cumulants[i][j-1] = kappa_j for point i, j = 1..=order.
    pub cumulants: Vec<Vec<f64>>,
    /// Training log predictive density log E[p] per point (the value of the
    /// generating function at 1).
    pub f1: Vec<f64>,
}

impl CumulantSeries {
    /// Partial sum sum_{j<=k} (-1)^{j+1} kappa_j / j! for one point.
    pub fn partial_sum(&self, i: usize, k: usize) -> f64 {
        let mut fact = 1.0;
        let mut acc = 0.0;
        for j in 1..=k {
            fact *= j as f64;
            let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
            acc += sign * self.cumulants[i][j - 1] / fact;
        }
        acc
    }
}

pub const MAX_CUMULANT_ORDER: usize = 6;

/// LOO via the cumulant expansion truncated at order `k` (1..=6). Higher
/// orders would require central moments beyond the 6th, which quadrature
/// cannot deliver at usable accuracy.
pub fn cumulant_series_loo(
    marginals: &[Marginal],
    likelihood: &Likelihood,
    obs: &[Obs],
    nodes: usize,
    k: usize,
) -> Result<(CumulantSeries, LooReport)> {
    if k == 0 {
        return Err(Error::InvalidInput("cumulant order must be at least 1".into()));
    }
    if k > MAX_CUMULANT_ORDER {
        return Err(Error::UnsupportedOperation(format!(
            "cumulant order {k} exceeds {MAX_CUMULANT_ORDER}; high-order cumulants are \
             numerically unstable — use q_loo or tq_loo instead"
        )));
    }
    let n = obs.len();
    if marginals.len() != n {
        return Err(Error::InvalidInput("marginals do not match observations".into()));
    }
    let m_nodes = nodes.max(61) | 1;
    let mut cumulants = Vec::with_capacity(n);
    let mut f1 = Vec::with_capacity(n);
    let mut lpd: Vec<Option<f64>> = vec![None; n];
    for i in 0..n {
        let m = marginals[i];
        let grid = QuadratureGrid::adapt(m.mean, m.var, m_nodes)?;
        let lls: Vec<f64> = grid.nodes.iter().map(|&f| likelihood.loglik_value(&obs[i], f)).collect();
        let mean: f64 = lls.iter().zip(&grid.weights).map(|(l, w)| l * w).sum();
        // central moments up to order 6
        let mut cmv = [0.0f64; 7];
        for (l, w) in lls.iter().zip(&grid.weights) {
            let d = l - mean;
            let mut p = d;
            for j in 2..=6 {
                p *= d;
                cmv[j] += w * p;
            }
        }
        let m2 = cmv[2];
        let m3 = cmv[3];
        let m4 = cmv[4];
        let m5 = cmv[5];
        let m6 = cmv[6];
        let kappa = [
            mean,
            m2,
            m3,
            m4 - 3.0 * m2 * m2,
            m5 - 10.0 * m3 * m2,
            m6 - 15.0 * m4 * m2 - 10.0 * m3 * m3 + 30.0 * m2 * m2 * m2,
        ];
        cumulants.push(kappa[..k].to_vec());
        f1.push(grid.log_integrate(|f| likelihood.loglik_value(&obs[i], f))?);
    }
    let series = CumulantSeries { order: k, cumulants, f1: f1.clone() };
    for i in 0..n {
        lpd[i] = Some(series.partial_sum(i, k));
    }
    let mut report = LooReport::new(format!("cumulant_loo_k{k}"), lpd);
    report = report.with_training_lpd(&f1);
    Ok((series, report))
}
