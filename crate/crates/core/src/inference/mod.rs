//! Latent posterior approximations: shared site/cavity machinery plus the
//! Laplace and parallel-EP fitters.

mod ep;
mod laplace;

pub use ep::{ep_fit, EpConfig, EPState};
pub use laplace::{laplace_fit, LaplaceConfig, LaplaceState};

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Joint Gaussian approximation of the latent posterior.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub log_marginal: f64,
}

impl GaussianPosterior {
    pub fn n(&self) -> usize {
        self.mean.len()
    }

    pub fn marginal_var(&self, i: usize) -> f64 {
        self.cov[(i, i)]
    }

    pub fn marginal_vars(&self) -> Vec<f64> {
        self.cov.diagonal().iter().cloned().collect()
    }
}

/// Per-observation Gaussian pseudo-observations. `sigma2 = +inf` means "no
/// site" (the observation contributes no curvature); natural parameters
/// `tau = 1/sigma2`, `nu = mu/sigma2` are the primary representation so that
/// absent and negative-precision sites stay well defined.
#[derive(Debug, Clone)]
pub struct SiteParams {
    pub log_z: Vec<f64>,
    pub tau: Vec<f64>,
    pub nu: Vec<f64>,
}

impl SiteParams {
    pub fn n(&self) -> usize {
        self.tau.len()
    }

    /// Site variance; +inf when the site is absent.
    pub fn sigma2(&self, i: usize) -> f64 {
        if self.tau[i] == 0.0 {
            f64::INFINITY
        } else {
            1.0 / self.tau[i]
        }
    }

    /// Site mean; meaningful only when the site is present.
    pub fn mu(&self, i: usize) -> f64 {
        if self.tau[i] == 0.0 {
            0.0
        } else {
            self.nu[i] / self.tau[i]
        }
    }
}

/// Leave-one-out Gaussian marginal for one latent value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityDistribution {
    pub mean: f64,
    pub var: f64,
}

/// Remove a site from a marginal: q_{-i}(f) ∝ q(f)/t̃_i(f).
///
/// `site_tau`/`site_nu` are the site's natural parameters; a zero-precision
/// site returns the marginal unchanged.
pub fn cavity_remove(
    marginal_mean: f64,
    marginal_var: f64,
    site_tau: f64,
    site_nu: f64,
) -> Result<CavityDistribution> {
    if !(marginal_var > 0.0) {
        return Err(Error::InvalidInput(format!(
            "marginal variance must be positive, got {marginal_var}"
        )));
    }
    let tau_cav = 1.0 / marginal_var - site_tau;
    if !(tau_cav > 0.0) {
        return Err(Error::CavityFailure {
            index: usize::MAX,
            detail: format!("non-positive cavity precision {tau_cav:.3e}"),
        });
    }
    let nu_cav = marginal_mean / marginal_var - site_nu;
    Ok(CavityDistribution { mean: nu_cav / tau_cav, var: 1.0 / tau_cav })
}

/// log|A| for a matrix with positive determinant, via LU without forming the
/// (possibly enormous) determinant itself.
pub(crate) fn log_det_lu(a: DMatrix<f64>) -> Result<f64> {
    let n = a.nrows();
    let lu = a.lu();
    let u = lu.u();
    let mut log_abs = 0.0;
    let mut sign = 1.0_f64;
    for i in 0..n {
        let d = u[(i, i)];
        if d == 0.0 || !d.is_finite() {
            return Err(Error::NumericalFailure("singular matrix in log-determinant".into()));
        }
        log_abs += d.abs().ln();
        sign *= d.signum();
    }
    // LU permutation parity
    if lu.p().determinant::<f64>() < 0.0 {
        sign = -sign;
    }
    if sign < 0.0 {
        return Err(Error::NumericalFailure("negative determinant in log-determinant".into()));
    }
    Ok(log_abs)
}

/// Posterior (mu, Sigma) from prior covariance and site natural parameters:
/// Sigma = (K^{-1} + diag(tau))^{-1} = (I + K diag(tau))^{-1} K, mu = Sigma nu.
/// Fails if the resulting covariance is not symmetric positive definite.
pub(crate) fn posterior_from_sites(
    k: &DMatrix<f64>,
    tau: &[f64],
    nu: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = k.nrows();
    let mut m = k.clone();
    // columns of K scaled by tau: M = I + K diag(tau), so M^{-1} K = Sigma
    for j in 0..n {
        for i in 0..n {
            m[(i, j)] = k[(i, j)] * tau[j];
        }
        m[(j, j)] += 1.0;
    }
    let lu = m.lu();
    let sigma = lu
        .solve(k)
        .ok_or_else(|| Error::NumericalFailure("singular system in posterior refresh".into()))?;
    // symmetrize away solver noise
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    if Cholesky::new(sigma.clone()).is_none() {
        return Err(Error::NumericalFailure("posterior covariance not SPD".into()));
    }
    let mu = &sigma * DVector::from_column_slice(nu);
    Ok((mu, sigma))
}

/// Latent predictive N(m*, v*) at a new input given prior covariance and site
/// natural parameters:
///   m* = k*^T (I + TK)^{-1} nu,  v* = k** - k*^T (I + TK)^{-1} T k*.
pub fn latent_predictive(
    k: &DMatrix<f64>,
    tau: &[f64],
    nu: &[f64],
    k_star: &[f64],
    k_star_star: f64,
) -> Result<(f64, f64)> {
    let n = k.nrows();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = tau[i] * k[(i, j)];
        }
        m[(i, i)] += 1.0;
    }
    let lu = m.lu();
    let nu_v = DVector::from_column_slice(nu);
    let a = lu
        .solve(&nu_v)
        .ok_or_else(|| Error::NumericalFailure("singular predictive system".into()))?;
    let ks = DVector::from_column_slice(k_star);
    let mean = ks.dot(&a);
    let tks = DVector::from_iterator(n, (0..n).map(|i| tau[i] * k_star[i]));
    let b = lu
        .solve(&tks)
        .ok_or_else(|| Error::NumericalFailure("singular predictive system".into()))?;
    let var = k_star_star - ks.dot(&b);
    if !(var > 0.0) {
        return Err(Error::DegenerateModel(format!(
            "non-positive latent predictive variance {var:.3e}"
        )));
    }
    Ok((mean, var))
}
