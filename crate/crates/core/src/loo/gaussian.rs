//! Closed-form leave-one-out for the Gaussian likelihood, where conditioning
//! on n-1 points reduces to partitioned-matrix identities on (K + sigma^2 I).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math::LN_2PI;

/// Exact LOO quantities for y | f ~ N(f, sigma^2).
#[derive(Debug, Clone)]
pub struct GaussianLooResult {
    /// LOO predictive means mu_{-i}.
    pub mu_loo: Vec<f64>,
    /// LOO latent predictive variances v_{-i} (noise excluded).
    pub v_loo: Vec<f64>,
    /// g = (K + sigma^2 I)^{-1} y.
    pub g: Vec<f64>,
    /// Diagonal of (K + sigma^2 I)^{-1}.
    pub c_bar: Vec<f64>,
    /// lpd_i = log N(y_i | mu_{-i}, v_{-i} + sigma^2).
    pub lpd: Vec<f64>,
}

/// Exact Gaussian-likelihood LOO from a single factorization:
/// mu_{-i} = y_i - g_i / c_bar_i, v_{-i} = 1/c_bar_i - sigma^2, and
/// lpd_i = -log(2 pi)/2 + log(c_bar_i)/2 - g_i^2 / (2 c_bar_i).
pub fn gaussian_exact_loo(k: &DMatrix<f64>, sigma2: f64, y: &[f64]) -> Result<GaussianLooResult> {
    let n = k.nrows();
    if y.len() != n {
        return Err(Error::InvalidInput("y length does not match K".into()));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidInput("noise variance must be positive".into()));
    }
    let a = k.clone() + DMatrix::identity(n, n) * sigma2;
    let chol = a
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { jitter: 0.0 })?;
    let a_inv = chol.inverse();
    let g = chol.solve(&DVector::from_column_slice(y));
    let mut out = GaussianLooResult {
        mu_loo: Vec::with_capacity(n),
        v_loo: Vec::with_capacity(n),
        g: g.iter().cloned().collect(),
        c_bar: Vec::with_capacity(n),
        lpd: Vec::with_capacity(n),
    };
    for i in 0..n {
        let c = a_inv[(i, i)];
        let v_loo = 1.0 / c - sigma2;
        if !(v_loo > 0.0) {
            return Err(Error::DegenerateModel(format!(
                "non-positive LOO variance {v_loo:.3e} at point {i}"
            )));
        }
        out.mu_loo.push(y[i] - g[i] / c);
        out.v_loo.push(v_loo);
        out.c_bar.push(c);
        out.lpd.push(-0.5 * LN_2PI + 0.5 * c.ln() - g[i] * g[i] / (2.0 * c));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::log_norm_pdf;
    use approx::assert_relative_eq;

    #[test]
    fn single_point_is_prior_predictive() {
        let k = DMatrix::from_row_slice(1, 1, &[1.0]);
        let r = gaussian_exact_loo(&k, 1.0, &[0.0]).unwrap();
        assert_relative_eq!(r.mu_loo[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(r.v_loo[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(r.lpd[0], log_norm_pdf(0.0, 0.0, 2.0), epsilon = 1e-12);
        // log N(0|0,2) ~ -1.2655
        assert_relative_eq!(r.lpd[0], -1.2655, epsilon = 1e-4);
    }

    #[test]
    fn independent_latents_reduce_to_scalar_case() {
        let k = DMatrix::identity(2, 2);
        let r = gaussian_exact_loo(&k, 1.0, &[1.0, -1.0]).unwrap();
        for i in 0..2 {
            assert_relative_eq!(r.c_bar[i], 0.5, epsilon = 1e-12);
            assert_relative_eq!(r.mu_loo[i], 0.0, epsilon = 1e-12);
            assert_relative_eq!(r.v_loo[i], 1.0, epsilon = 1e-12);
            assert_relative_eq!(r.lpd[i], -1.5155, epsilon = 1e-4);
        }
        assert_relative_eq!(r.g[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(r.g[1], -0.5, epsilon = 1e-12);
    }

    #[test]
    fn matches_explicit_refit() {
        // random-ish SPD K via A A^T + I
        let a = DMatrix::from_row_slice(
            5,
            5,
            &[
                0.3, -0.1, 0.7, 0.2, -0.5, 0.1, 0.9, -0.3, 0.4, 0.0, -0.6, 0.2, 0.5, -0.2, 0.3,
                0.8, -0.4, 0.1, 0.6, -0.1, 0.2, 0.3, -0.7, 0.1, 0.4,
            ],
        );
        let k = &a * a.transpose() + DMatrix::identity(5, 5);
        let y = [0.5, -1.2, 0.3, 2.0, -0.7];
        let s2 = 0.4;
        let r = gaussian_exact_loo(&k, s2, &y).unwrap();
        // oracle: explicitly condition on the other four points
        for i in 0..5 {
            let keep: Vec<usize> = (0..5).filter(|&j| j != i).collect();
            let k_oo = DMatrix::from_fn(4, 4, |r_, c_| k[(keep[r_], keep[c_])])
                + DMatrix::identity(4, 4) * s2;
            let k_io = DVector::from_fn(4, |r_, _| k[(i, keep[r_])]);
            let y_o = DVector::from_fn(4, |r_, _| y[keep[r_]]);
            let sol = k_oo.clone().cholesky().unwrap().solve(&y_o);
            let mu = k_io.dot(&sol);
            let v = k[(i, i)] - k_io.dot(&k_oo.cholesky().unwrap().solve(&k_io));
            assert_relative_eq!(r.mu_loo[i], mu, epsilon = 1e-8);
            assert_relative_eq!(r.v_loo[i], v, epsilon = 1e-8);
            assert_relative_eq!(r.lpd[i], log_norm_pdf(y[i], mu, v + s2), epsilon = 1e-8);
        }
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let k = DMatrix::identity(2, 2);
        assert!(gaussian_exact_loo(&k, -1.0, &[0.0, 0.0]).is_err());
        assert!(gaussian_exact_loo(&k, 1.0, &[0.0]).is_err());
    }
}
