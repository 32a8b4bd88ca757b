use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::math::{
    log1p_exp, log_norm_cdf, log_norm_pdf, norm_cdf, sigmoid, LN_2PI,
};
use crate::quadrature::QuadratureGrid;

/// Observation models. Parameters are stored on the unconstrained log scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Likelihood {
    /// y | f ~ N(f, sigma^2)
    Gaussian { log_noise_var: f64 },
    /// y in {-1, +1}, p(y|f) = Phi(y f)
    Probit,
    /// y | f ~ t_nu(f, scale); nu is fixed at configuration time.
    StudentT { log_scale: f64, nu: f64 },
    /// Log-logistic survival model with latent log-scale location f and
    /// shape r = exp(log_shape). For an observed time y > 0,
    ///   log p(y|f) = log r - log y + z - 2 log(1 + e^z),  z = r (log y - f),
    /// and a censored time contributes the survival function
    ///   log S(y|f) = -log(1 + e^z).
    LogLogisticCensored { log_shape: f64 },
}

/// One observation paired with its censoring flag (survival only).
#[derive(Debug, Clone, Copy)]
pub struct Obs {
    pub y: f64,
    pub censored: bool,
}

impl Obs {
    pub fn new(y: f64) -> Self {
        Obs { y, censored: false }
    }
}

/// Zeroth moment (log scale) and the mean/variance of a normalized tilted
/// distribution p(y|f) N(f|mu,v) / Z0.
#[derive(Debug, Clone, Copy)]
pub struct TiltedMoments {
    pub log_z0: f64,
    pub mean: f64,
    pub var: f64,
}

impl Likelihood {
    pub fn is_log_concave(&self) -> bool {
        !matches!(self, Likelihood::StudentT { .. })
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Likelihood::Probit)
    }

    pub fn supports_censoring(&self) -> bool {
        matches!(self, Likelihood::LogLogisticCensored { .. })
    }

    pub fn validate_observation(&self, obs: &Obs) -> Result<()> {
        if !obs.y.is_finite() {
            return Err(Error::InvalidInput("non-finite observation".into()));
        }
        match self {
            Likelihood::Probit => {
                if obs.y != 1.0 && obs.y != -1.0 {
                    return Err(Error::InvalidInput(format!(
                        "probit outcomes must be -1 or +1, got {}",
                        obs.y
                    )));
                }
            }
            Likelihood::LogLogisticCensored { .. } => {
                if !(obs.y > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "survival times must be positive, got {}",
                        obs.y
                    )));
                }
            }
            _ => {}
        }
        if obs.censored && !self.supports_censoring() {
            return Err(Error::InvalidInput(
                "censoring flags are only valid with the censored log-logistic likelihood".into(),
            ));
        }
        Ok(())
    }

    /// log p(y|f) together with its first and second derivatives in f.
    pub fn loglik(&self, obs: &Obs, f: f64) -> (f64, f64, f64) {
        match self {
            Likelihood::Gaussian { log_noise_var } => {
                let v = log_noise_var.exp();
                let r = obs.y - f;
                (-0.5 * (LN_2PI + log_noise_var + r * r / v), r / v, -1.0 / v)
            }
            Likelihood::Probit => {
                let z = obs.y * f;
                let rho = crate::math::inv_mills(z);
                (log_norm_cdf(z), obs.y * rho, -rho * (z + rho))
            }
            Likelihood::StudentT { log_scale, nu } => {
                let s2 = nu * (2.0 * log_scale).exp();
                let r = obs.y - f;
                let val = ln_gamma((nu + 1.0) / 2.0)
                    - ln_gamma(nu / 2.0)
                    - 0.5 * (nu * std::f64::consts::PI).ln()
                    - log_scale
                    - 0.5 * (nu + 1.0) * (r * r / s2).ln_1p();
                let denom = s2 + r * r;
                let d1 = (nu + 1.0) * r / denom;
                let d2 = (nu + 1.0) * (r * r - s2) / (denom * denom);
                (val, d1, d2)
            }
            Likelihood::LogLogisticCensored { log_shape } => {
                let r = log_shape.exp();
                let z = r * (obs.y.ln() - f);
                let s = sigmoid(z);
                if obs.censored {
                    (-log1p_exp(z), r * s, -r * r * s * (1.0 - s))
                } else {
                    (
                        log_shape - obs.y.ln() + z - 2.0 * log1p_exp(z),
                        r * (2.0 * s - 1.0),
                        -2.0 * r * r * s * (1.0 - s),
                    )
                }
            }
        }
    }

    pub fn loglik_value(&self, obs: &Obs, f: f64) -> f64 {
        self.loglik(obs, f).0
    }

    /// Moments of the tilted distribution p(y|f) N(f|mu,v). Closed form for
    /// the probit and Gaussian models, quadrature otherwise.
    pub fn tilted_moments(&self, obs: &Obs, mu: f64, v: f64) -> Result<TiltedMoments> {
        if !(v > 0.0) {
            return Err(Error::InvalidInput(format!(
                "cavity variance must be positive, got {v}"
            )));
        }
        match self {
            Likelihood::Gaussian { log_noise_var } => {
                let s2 = log_noise_var.exp();
                let var = 1.0 / (1.0 / v + 1.0 / s2);
                Ok(TiltedMoments {
                    log_z0: log_norm_pdf(obs.y, mu, s2 + v),
                    mean: var * (mu / v + obs.y / s2),
                    var,
                })
            }
            Likelihood::Probit => {
                let denom = (1.0 + v).sqrt();
                let z = obs.y * mu / denom;
                let rho = crate::math::inv_mills(z);
                let mean = mu + obs.y * v * rho / denom;
                let var = v - v * v * rho * (z + rho) / (1.0 + v);
                Ok(TiltedMoments { log_z0: log_norm_cdf(z), mean, var })
            }
            _ => self.tilted_moments_quadrature(obs, mu, v),
        }
    }

    fn tilted_moments_quadrature(&self, obs: &Obs, mu: f64, v: f64) -> Result<TiltedMoments> {
        let grid = QuadratureGrid::adapt(mu, v, 101)?;
        // work on the log scale relative to the peak to avoid underflow
        let logs: Vec<f64> = grid
            .nodes
            .iter()
            .zip(&grid.weights)
            .map(|(&f, &w)| self.loglik_value(obs, f) + w.ln())
            .collect();
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::NumericalFailure(
                "tilted distribution vanished at every quadrature node".into(),
            ));
        }
        let ws: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = ws.iter().sum();
        let mean = grid
            .nodes
            .iter()
            .zip(&ws)
            .map(|(&f, &w)| f * w)
            .sum::<f64>()
            / z;
        let var = grid
            .nodes
            .iter()
            .zip(&ws)
            .map(|(&f, &w)| (f - mean) * (f - mean) * w)
            .sum::<f64>()
            / z;
        if !(var > 0.0) || !mean.is_finite() {
            return Err(Error::NumericalFailure(
                "tilted moment quadrature produced a degenerate distribution".into(),
            ));
        }
        Ok(TiltedMoments { log_z0: m + z.ln(), mean, var })
    }

    /// Predictive CDF F(y) = int CDF(y|f) N(f|mu,v) df for continuous models.
    pub fn predictive_cdf(&self, y: f64, mu: f64, v: f64) -> Result<f64> {
        if !(v > 0.0) {
            return Err(Error::InvalidInput("marginal variance must be positive".into()));
        }
        match self {
            Likelihood::Probit => Err(Error::UnsupportedOperation(
                "PIT values are undefined for the discrete probit likelihood".into(),
            )),
            Likelihood::Gaussian { log_noise_var } => {
                let s2 = log_noise_var.exp();
                Ok(norm_cdf((y - mu) / (s2 + v).sqrt()))
            }
            _ => {
                let grid = QuadratureGrid::adapt(mu, v, 101)?;
                let p = grid
                    .nodes
                    .iter()
                    .zip(&grid.weights)
                    .map(|(&f, &w)| w * self.cdf_given_f(y, f))
                    .sum::<f64>();
                Ok(p.clamp(0.0, 1.0))
            }
        }
    }

    fn cdf_given_f(&self, y: f64, f: f64) -> f64 {
        match self {
            Likelihood::Gaussian { log_noise_var } => {
                norm_cdf((y - f) / (0.5 * log_noise_var).exp())
            }
            Likelihood::StudentT { log_scale, nu } => {
                student_t_cdf((y - f) / log_scale.exp(), *nu)
            }
            Likelihood::LogLogisticCensored { log_shape } => {
                if y <= 0.0 {
                    0.0
                } else {
                    sigmoid(log_shape.exp() * (y.ln() - f))
                }
            }
            Likelihood::Probit => f64::NAN,
        }
    }

    /// Whether the quadrature of q(f)/p(y|f) against a Gaussian marginal with
    /// variance `v` is numerically trustworthy. The probit tail decays like a
    /// unit-variance Gaussian, so the ratio either diverges (v >= 1) or is
    /// dominated by far-tail mass (v < 1); Gaussian likelihoods diverge as
    /// soon as the marginal variance reaches the noise variance.
    pub fn ratio_quadrature_stable(&self, v: f64) -> bool {
        match self {
            Likelihood::Gaussian { log_noise_var } => v < log_noise_var.exp(),
            Likelihood::Probit => false,
            // polynomial / exponential likelihood tails: ratio stays subgaussian
            Likelihood::StudentT { .. } | Likelihood::LogLogisticCensored { .. } => true,
        }
    }

    /// Likelihood parameters on the unconstrained (log) scale.
    pub fn params(&self) -> Vec<f64> {
        match self {
            Likelihood::Gaussian { log_noise_var } => vec![*log_noise_var],
            Likelihood::Probit => vec![],
            Likelihood::StudentT { log_scale, .. } => vec![*log_scale],
            Likelihood::LogLogisticCensored { log_shape } => vec![*log_shape],
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match self {
            Likelihood::Gaussian { .. } => vec!["lik_log_noise_var".into()],
            Likelihood::Probit => vec![],
            Likelihood::StudentT { .. } => vec!["lik_log_scale".into()],
            Likelihood::LogLogisticCensored { .. } => vec!["lik_log_shape".into()],
        }
    }

    pub fn with_params(&self, p: &[f64]) -> Likelihood {
        let mut lik = self.clone();
        match &mut lik {
            Likelihood::Gaussian { log_noise_var } => *log_noise_var = p[0],
            Likelihood::Probit => {}
            Likelihood::StudentT { log_scale, .. } => *log_scale = p[0],
            Likelihood::LogLogisticCensored { log_shape } => *log_shape = p[0],
        }
        lik
    }
}

fn student_t_cdf(t: f64, nu: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    StudentsT::new(0.0, 1.0, nu)
        .map(|d| d.cdf(t))
        .unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn check_derivatives(lik: &Likelihood, obs: &Obs, f: f64) {
        let h = 1e-5;
        let (_, d1, d2) = lik.loglik(obs, f);
        let vp = lik.loglik_value(obs, f + h);
        let vm = lik.loglik_value(obs, f - h);
        let v0 = lik.loglik_value(obs, f);
        let fd1 = (vp - vm) / (2.0 * h);
        let fd2 = (vp - 2.0 * v0 + vm) / (h * h);
        assert_relative_eq!(d1, fd1, max_relative = 1e-6, epsilon = 1e-8);
        assert_relative_eq!(d2, fd2, max_relative = 1e-4, epsilon = 1e-5);
    }

    #[test]
    fn gaussian_standard_normal_point() {
        let lik = Likelihood::Gaussian { log_noise_var: 0.0 };
        let (v, d1, d2) = lik.loglik(&Obs::new(0.0), 0.0);
        assert_relative_eq!(v, -0.5 * LN_2PI, epsilon = 1e-12);
        assert_relative_eq!(d1, 0.0, epsilon = 1e-12);
        assert_relative_eq!(d2, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn probit_at_zero() {
        let lik = Likelihood::Probit;
        let (v, _, d2) = lik.loglik(&Obs::new(1.0), 0.0);
        assert_relative_eq!(v, 0.5f64.ln(), epsilon = 1e-12);
        assert!(d2 < 0.0);
    }

    #[test]
    fn student_t_gradient_and_curvature_signs() {
        let lik = Likelihood::StudentT { log_scale: 0.0, nu: 4.0 };
        let obs = Obs::new(1.5);
        let (_, d1, d2) = lik.loglik(&obs, 1.5);
        assert_relative_eq!(d1, 0.0, epsilon = 1e-12);
        assert!(d2 < 0.0);
        // non-log-concave: positive curvature far in the tails
        let (_, _, d2_tail) = lik.loglik(&obs, 20.0);
        assert!(d2_tail > 0.0);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let cases: Vec<(Likelihood, Obs, f64)> = vec![
            (Likelihood::Gaussian { log_noise_var: -0.7 }, Obs::new(0.4), 1.2),
            (Likelihood::Probit, Obs::new(1.0), 0.8),
            (Likelihood::Probit, Obs::new(-1.0), -2.5),
            (Likelihood::StudentT { log_scale: 0.1, nu: 4.0 }, Obs::new(2.0), -1.0),
            (Likelihood::LogLogisticCensored { log_shape: 0.3 }, Obs::new(2.5), 0.4),
            (
                Likelihood::LogLogisticCensored { log_shape: 0.3 },
                Obs { y: 2.5, censored: true },
                0.4,
            ),
        ];
        for (lik, obs, f) in &cases {
            check_derivatives(lik, obs, *f);
        }
    }

    #[test]
    fn log_concave_models_have_nonpositive_curvature() {
        for f in [-4.0, -1.0, 0.0, 2.0, 6.0] {
            let (_, _, d2) = Likelihood::Probit.loglik(&Obs::new(1.0), f);
            assert!(d2 <= 0.0);
            let (_, _, d2) =
                Likelihood::Gaussian { log_noise_var: 0.3 }.loglik(&Obs::new(1.0), f);
            assert!(d2 <= 0.0);
        }
    }

    #[test]
    fn probit_tilted_zeroth_moment_identity() {
        let lik = Likelihood::Probit;
        for &(mu, v) in &[(0.0, 1.0), (1.5, 0.3), (-2.0, 4.0), (0.7, 0.05)] {
            for y in [1.0, -1.0] {
                let m = lik.tilted_moments(&Obs::new(y), mu, v).unwrap();
                let expected = log_norm_cdf(y * mu / (1.0 + v).sqrt());
                assert_relative_eq!(m.log_z0, expected, epsilon = 1e-12);
            }
        }
        // Phi(0/sqrt(2)) = 0.5 at mu = 0
        let m = lik.tilted_moments(&Obs::new(1.0), 0.0, 1.0).unwrap();
        assert_relative_eq!(m.log_z0.exp(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_tilted_moments_conjugacy() {
        let lik = Likelihood::Gaussian { log_noise_var: 0.0 };
        let m = lik.tilted_moments(&Obs::new(0.0), 0.0, 1.0).unwrap();
        assert_relative_eq!(m.log_z0, log_norm_pdf(0.0, 0.0, 2.0), epsilon = 1e-10);
        assert_relative_eq!(m.mean, 0.0, epsilon = 1e-10);
        assert_relative_eq!(m.var, 0.5, epsilon = 1e-10);
    }

    #[test]
    fn student_t_tilted_moments_match_grid_oracle() {
        let lik = Likelihood::StudentT { log_scale: 0.0, nu: 4.0 };
        let obs = Obs::new(0.0);
        let (mu, v) = (3.0_f64, 0.5_f64);
        // dense trapezoid oracle over +-12 sd
        let n = 100_000usize;
        let (lo, hi) = (mu - 12.0 * v.sqrt(), mu + 12.0 * v.sqrt());
        let h = (hi - lo) / (n as f64 - 1.0);
        let (mut z0, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let f = lo + h * i as f64;
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            let g = w * (lik.loglik_value(&obs, f) + log_norm_pdf(f, mu, v)).exp();
            z0 += g;
            m1 += g * f;
        }
        m1 /= z0;
        for i in 0..n {
            let f = lo + h * i as f64;
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            let g = w * (lik.loglik_value(&obs, f) + log_norm_pdf(f, mu, v)).exp();
            m2 += g * (f - m1) * (f - m1);
        }
        m2 /= z0;
        z0 *= h;
        let m = lik.tilted_moments(&obs, mu, v).unwrap();
        assert_relative_eq!(m.log_z0.exp(), z0, max_relative = 1e-8);
        assert_relative_eq!(m.mean, m1, max_relative = 1e-8, epsilon = 1e-10);
        assert_relative_eq!(m.var, m2, max_relative = 1e-6);
    }

    #[test]
    fn predictive_cdf_properties() {
        let lik = Likelihood::Gaussian { log_noise_var: 0.0 };
        assert_relative_eq!(lik.predictive_cdf(0.0, 0.0, 1.0).unwrap(), 0.5, epsilon = 1e-12);
        assert_relative_eq!(lik.predictive_cdf(1e6, 0.0, 1.0).unwrap(), 1.0, epsilon = 1e-12);
        assert!(Likelihood::Probit.predictive_cdf(1.0, 0.0, 1.0).is_err());

        // student-t against a 2-D grid oracle
        let t = Likelihood::StudentT { log_scale: 0.0, nu: 4.0 };
        let (mu, v, y) = (0.0_f64, 0.5_f64, 1.0);
        let n = 4000usize;
        let (lo, hi) = (mu - 10.0 * v.sqrt(), mu + 10.0 * v.sqrt());
        let h = (hi - lo) / (n as f64 - 1.0);
        let mut acc = 0.0;
        for i in 0..n {
            let f = lo + h * i as f64;
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            acc += w * log_norm_pdf(f, mu, v).exp() * student_t_cdf(y - f, 4.0);
        }
        acc *= h;
        assert_relative_eq!(t.predictive_cdf(y, mu, v).unwrap(), acc, epsilon = 1e-6);
    }

    #[test]
    fn observation_validation() {
        assert!(Likelihood::Probit.validate_observation(&Obs::new(0.5)).is_err());
        assert!(Likelihood::Probit.validate_observation(&Obs::new(1.0)).is_ok());
        let ll = Likelihood::LogLogisticCensored { log_shape: 0.0 };
        assert!(ll.validate_observation(&Obs::new(-1.0)).is_err());
        assert!(ll
            .validate_observation(&Obs { y: 2.0, censored: true })
            .is_ok());
        let g = Likelihood::Gaussian { log_noise_var: 0.0 };
        assert!(g
            .validate_observation(&Obs { y: 2.0, censored: true })
            .is_err());
    }
}
