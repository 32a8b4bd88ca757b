//! Scalar numeric helpers shared across likelihoods and estimators.

use statrs::function::erf::erfc;

pub const LN_2PI: f64 = 1.8378770664093453;
pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Standard normal density.
pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z - 0.5 * LN_2PI).exp()
}

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// log of the standard normal CDF, stable far into the lower tail.
pub fn log_norm_cdf(z: f64) -> f64 {
    if z > -1.0 {
        // ln(1 - Phi(-z)) via log1p keeps precision near zero and in the
        // upper tail, where Phi saturates to 1
        (-0.5 * erfc(z / SQRT_2)).ln_1p()
    } else if z > -36.0 {
        (0.5 * erfc(-z / SQRT_2)).ln()
    } else {
        // asymptotic expansion: Phi(z) ~ phi(z)/|z| * (1 - 1/z^2 + 3/z^4 - ...)
        let z2 = z * z;
        -0.5 * z2 - 0.5 * LN_2PI - (-z).ln() + (-1.0 / z2 + 3.0 / (z2 * z2)).ln_1p()
    }
}

/// Inverse Mills ratio phi(z)/Phi(z), stable for very negative z.
pub fn inv_mills(z: f64) -> f64 {
    (-0.5 * z * z - 0.5 * LN_2PI - log_norm_cdf(z)).exp()
}

/// log N(x | mu, v)
pub fn log_norm_pdf(x: f64, mu: f64, v: f64) -> f64 {
    let d = x - mu;
    -0.5 * (LN_2PI + v.ln() + d * d / v)
}

/// log(1 + e^x) without overflow.
pub fn log1p_exp(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log-sum-exp of a slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cdf_symmetry() {
        assert_relative_eq!(norm_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(norm_cdf(1.0) + norm_cdf(-1.0), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn log_cdf_matches_direct_in_bulk() {
        for &z in &[-8.0, -3.0, -1.5, -0.2, 0.0, 1.0, 4.0] {
            assert_relative_eq!(log_norm_cdf(z), norm_cdf(z).ln(), max_relative = 1e-10);
        }
    }

    #[test]
    fn log_cdf_tail_is_finite_and_monotone() {
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=130 {
            let z = -100.0 + i as f64;
            let v = log_norm_cdf(z);
            assert!(v.is_finite());
            assert!(v > prev, "not monotone at z={z}");
            assert!(v <= 0.0);
            prev = v;
        }
    }

    #[test]
    fn inv_mills_tail() {
        // phi(z)/Phi(z) ~ -z - 1/z for z -> -inf
        let z = -40.0;
        let r = inv_mills(z);
        assert_relative_eq!(r, -z - 1.0 / z, max_relative = 1e-6);
    }

    #[test]
    fn lse_basic() {
        assert_relative_eq!(
            log_sum_exp(&[0.0, 0.0]),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
    }
}
