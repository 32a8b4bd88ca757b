//! One-dimensional Gaussian-expectation quadrature.
//!
//! A [`QuadratureGrid`] integrates integrands against a Gaussian reference
//! measure N(center, scale^2): `integrate(g)` approximates
//! `int g(f) N(f|center, scale^2) df`. Nodes come from Gauss-Hermite rules
//! recentred on the reference; when an integrand is flagged unstable the
//! caller can retry on a wide trapezoid grid to tell "diverges" apart from
//! "under-resolved".

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub const DEFAULT_NODES: usize = 33;

#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    pub nodes: Vec<f64>,
    /// Weights against the reference Gaussian; they sum to one.
    pub weights: Vec<f64>,
    pub center: f64,
    pub scale: f64,
}

/// Outcome of a single integration.
#[derive(Debug, Clone, Copy)]
pub struct Integral {
    pub value: f64,
    /// Set when one node carries more than 90% of the absolute mass, when an
    /// evaluation was non-finite, or when the largest contribution sits on the
    /// grid boundary.
    pub unstable: bool,
}

/// Gauss-Hermite nodes and weights for `exp(-x^2)` via the Golub-Welsch
/// eigenvalue construction on the Jacobi matrix.
fn gauss_hermite(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = DMatrix::zeros(m, m);
    for i in 1..m {
        let b = (i as f64 / 2.0).sqrt();
        jacobi[(i - 1, i)] = b;
        jacobi[(i, i - 1)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|j| {
            let x = eig.eigenvalues[j];
            let v0 = eig.eigenvectors[(0, j)];
            (x, v0 * v0 * std::f64::consts::PI.sqrt())
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    // symmetrize: eigensolver noise would otherwise break odd-m symmetry
    for i in 0..m / 2 {
        let j = m - 1 - i;
        let x = 0.5 * (pairs[j].0 - pairs[i].0);
        let w = 0.5 * (pairs[i].1 + pairs[j].1);
        pairs[i] = (-x, w);
        pairs[j] = (x, w);
    }
    if m % 2 == 1 {
        pairs[m / 2].0 = 0.0;
    }
    pairs.into_iter().unzip()
}

impl QuadratureGrid {
    /// Grid adapted to the reference Gaussian N(mu, v) with `m` nodes
    /// (odd, at least 11). The node span is widened if needed so the grid
    /// reaches at least mu +- 6 sqrt(v).
    pub fn adapt(mu: f64, v: f64, m: usize) -> Result<Self> {
        if !(v > 0.0) || !mu.is_finite() {
            return Err(Error::InvalidInput(format!(
                "quadrature reference must have finite mean and positive variance, got ({mu}, {v})"
            )));
        }
        if m < 11 || m % 2 == 0 {
            return Err(Error::InvalidInput(format!(
                "node count must be odd and >= 11, got {m}"
            )));
        }
        let (xs, ws) = gauss_hermite(m);
        let sd = v.sqrt();
        // f = mu + sqrt(2) sd x integrates against N(mu, v); widen when the
        // raw rule would not reach 6 standard deviations
        let reach = std::f64::consts::SQRT_2 * xs[m - 1];
        let stretch = (6.0 / reach).max(1.0);
        let nodes: Vec<f64> = xs
            .iter()
            .map(|&x| mu + std::f64::consts::SQRT_2 * sd * stretch * x)
            .collect();
        let mut weights: Vec<f64> = if stretch > 1.0 {
            // substitution leaves a residual exp((1 - 1/stretch^2) x^2) factor
            let a = 1.0 - 1.0 / (stretch * stretch);
            xs.iter()
                .zip(&ws)
                .map(|(&x, &w)| w / std::f64::consts::PI.sqrt() * (-a * x * x).exp() * stretch)
                .collect()
        } else {
            ws.iter().map(|&w| w / std::f64::consts::PI.sqrt()).collect()
        };
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Ok(QuadratureGrid { nodes, weights, center: mu, scale: sd })
    }

    /// Evenly spaced trapezoid grid over mu +- 6 sqrt(v) with Gaussian-measure
    /// weights; fallback used when a Gauss-Hermite pass is flagged unstable.
    pub fn trapezoid(mu: f64, v: f64, m: usize) -> Result<Self> {
        if !(v > 0.0) || m < 3 {
            return Err(Error::InvalidInput("invalid trapezoid grid".into()));
        }
        let sd = v.sqrt();
        let (lo, hi) = (mu - 6.0 * sd, mu + 6.0 * sd);
        let h = (hi - lo) / (m as f64 - 1.0);
        let nodes: Vec<f64> = (0..m).map(|i| lo + h * i as f64).collect();
        let mut weights: Vec<f64> = nodes
            .iter()
            .enumerate()
            .map(|(i, &f)| {
                let edge = if i == 0 || i == m - 1 { 0.5 } else { 1.0 };
                edge * h * crate::math::log_norm_pdf(f, mu, v).exp()
            })
            .collect();
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Ok(QuadratureGrid { nodes, weights, center: mu, scale: sd })
    }

    /// Weighted sum approximating `int g(f) N(f|center, scale^2) df`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, g: F) -> Result<Integral> {
        let mut contributions = Vec::with_capacity(self.nodes.len());
        let mut any_nonfinite = false;
        let mut all_nonfinite = true;
        for (&f, &w) in self.nodes.iter().zip(&self.weights) {
            let gv = g(f);
            if gv.is_finite() {
                all_nonfinite = false;
                contributions.push(w * gv);
            } else {
                any_nonfinite = true;
                contributions.push(0.0);
            }
        }
        if all_nonfinite {
            return Err(Error::NumericalFailure(
                "integrand non-finite at every quadrature node".into(),
            ));
        }
        let value: f64 = contributions.iter().sum();
        let total_abs: f64 = contributions.iter().map(|c| c.abs()).sum();
        let (max_idx, max_abs) = contributions
            .iter()
            .map(|c| c.abs())
            .enumerate()
            .fold((0, 0.0), |acc, (i, c)| if c > acc.1 { (i, c) } else { acc });
        let concentrated = total_abs > 0.0 && max_abs > 0.9 * total_abs;
        let boundary = max_idx == 0 || max_idx + 1 == self.nodes.len();
        Ok(Integral {
            value,
            unstable: any_nonfinite || concentrated || (boundary && max_abs > 0.0),
        })
    }

    /// `integrate` in the log domain: returns `log int exp(lg(f)) dN` for
    /// positive integrands given by their logarithm. Never flags; used where
    /// the integrand is a likelihood (bounded, no cancellation).
    pub fn log_integrate<F: Fn(f64) -> f64>(&self, lg: F) -> Result<f64> {
        let logs: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&f, &w)| lg(f) + w.ln())
            .collect();
        let out = crate::math::log_sum_exp(&logs);
        if out.is_nan() {
            return Err(Error::NumericalFailure("log-integrand produced NaN".into()));
        }
        Ok(out)
    }
}

/// Integrate with a Gauss-Hermite pass first, retrying once on a dense
/// trapezoid grid when flagged; the result keeps the flag if the fallback is
/// unstable too.
pub fn integrate_with_fallback<F: Fn(f64) -> f64>(
    mu: f64,
    v: f64,
    m: usize,
    g: F,
) -> Result<Integral> {
    let grid = QuadratureGrid::adapt(mu, v, m)?;
    let first = grid.integrate(&g)?;
    if !first.unstable {
        return Ok(first);
    }
    let wide = QuadratureGrid::trapezoid(mu, v, 2001)?;
    let second = wide.integrate(&g)?;
    Ok(Integral { value: second.value, unstable: true })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::log_norm_pdf;
    use approx::assert_relative_eq;

    #[test]
    fn grid_symmetry_and_normalization() {
        let grid = QuadratureGrid::adapt(0.0, 1.0, 21).unwrap();
        assert!(grid.nodes.iter().any(|&x| x == 0.0));
        for i in 0..10 {
            assert_relative_eq!(grid.nodes[i], -grid.nodes[20 - i], epsilon = 1e-12);
        }
        let one = grid.integrate(|_| 1.0).unwrap();
        assert_relative_eq!(one.value, 1.0, epsilon = 1e-10);
        assert!(!one.unstable);
    }

    #[test]
    fn gaussian_second_moment() {
        let grid = QuadratureGrid::adapt(0.0, 1.0, 21).unwrap();
        let m2 = grid.integrate(|f| f * f).unwrap();
        assert_relative_eq!(m2.value, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn grid_spans_six_sd() {
        for m in [11, 21, 33] {
            let grid = QuadratureGrid::adapt(2.0, 4.0, m).unwrap();
            assert!(grid.nodes[m - 1] >= 2.0 + 6.0 * 2.0 - 1e-9, "m={m}");
            let one = grid.integrate(|_| 1.0).unwrap();
            assert_relative_eq!(one.value, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn gaussian_ratio_integral_closed_form() {
        // int N(f|0,1/2) / N(0|f,1) df = 2 sqrt(pi), evaluated as the
        // reciprocal-likelihood integrand against the N(0, 1/2) reference
        let grid = QuadratureGrid::adapt(0.0, 0.5, DEFAULT_NODES).unwrap();
        let res = grid
            .integrate(|f| (-log_norm_pdf(0.0, f, 1.0)).exp())
            .unwrap();
        assert_relative_eq!(res.value, 2.0 * std::f64::consts::PI.sqrt(), max_relative = 1e-10);
        assert!(!res.unstable);
    }

    #[test]
    fn divergent_integrand_is_flagged() {
        let grid = QuadratureGrid::adapt(0.0, 1.0, DEFAULT_NODES).unwrap();
        let res = grid.integrate(|f| (f * f).exp()).unwrap();
        assert!(res.unstable);
    }

    #[test]
    fn doubling_nodes_changes_convergent_integrals_little() {
        for (mu, v) in [(0.0, 1.0), (1.3, 0.2), (-2.0, 3.0)] {
            let g21 = QuadratureGrid::adapt(mu, v, 21).unwrap();
            let g41 = QuadratureGrid::adapt(mu, v, 41).unwrap();
            let f = |f: f64| (0.3 * f).sin() + (0.5 * f).exp();
            let a = g21.integrate(f).unwrap().value;
            let b = g41.integrate(f).unwrap().value;
            assert_relative_eq!(a, b, max_relative = 1e-8);
        }
    }

    #[test]
    fn rejects_even_or_tiny_grids() {
        assert!(QuadratureGrid::adapt(0.0, 1.0, 10).is_err());
        assert!(QuadratureGrid::adapt(0.0, 1.0, 9).is_err());
        assert!(QuadratureGrid::adapt(0.0, -1.0, 21).is_err());
    }

    #[test]
    fn log_integrate_matches_linear() {
        let grid = QuadratureGrid::adapt(0.5, 2.0, 33).unwrap();
        let direct = grid.integrate(|f| (-f.abs()).exp()).unwrap().value;
        let logged = grid.log_integrate(|f| -f.abs()).unwrap();
        assert_relative_eq!(logged.exp(), direct, max_relative = 1e-12);
    }
}
