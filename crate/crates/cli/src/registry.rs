//! Bundled datasets and synthetic generators.
//!
//! `ripley` regenerates the classic two-class synthetic benchmark from its
//! published generating process (each class an equal mixture of two
//! bivariate normals with variance 0.03; class +1 centers (-0.3, 0.7) and
//! (0.4, 0.7), class -1 centers (-0.7, 0.3) and (0.3, 0.3); 125 points per
//! class) with a fixed internal seed, so it behaves like a shipped file.
//! The synthetic generators are seeded from the experiment seed.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gploo::model::Dataset;

use crate::config::DatasetSpec;
use crate::CliError;

/// Fixed seed for the bundled dataset: same bytes on every run and machine.
const RIPLEY_SEED: u64 = 19940201;

pub fn load_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset, CliError> {
    match spec {
        DatasetSpec::Csv { path } => Dataset::from_csv(path).map_err(CliError::from),
        DatasetSpec::Registry { name, n, d } => {
            let n_pts = n.unwrap_or(50);
            let dim = d.unwrap_or(1);
            if n_pts < 2 || dim < 1 {
                return Err(CliError::input("synthetic datasets need n >= 2, d >= 1"));
            }
            match name.as_str() {
                "ripley" => Ok(ripley()),
                "synthetic_regression" => Ok(synthetic_regression(n_pts, dim, seed)),
                "synthetic_classification" => Ok(synthetic_classification(n_pts, dim, seed)),
                "synthetic_survival" => Ok(synthetic_survival(n_pts, dim, seed)),
                other => Err(CliError::input(format!(
                    "unknown registry dataset '{other}' (available: ripley, \
                     synthetic_regression, synthetic_classification, synthetic_survival)"
                ))),
            }
        }
    }
}

fn gauss<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; one value per call keeps the stream easy to reason about
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Two-class mixture benchmark: n=250, d=2, labels in {-1, +1}.
pub fn ripley() -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(RIPLEY_SEED);
    let sd = 0.03f64.sqrt();
    let centers_pos = [(-0.3, 0.7), (0.4, 0.7)];
    let centers_neg = [(-0.7, 0.3), (0.3, 0.3)];
    let mut rows = Vec::with_capacity(250);
    let mut y = Vec::with_capacity(250);
    for (centers, label) in [(centers_neg, -1.0), (centers_pos, 1.0)] {
        for _ in 0..125 {
            let (cx, cy) = centers[rng.gen_range(0..2usize)];
            rows.push([cx + sd * gauss(&mut rng), cy + sd * gauss(&mut rng)]);
            y.push(label);
        }
    }
    let x = DMatrix::from_fn(250, 2, |r, c| rows[r][c]);
    Dataset::new(x, y, None).expect("bundled dataset is valid")
}

fn covariates<R: Rng>(n: usize, d: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| rng.gen_range(-2.0..2.0))
}

/// Smooth latent surface used by all the synthetic generators.
fn latent(row: &[f64]) -> f64 {
    row.iter()
        .enumerate()
        .map(|(j, &v)| (1.5 * v + 0.4 * j as f64).sin())
        .sum::<f64>()
}

pub fn synthetic_regression(n: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let x = covariates(n, d, &mut rng);
    let y = (0..n)
        .map(|i| {
            let row: Vec<f64> = (0..d).map(|c| x[(i, c)]).collect();
            latent(&row) + 0.5 * gauss(&mut rng)
        })
        .collect();
    Dataset::new(x, y, None).expect("generator produces valid data")
}

pub fn synthetic_classification(n: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let x = covariates(n, d, &mut rng);
    let y = (0..n)
        .map(|i| {
            let row: Vec<f64> = (0..d).map(|c| x[(i, c)]).collect();
            // probit link: P(y=+1|f) = Phi(f)
            let p = gploo::math::norm_cdf(2.0 * latent(&row));
            if rng.gen_range(0.0..1.0) < p { 1.0 } else { -1.0 }
        })
        .collect();
    Dataset::new(x, y, None).expect("generator produces valid data")
}

pub fn synthetic_survival(n: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
    let x = covariates(n, d, &mut rng);
    let shape = 2.0;
    let mut y = Vec::with_capacity(n);
    let mut cens = Vec::with_capacity(n);
    for i in 0..n {
        let row: Vec<f64> = (0..d).map(|c| x[(i, c)]).collect();
        let f = 0.5 * latent(&row);
        // log-logistic time: t = e^f (u/(1-u))^(1/shape)
        let u: f64 = rng.gen_range(1e-9..1.0 - 1e-9);
        let t = f.exp() * (u / (1.0 - u)).powf(1.0 / shape);
        // administrative censoring at a fixed horizon (~20% of draws)
        let horizon = 4.0;
        if t > horizon {
            y.push(horizon);
            cens.push(true);
        } else {
            y.push(t);
            cens.push(false);
        }
    }
    Dataset::new(x, y, Some(cens)).expect("generator produces valid data")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ripley_shape_and_determinism() {
        let a = ripley();
        let b = ripley();
        assert_eq!(a.n(), 250);
        assert_eq!(a.d(), 2);
        assert_eq!(a.y.iter().filter(|&&v| v == 1.0).count(), 125);
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        // points live roughly in the unit box around the mixture centers
        assert!(a.x.iter().all(|&v| (-1.5..1.5).contains(&v)));
    }

    #[test]
    fn generators_are_seed_deterministic_and_seed_sensitive() {
        let a = synthetic_regression(30, 2, 5);
        let b = synthetic_regression(30, 2, 5);
        let c = synthetic_regression(30, 2, 6);
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        assert_ne!(a.y, c.y);
    }

    #[test]
    fn classification_labels_are_pm_one() {
        let d = synthetic_classification(60, 1, 1);
        assert!(d.y.iter().all(|&v| v == 1.0 || v == -1.0));
        assert!(d.y.iter().any(|&v| v == 1.0));
        assert!(d.y.iter().any(|&v| v == -1.0));
    }

    #[test]
    fn survival_times_positive_with_some_censoring() {
        let d = synthetic_survival(200, 1, 2);
        assert!(d.y.iter().all(|&v| v > 0.0));
        let cens = d.censored.as_ref().unwrap();
        let frac = cens.iter().filter(|&&c| c).count() as f64 / 200.0;
        assert!(frac > 0.02 && frac < 0.6, "censoring fraction {frac}");
    }

    #[test]
    fn unknown_registry_name_is_input_error() {
        let spec = DatasetSpec::Registry { name: "nope".into(), n: None, d: None };
        assert!(load_dataset(&spec, 0).is_err());
    }
}
