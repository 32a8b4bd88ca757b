//! Hyperparameter handling: Type-II MAP optimization, deterministic design
//! integration (grid, CCD), hierarchical importance-weighted LOO over the
//! designs, effective-sample-size and Pareto-smoothed weight diagnostics.

mod design;
mod hierarchical;
mod map;
mod psis;

pub use design::{ccd_design, grid_design, sample_set_from_csv};
pub use hierarchical::{hierarchical_loo, loo_weight_diagnostics, mixture_lpd, WeightDiagnostics};
pub use map::{log_posterior, map_optimize, HyperPrior, MapConfig, MapResult};
pub use psis::{effective_sample_size, psis_smooth, PsisResult};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::log_sum_exp;

/// Where a weighted hyperparameter sample set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    /// Single MAP point, weight one.
    Map,
    Grid,
    Ccd,
    /// User-supplied draws (e.g. from an external MCMC run).
    ExternalFile,
}

/// Hyperparameter points (unconstrained scale) with normalized log-weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightedSampleSet {
    /// samples[s] is one hyperparameter vector.
    pub samples: Vec<Vec<f64>>,
    /// Normalized: logsumexp(log_weights) = 0.
    pub log_weights: Vec<f64>,
    pub source: SampleSource,
    pub warnings: Vec<String>,
}

impl WeightedSampleSet {
    /// Build from raw (unnormalized) log-weights, normalizing so the weights
    /// sum to one.
    pub fn new(
        samples: Vec<Vec<f64>>,
        raw_log_weights: Vec<f64>,
        source: SampleSource,
    ) -> Result<Self> {
        if samples.is_empty() || samples.len() != raw_log_weights.len() {
            return Err(Error::InvalidInput(
                "need at least one sample with matching weight".into(),
            ));
        }
        let dim = samples[0].len();
        if samples.iter().any(|s| s.len() != dim) {
            return Err(Error::InvalidInput("inconsistent sample dimensions".into()));
        }
        if raw_log_weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidInput("non-finite log-weight".into()));
        }
        let lse = log_sum_exp(&raw_log_weights);
        let log_weights = raw_log_weights.iter().map(|w| w - lse).collect();
        Ok(WeightedSampleSet { samples, log_weights, source, warnings: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Weights on the linear scale; they sum to one.
    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn weights_normalize() {
        let s = WeightedSampleSet::new(
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec![10.0, 10.0, 10.0 + (2.0f64).ln()],
            SampleSource::Grid,
        )
        .unwrap();
        let w = s.weights();
        assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(w[2], 0.5, epsilon = 1e-12);
        // constant shifts leave normalized weights unchanged
        let s2 = WeightedSampleSet::new(
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec![-5.0, -5.0, -5.0 + (2.0f64).ln()],
            SampleSource::Grid,
        )
        .unwrap();
        for (a, b) in s.log_weights.iter().zip(&s2.log_weights) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(WeightedSampleSet::new(vec![], vec![], SampleSource::Map).is_err());
        assert!(WeightedSampleSet::new(
            vec![vec![0.0], vec![0.0, 1.0]],
            vec![0.0, 0.0],
            SampleSource::Grid
        )
        .is_err());
    }
}
