//! Model ingredients: datasets, covariance functions, observation models,
//! and the hyperparameter container shared by inference and LOO code.

mod dataset;
mod kernel;
mod likelihood;

pub use dataset::Dataset;
pub use kernel::{build_covariance, KernelSpec, KernelTerm};
pub use likelihood::{Likelihood, Obs, TiltedMoments};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A GLVM: Gaussian prior over latent values defined by a kernel, plus a
/// factorizing observation model. Hyperparameters (theta, phi) live inside
/// the two specs on the unconstrained log scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlvmModel {
    pub kernel: KernelSpec,
    pub likelihood: Likelihood,
}

impl GlvmModel {
    pub fn new(kernel: KernelSpec, likelihood: Likelihood) -> Self {
        GlvmModel { kernel, likelihood }
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        self.kernel.validate(data.d())?;
        if data.censored.is_some() && !self.likelihood.supports_censoring() {
            return Err(Error::InvalidInput(
                "dataset has censoring flags but the likelihood does not support censoring".into(),
            ));
        }
        for obs in data_observations(data) {
            self.likelihood.validate_observation(&obs)?;
        }
        Ok(())
    }

    pub fn covariance(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        build_covariance(x, &self.kernel)
    }

    /// All hyperparameters (kernel then likelihood) on the unconstrained scale.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.kernel.params();
        p.extend(self.likelihood.params());
        p
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = self.kernel.param_names();
        names.extend(self.likelihood.param_names());
        names
    }

    pub fn n_params(&self) -> usize {
        self.kernel.params().len() + self.likelihood.params().len()
    }

    pub fn with_params(&self, p: &[f64]) -> Result<GlvmModel> {
        if p.len() != self.n_params() {
            return Err(Error::InvalidInput(format!(
                "expected {} hyperparameters, got {}",
                self.n_params(),
                p.len()
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite hyperparameters".into()));
        }
        let nk = self.kernel.params().len();
        Ok(GlvmModel {
            kernel: self.kernel.with_params(&p[..nk]),
            likelihood: self.likelihood.with_params(&p[nk..]),
        })
    }

    /// Constrained (positive-scale) view of the parameter vector.
    pub fn constrained_params(&self) -> Vec<f64> {
        self.params().iter().map(|p| p.exp()).collect()
    }
}

/// Observations zipped with censoring flags.
pub fn data_observations(data: &Dataset) -> Vec<Obs> {
    (0..data.n())
        .map(|i| Obs {
            y: data.y[i],
            censored: data.censored.as_ref().map(|c| c[i]).unwrap_or(false),
        })
        .collect()
}
