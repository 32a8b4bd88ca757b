//! Gaussian latent variable models with fast leave-one-out cross-validation.
//!
//! The crate fits Gaussian-process models with factorizing likelihoods using
//! Laplace or expectation-propagation approximations, and evaluates predictive
//! performance with a family of leave-one-out estimators that reuse the
//! full-data fit instead of refitting n times.

pub mod error;
pub mod hyper;
pub mod inference;
pub mod loo;
pub mod math;
pub mod model;
pub mod quadrature;

pub use error::{Error, Result};
pub use inference::{
    cavity_remove, ep_fit, laplace_fit, CavityDistribution, EPState, EpConfig, GaussianPosterior,
    LaplaceConfig, LaplaceState, SiteParams,
};
pub use model::{Dataset, GlvmModel, KernelSpec, KernelTerm, Likelihood, Obs};
