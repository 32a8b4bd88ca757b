//! Experiment configuration: a single JSON document, with a handful of
//! command-line overrides applied on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use gploo::loo::{FitMethod, TruncationConfig};
use gploo::model::{KernelSpec, Likelihood};

use crate::CliError;

/// Where the observations come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum DatasetSpec {
    /// A bundled dataset or synthetic generator by name:
    /// `ripley`, `synthetic_regression`, `synthetic_classification`,
    /// `synthetic_survival`.
    Registry {
        name: String,
        /// Sample size for the synthetic generators (ignored for `ripley`).
        #[serde(default)]
        n: Option<usize>,
        /// Covariate dimension for the synthetic generators.
        #[serde(default)]
        d: Option<usize>,
    },
    /// CSV file with columns x1..xd, y, and optionally cens.
    Csv { path: PathBuf },
}

/// Which latent-posterior approximation to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMethod {
    Laplace,
    Ep,
}

impl InferenceMethod {
    pub fn fit_method(self) -> FitMethod {
        match self {
            InferenceMethod::Laplace => FitMethod::Laplace,
            InferenceMethod::Ep => FitMethod::Ep,
        }
    }
}

/// How hyperparameters are handled.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum HyperSpec {
    /// Use the hyperparameters in the config as-is.
    Fixed,
    /// Type-II MAP point estimate.
    Map {
        #[serde(default = "default_max_evals")]
        max_evals: usize,
    },
    /// MAP followed by a central composite design around it.
    Ccd {
        #[serde(default = "default_max_evals")]
        max_evals: usize,
    },
    /// MAP followed by a tensor grid around it.
    Grid {
        #[serde(default = "default_max_evals")]
        max_evals: usize,
        #[serde(default = "default_grid_per_dim")]
        per_dim: usize,
        #[serde(default = "default_grid_half_width")]
        half_width: f64,
    },
    /// Externally produced hyperparameter samples (CSV, columns named after
    /// the model parameters, optional log_weight).
    SampleFile { path: PathBuf },
}

fn default_max_evals() -> usize {
    600
}
fn default_grid_per_dim() -> usize {
    5
}
fn default_grid_half_width() -> f64 {
    2.0
}

impl Default for HyperSpec {
    fn default() -> Self {
        HyperSpec::Map { max_evals: default_max_evals() }
    }
}

/// Length-scale multipliers for flexibility sweeps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub multipliers: Vec<f64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.multipliers.len() < 3 {
            return Err(CliError::input("sweep needs at least 3 multipliers"));
        }
        if self.multipliers.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(CliError::input("sweep multipliers must be positive and finite"));
        }
        if self.multipliers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::input("sweep multipliers must be strictly ascending"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub kernel: KernelSpec,
    pub likelihood: Likelihood,
    pub inference: InferenceMethod,
    #[serde(default)]
    pub hyper: HyperSpec,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default)]
    pub truncation: TruncationConfig,
    #[serde(default = "default_nodes")]
    pub quadrature_nodes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

/// Method names the runner can dispatch; checked up front so a typo is an
/// input error rather than a silent NA row in the comparison table.
fn known_method(name: &str) -> bool {
    matches!(
        name,
        "brute_force" | "exact_gaussian" | "la_loo" | "ep_loo" | "q_loo" | "tq_loo" | "waic_g"
            | "waic_v"
    ) || name
        .strip_prefix("cumulant_loo_")
        .and_then(|k| k.parse::<usize>().ok())
        .map(|k| (1..=6).contains(&k))
        .unwrap_or(false)
}

fn default_methods() -> Vec<String> {
    vec!["brute_force".into()]
}
fn default_nodes() -> usize {
    gploo::quadrature::DEFAULT_NODES
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::input(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| {
            CliError::input(format!("config {}: {e}", path.display()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.methods.is_empty() {
            return Err(CliError::input("method list must be non-empty"));
        }
        for m in &self.methods {
            if !known_method(m) {
                return Err(CliError::input(format!(
                    "unknown method '{m}' (available: brute_force, exact_gaussian, la_loo, \
                     ep_loo, q_loo, tq_loo, waic_g, waic_v, cumulant_loo_1..cumulant_loo_6)"
                )));
            }
        }
        if self.quadrature_nodes < 3 {
            return Err(CliError::input("quadrature_nodes must be at least 3"));
        }
        self.truncation
            .validate()
            .map_err(|e| CliError::input(e.to_string()))?;
        if let Some(s) = &self.sweep {
            s.validate()?;
        }
        if let DatasetSpec::Csv { path } = &self.dataset {
            if !path.exists() {
                return Err(CliError::input(format!(
                    "dataset file {} does not exist",
                    path.display()
                )));
            }
        }
        if let HyperSpec::SampleFile { path } = &self.hyper {
            if !path.exists() {
                return Err(CliError::input(format!(
                    "sample file {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    /// Apply command-line overrides on top of the loaded config.
    pub fn apply_overrides(
        &mut self,
        data: Option<PathBuf>,
        out: Option<PathBuf>,
        seed: Option<u64>,
        methods: Option<&str>,
    ) -> Result<(), CliError> {
        if let Some(path) = data {
            if !path.exists() {
                return Err(CliError::input(format!(
                    "dataset file {} does not exist",
                    path.display()
                )));
            }
            self.dataset = DatasetSpec::Csv { path };
        }
        if let Some(out) = out {
            self.out = out;
        }
        if let Some(seed) = seed {
            self.seed = seed;
        }
        if let Some(methods) = methods {
            self.methods = methods
                .split(',')
                .map(|m| m.trim().to_string())
                .filter(|m| !m.is_empty())
                .collect();
        }
        self.validate()
    }
}
