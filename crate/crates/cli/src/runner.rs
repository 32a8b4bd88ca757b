//! Experiment runners behind the `fit`, `loo`, and `sweep` subcommands.
//!
//! All primary outputs (JSON summaries, LOO reports, CSVs) are functions of
//! the config and seed only; wall-clock timings go to a separate
//! `timing.json` sidecar so the primary outputs stay byte-identical across
//! runs and parallelism degrees.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use gploo::hyper::{
    ccd_design, grid_design, hierarchical_loo, log_posterior, loo_weight_diagnostics,
    map_optimize, sample_set_from_csv, HyperPrior, MapConfig, SampleSource, WeightedSampleSet,
};
use gploo::inference::{ep_fit, laplace_fit, EPState, EpConfig, LaplaceConfig, LaplaceState};
use gploo::loo::{
    brute_force_loo, compare, cumulant_series_loo, ep_loo, gaussian_exact_loo, la_loo,
    posterior_marginals, q_loo, tq_loo, waic, CavityRoute, FitMethod, LooReport, Marginal,
    TruncationConfig, WaicVariant,
};
use gploo::model::{build_covariance, data_observations, Dataset, GlvmModel, Likelihood, Obs};

use crate::config::{ExperimentConfig, HyperSpec, InferenceMethod};
use crate::registry::load_dataset;
use crate::CliError;

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// A fitted latent posterior from either approximation.
pub enum Fitted {
    Laplace(LaplaceState),
    Ep(EPState),
}

impl Fitted {
    fn log_marginal(&self) -> f64 {
        match self {
            Fitted::Laplace(s) => s.posterior.log_marginal,
            Fitted::Ep(s) => s.posterior.log_marginal,
        }
    }

    fn iterations(&self) -> usize {
        match self {
            Fitted::Laplace(s) => s.iterations,
            Fitted::Ep(s) => s.iterations,
        }
    }

    fn converged(&self) -> bool {
        match self {
            Fitted::Laplace(_) => true, // Newton errors out instead of limping
            Fitted::Ep(s) => s.converged,
        }
    }

    fn marginals(&self) -> Vec<Marginal> {
        match self {
            Fitted::Laplace(s) => posterior_marginals(&s.posterior),
            Fitted::Ep(s) => posterior_marginals(&s.posterior),
        }
    }
}

pub fn fit_latent(
    data: &Dataset,
    model: &GlvmModel,
    method: FitMethod,
) -> Result<Fitted, gploo::Error> {
    let k = model.covariance(&data.x)?;
    let obs = data_observations(data);
    match method {
        FitMethod::Laplace => Ok(Fitted::Laplace(laplace_fit(
            &k,
            &model.likelihood,
            &obs,
            &LaplaceConfig::default(),
        )?)),
        FitMethod::Ep => Ok(Fitted::Ep(ep_fit(&k, &model.likelihood, &obs, &EpConfig::default())?)),
    }
}

/// Hyperparameter handling outcome: one or more weighted sample points plus
/// provenance for the summary.
pub struct HyperResolution {
    pub samples: WeightedSampleSet,
    /// Index of the representative point (MAP / highest weight).
    pub center: usize,
    pub mode: &'static str,
    pub map_objective: Option<f64>,
    pub map_evaluations: Option<usize>,
    pub map_converged: Option<bool>,
    pub warnings: Vec<String>,
}

fn single_point(params: Vec<f64>) -> Result<WeightedSampleSet, gploo::Error> {
    WeightedSampleSet::new(vec![params], vec![0.0], SampleSource::Map)
}

/// Finite-difference posterior standard deviations at the MAP, used to scale
/// the CCD / grid designs. Bounded so a flat or ragged objective cannot blow
/// the design up.
fn curvature_scales(
    data: &Dataset,
    model: &GlvmModel,
    params: &[f64],
    method: FitMethod,
    prior: &HyperPrior,
) -> Vec<f64> {
    let h = 0.1;
    let obj = |p: &[f64]| log_posterior(data, model, p, method, prior).unwrap_or(f64::NEG_INFINITY);
    let f0 = obj(params);
    params
        .iter()
        .enumerate()
        .map(|(j, _)| {
            let mut plus = params.to_vec();
            plus[j] += h;
            let mut minus = params.to_vec();
            minus[j] -= h;
            let d2 = (obj(&plus) - 2.0 * f0 + obj(&minus)) / (h * h);
            if d2 < 0.0 {
                (1.0 / (-d2).sqrt()).clamp(0.05, 2.0)
            } else {
                // flat or convex direction: fall back to a moderate spread
                1.0
            }
        })
        .collect()
}

pub fn resolve_hyper(
    data: &Dataset,
    model: &GlvmModel,
    cfg: &ExperimentConfig,
) -> Result<HyperResolution, CliError> {
    let method = cfg.inference.fit_method();
    let prior = HyperPrior::default();
    let run_map = |max_evals: usize| {
        let map_cfg = MapConfig { max_evals, prior, ..MapConfig::default() };
        map_optimize(data, model, method, &map_cfg)
    };
    match &cfg.hyper {
        HyperSpec::Fixed => Ok(HyperResolution {
            samples: single_point(model.params())?,
            center: 0,
            mode: "fixed",
            map_objective: None,
            map_evaluations: None,
            map_converged: None,
            warnings: Vec::new(),
        }),
        HyperSpec::Map { max_evals } => {
            let res = run_map(*max_evals).map_err(CliError::from)?;
            Ok(HyperResolution {
                samples: single_point(res.params.clone())?,
                center: 0,
                mode: "map",
                map_objective: Some(res.objective),
                map_evaluations: Some(res.evaluations),
                map_converged: Some(res.converged),
                warnings: res.warnings,
            })
        }
        HyperSpec::Ccd { max_evals } | HyperSpec::Grid { max_evals, .. } => {
            let res = run_map(*max_evals).map_err(CliError::from)?;
            let scales = curvature_scales(data, model, &res.params, method, &prior);
            let post = |p: &[f64]| {
                log_posterior(data, model, p, method, &prior).unwrap_or(f64::NEG_INFINITY)
            };
            let (samples, mode) = match &cfg.hyper {
                HyperSpec::Ccd { .. } => (ccd_design(&res.params, &scales, post)?, "ccd"),
                HyperSpec::Grid { per_dim, half_width, .. } => (
                    grid_design(&res.params, &scales, *per_dim, *half_width, post)?,
                    "grid",
                ),
                _ => unreachable!(),
            };
            let center = argmax_weight(&samples);
            let mut warnings = res.warnings.clone();
            warnings.extend(samples.warnings.clone());
            Ok(HyperResolution {
                samples,
                center,
                mode,
                map_objective: Some(res.objective),
                map_evaluations: Some(res.evaluations),
                map_converged: Some(res.converged),
                warnings,
            })
        }
        HyperSpec::SampleFile { path } => {
            let samples = sample_set_from_csv(path, &model.param_names())?;
            let center = argmax_weight(&samples);
            Ok(HyperResolution {
                samples,
                center,
                mode: "sample_file",
                map_objective: None,
                map_evaluations: None,
                map_converged: None,
                warnings: Vec::new(),
            })
        }
    }
}

fn argmax_weight(samples: &WeightedSampleSet) -> usize {
    samples
        .log_weights
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0)
}

#[derive(Serialize)]
struct FitSummary {
    schema_version: u32,
    command: &'static str,
    dataset: DatasetInfo,
    inference: InferenceMethod,
    hyper_mode: &'static str,
    n_hyper_samples: usize,
    param_names: Vec<String>,
    params: Vec<f64>,
    log_marginal: f64,
    iterations: usize,
    converged: bool,
    map_objective: Option<f64>,
    map_evaluations: Option<usize>,
    map_converged: Option<bool>,
    seed: u64,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct DatasetInfo {
    n: usize,
    d: usize,
}

struct Timing {
    start: Instant,
    phases: Vec<(String, f64)>,
    last: Instant,
}

impl Timing {
    fn new() -> Self {
        let now = Instant::now();
        Timing { start: now, phases: Vec::new(), last: now }
    }

    fn phase(&mut self, name: &str) {
        let now = Instant::now();
        self.phases.push((name.to_string(), now.duration_since(self.last).as_secs_f64()));
        self.last = now;
    }

    fn write(&self, out: &Path) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct TimingOut<'a> {
            total_seconds: f64,
            phases: &'a [(String, f64)],
        }
        let doc = TimingOut {
            total_seconds: self.start.elapsed().as_secs_f64(),
            phases: &self.phases,
        };
        write_json(&out.join("timing.json"), &doc)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::inference(format!("serialization failed: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

fn prepare(cfg: &ExperimentConfig) -> Result<(Dataset, GlvmModel), CliError> {
    let data = load_dataset(&cfg.dataset, cfg.seed)?;
    let model = GlvmModel::new(cfg.kernel.clone(), cfg.likelihood.clone());
    model.validate(&data).map_err(CliError::from)?;
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::input(format!("cannot create {}: {e}", cfg.out.display())))?;
    Ok((data, model))
}

pub fn run_fit(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let mut timing = Timing::new();
    let (data, model) = prepare(cfg)?;
    timing.phase("load");
    let hyper = resolve_hyper(&data, &model, cfg)?;
    timing.phase("fit_hyper");
    let center_params = hyper.samples.samples[hyper.center].clone();
    let fitted_model = model.with_params(&center_params).map_err(CliError::from)?;
    let fitted = fit_latent(&data, &fitted_model, cfg.inference.fit_method())
        .map_err(CliError::from)?;
    timing.phase("fit_latent");
    let mut warnings = hyper.warnings.clone();
    if !fitted.converged() {
        warnings.push("latent inference did not converge within its iteration budget".into());
    }
    let summary = FitSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        command: "fit",
        dataset: DatasetInfo { n: data.n(), d: data.d() },
        inference: cfg.inference,
        hyper_mode: hyper.mode,
        n_hyper_samples: hyper.samples.len(),
        param_names: model.param_names(),
        params: center_params,
        log_marginal: fitted.log_marginal(),
        iterations: fitted.iterations(),
        converged: fitted.converged(),
        map_objective: hyper.map_objective,
        map_evaluations: hyper.map_evaluations,
        map_converged: hyper.map_converged,
        seed: cfg.seed,
        warnings,
    };
    write_json(&cfg.out.join("fit_summary.json"), &summary)?;
    timing.write(&cfg.out)?;
    if !summary.converged {
        return Err(CliError::inference(
            "latent inference did not converge; summary written with diagnostics",
        ));
    }
    Ok(())
}

/// Compute one LOO method against one fitted sample.
fn run_method(
    name: &str,
    data: &Dataset,
    model: &GlvmModel,
    fitted: &Fitted,
    obs: &[Obs],
    fit_method: FitMethod,
    nodes: usize,
    trunc: &TruncationConfig,
) -> Result<LooReport, gploo::Error> {
    let lik = &model.likelihood;
    match name {
        "brute_force" => brute_force_loo(data, model, fit_method),
        "exact_gaussian" => match lik {
            Likelihood::Gaussian { log_noise_var } => {
                let k = build_covariance(&data.x, &model.kernel)?;
                let res = gaussian_exact_loo(&k, log_noise_var.exp(), &data.y)?;
                Ok(LooReport::new("exact_gaussian", res.lpd.into_iter().map(Some).collect()))
            }
            _ => Err(gploo::Error::UnsupportedOperation(
                "exact_gaussian requires the gaussian likelihood".into(),
            )),
        },
        "la_loo" => match fitted {
            Fitted::Laplace(s) => la_loo(s, lik, obs, CavityRoute::SiteRemoval),
            Fitted::Ep(_) => Err(gploo::Error::UnsupportedOperation(
                "la_loo requires laplace inference".into(),
            )),
        },
        "ep_loo" => match fitted {
            Fitted::Ep(s) => ep_loo(s, lik, obs),
            Fitted::Laplace(_) => Err(gploo::Error::UnsupportedOperation(
                "ep_loo requires ep inference".into(),
            )),
        },
        "q_loo" => q_loo(&fitted.marginals(), lik, obs, nodes),
        "tq_loo" => tq_loo(&fitted.marginals(), lik, obs, nodes, trunc),
        "waic_g" => waic(&fitted.marginals(), lik, obs, nodes, WaicVariant::G),
        "waic_v" => waic(&fitted.marginals(), lik, obs, nodes, WaicVariant::V),
        other => {
            if let Some(k) = other.strip_prefix("cumulant_loo_") {
                let k: usize = k.parse().map_err(|_| {
                    gploo::Error::InvalidInput(format!("unknown method '{other}'"))
                })?;
                cumulant_series_loo(&fitted.marginals(), lik, obs, nodes, k).map(|(_, r)| r)
            } else {
                Err(gploo::Error::InvalidInput(format!("unknown method '{other}'")))
            }
        }
    }
}

/// One comparison row; optional fields are written as NA.
#[derive(Debug)]
struct ComparisonRow {
    method: String,
    bias: Option<f64>,
    std: Option<f64>,
    n_failures: usize,
    p_eff_over_n: Option<f64>,
    min_rel_ess: Option<f64>,
    khat_max: Option<f64>,
}

fn na(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_else(|| "NA".into())
}

fn write_comparison(path: &Path, rows: &[ComparisonRow]) -> Result<(), CliError> {
    let mut wtr = csv::Writer::from_path(path)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?;
    wtr.write_record([
        "method",
        "bias",
        "std",
        "n_failures",
        "p_eff_over_n",
        "min_rel_ess",
        "khat_max",
    ])
    .map_err(|e| CliError::inference(e.to_string()))?;
    for r in rows {
        wtr.write_record([
            r.method.clone(),
            na(r.bias),
            na(r.std),
            r.n_failures.to_string(),
            na(r.p_eff_over_n),
            na(r.min_rel_ess),
            na(r.khat_max),
        ])
        .map_err(|e| CliError::inference(e.to_string()))?;
    }
    wtr.flush().map_err(|e| CliError::inference(e.to_string()))?;
    Ok(())
}

pub fn run_loo(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let mut timing = Timing::new();
    let (data, model) = prepare(cfg)?;
    timing.phase("load");
    let hyper = resolve_hyper(&data, &model, cfg)?;
    timing.phase("fit_hyper");
    let fit_method = cfg.inference.fit_method();
    let obs = data_observations(&data);
    let s_total = hyper.samples.len();

    // fit every hyperparameter sample once, then evaluate all methods on it
    let mut fitted_models = Vec::with_capacity(s_total);
    for s in 0..s_total {
        let m = model.with_params(&hyper.samples.samples[s]).map_err(CliError::from)?;
        let f = fit_latent(&data, &m, fit_method).map_err(CliError::from)?;
        fitted_models.push((m, f));
    }
    timing.phase("fit_latent");

    // reference: brute force, hierarchically combined over the samples
    let mut methods: Vec<String> = cfg.methods.clone();
    if !methods.iter().any(|m| m == "brute_force") {
        methods.insert(0, "brute_force".to_string());
    }
    // per method: hierarchical combination plus the per-sample conditionals
    // kept for weight diagnostics
    type MethodOutcome = Result<(LooReport, Vec<LooReport>), gploo::Error>;
    let mut reports: Vec<(String, MethodOutcome)> = Vec::new();
    for name in &methods {
        let outcome: MethodOutcome = (|| {
            let mut conditionals = Vec::with_capacity(s_total);
            for (m, f) in &fitted_models {
                conditionals.push(run_method(
                    name,
                    &data,
                    m,
                    f,
                    &obs,
                    fit_method,
                    cfg.quadrature_nodes,
                    &cfg.truncation,
                )?);
            }
            let combined = hierarchical_loo(&hyper.samples, &conditionals)?;
            Ok((combined, conditionals))
        })();
        reports.push((name.clone(), outcome));
    }
    timing.phase("loo_methods");

    let reference = match &reports.iter().find(|(n, _)| n == "brute_force").unwrap().1 {
        Ok((r, _)) => r.clone(),
        Err(e) => {
            return Err(CliError::inference(format!("brute-force reference failed: {e}")));
        }
    };

    let mut rows = Vec::new();
    for (name, outcome) in &reports {
        match outcome {
            Ok((rep, conditionals)) => {
                write_json(&cfg.out.join(format!("loo_{name}.json")), rep)?;
                let stats = compare(&reference, rep).map_err(CliError::from)?;
                let (min_rel_ess, khat_max) = if s_total == 1 {
                    (Some(1.0), None)
                } else {
                    let d = loo_weight_diagnostics(&hyper.samples, conditionals)
                        .map_err(CliError::from)?;
                    (Some(d.min_rel_ess), d.khat_max)
                };
                rows.push(ComparisonRow {
                    method: name.clone(),
                    bias: Some(stats.bias),
                    std: Some(stats.std),
                    n_failures: rep.failures.len(),
                    p_eff_over_n: rep.p_eff.map(|p| p / data.n() as f64),
                    min_rel_ess,
                    khat_max,
                });
            }
            Err(e) => {
                // requested methods are never silently dropped
                eprintln!("method {name} failed: {e}");
                rows.push(ComparisonRow {
                    method: name.clone(),
                    bias: None,
                    std: None,
                    n_failures: data.n(),
                    p_eff_over_n: None,
                    min_rel_ess: None,
                    khat_max: None,
                });
            }
        }
    }
    write_comparison(&cfg.out.join("comparison.csv"), &rows)?;
    timing.phase("write");
    timing.write(&cfg.out)?;
    Ok(())
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::input("sweep subcommand needs a 'sweep' config section"))?;
    sweep.validate()?;
    let mut timing = Timing::new();
    let (data, model) = prepare(cfg)?;
    timing.phase("load");
    let hyper = resolve_hyper(&data, &model, cfg)?;
    timing.phase("fit_hyper");
    let fit_method = cfg.inference.fit_method();
    let obs = data_observations(&data);
    let base = model
        .with_params(&hyper.samples.samples[hyper.center])
        .map_err(CliError::from)?;
    let n = data.n() as f64;

    let methods: Vec<String> =
        cfg.methods.iter().filter(|m| m.as_str() != "brute_force").cloned().collect();

    let path = cfg.out.join("sweep.csv");
    let mut wtr = csv::Writer::from_path(&path)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?;
    wtr.write_record(["multiplier", "p_eff_over_n", "method", "bias"])
        .map_err(|e| CliError::inference(e.to_string()))?;

    // marker row: the flexibility the MAP/fixed fit itself chose
    {
        let fitted = fit_latent(&data, &base, fit_method).map_err(CliError::from)?;
        let brute = brute_force_loo(&data, &base, fit_method).map_err(CliError::from)?;
        let p_eff = sweep_p_eff(&fitted, &base, &obs, &brute)?;
        wtr.write_record(["1", &(p_eff / n).to_string(), "map_marker", "NA"])
            .map_err(|e| CliError::inference(e.to_string()))?;
    }

    for &mult in &sweep.multipliers {
        let scaled =
            GlvmModel::new(base.kernel.scale_length_scales(mult), base.likelihood.clone());
        let outcome: Result<_, gploo::Error> = (|| {
            let fitted = fit_latent(&data, &scaled, fit_method)?;
            let brute = brute_force_loo(&data, &scaled, fit_method)?;
            Ok((fitted, brute))
        })();
        match outcome {
            Ok((fitted, brute)) => {
                let p_eff = sweep_p_eff(&fitted, &scaled, &obs, &brute)?;
                let rel = (p_eff / n).to_string();
                for name in &methods {
                    let bias = run_method(
                        name,
                        &data,
                        &scaled,
                        &fitted,
                        &obs,
                        fit_method,
                        cfg.quadrature_nodes,
                        &cfg.truncation,
                    )
                    .ok()
                    .and_then(|rep| compare(&brute, &rep).ok())
                    .map(|s| s.bias);
                    wtr.write_record([mult.to_string(), rel.clone(), name.clone(), na(bias)])
                        .map_err(|e| CliError::inference(e.to_string()))?;
                }
            }
            Err(e) => {
                // keep the sweep going; emit explicit NA rows for this point
                let reason = format!("NA ({e})");
                for name in &methods {
                    wtr.write_record([mult.to_string(), reason.clone(), name.clone(), "NA".into()])
                        .map_err(|e| CliError::inference(e.to_string()))?;
                }
            }
        }
    }
    wtr.flush().map_err(|e| CliError::inference(e.to_string()))?;
    timing.phase("sweep");
    timing.write(&cfg.out)?;
    Ok(())
}

/// Effective number of parameters at one sweep point: training log predictive
/// density under the posterior marginals minus the brute-force LOO total.
fn sweep_p_eff(
    fitted: &Fitted,
    model: &GlvmModel,
    obs: &[Obs],
    brute: &LooReport,
) -> Result<f64, CliError> {
    let tr = gploo::loo::training_lpd(&fitted.marginals(), &model.likelihood, obs)
        .map_err(CliError::from)?;
    let total: f64 = tr
        .iter()
        .zip(&brute.lpd)
        .filter_map(|(t, l)| l.map(|l| t - l))
        .sum();
    Ok(total)
}
