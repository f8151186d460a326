//! End-to-end operations behind the command-line tool.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, Prepared};
use crate::data::{Columns, Dataset};
use crate::error::{Error, Result};
use crate::estimate;
use crate::gaussian;
use crate::hierarchy::Scope;
use crate::regression;
use crate::report::{DatasetSummary, FitReport};
use crate::simulate::{self, SimulationSpec};
use crate::transforms::TransformRegistry;

/// Process exit status for an error raised after the config was read.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Data(_) | Error::Io { .. } => 3,
        _ => 2,
    }
}

pub const EXIT_NOT_CONVERGED: i32 = 4;

fn summary(ds: &Dataset) -> DatasetSummary {
    DatasetSummary {
        fingerprint: ds.fingerprint.clone(),
        rows: ds.rows,
        units: ds.units.len(),
    }
}

pub fn run_fit(config: &ModelConfig, registry: &TransformRegistry) -> Result<FitReport> {
    let prepared = config.prepare(registry)?;
    let ds = prepared.dataset();
    let (fit, noise) = match &prepared {
        Prepared::Regression { model, start, .. } => (
            estimate::fit_regression(model, *start, config.fit.lsq())?,
            "independent-errors",
        ),
        Prepared::Sde { model, dataset } => {
            let fit = estimate::fit_sde(model, &dataset.units, config.fit.lsq(), config.fit.strategy)?;
            let noise = if model.process_noise_only() {
                "process-noise-only"
            } else {
                "process-and-measurement"
            };
            (fit, noise)
        }
    };
    Ok(FitReport::new(config.clone(), summary(ds), fit, noise, &ds.unit_ids()))
}

/// A user-supplied parameter value: a scalar, one value per unit in
/// dataset order, or a `{unit: value}` map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThetaValue {
    Scalar(f64),
    List(Vec<f64>),
    ByUnit(BTreeMap<String, f64>),
}

pub type Theta = BTreeMap<String, ThetaValue>;

pub fn parse_theta(bytes: &[u8]) -> Result<Theta> {
    serde_json::from_slice(bytes).map_err(|e| Error::Config(format!("theta: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoglikReport {
    pub log_likelihood: f64,
    pub rss: f64,
    pub sigma: f64,
    pub sigma_p: Option<f64>,
    pub sigma_m: Option<f64>,
    pub sigma_0: Option<f64>,
    pub n: usize,
}

fn scalar(name: &str, v: &ThetaValue) -> Result<f64> {
    match v {
        ThetaValue::Scalar(x) => Ok(*x),
        _ => Err(Error::Config(format!("theta: `{name}` is global and needs a single number"))),
    }
}

/// Evaluates the profile log-likelihood (σ² at its optimum) at `theta`
/// without optimizing. Every free parameter must be given; fixed ones may
/// be overridden.
pub fn run_loglik(config: &ModelConfig, theta: &Theta, registry: &TransformRegistry) -> Result<LoglikReport> {
    let mut config = config.clone();
    let known: Vec<&str> = config.parameters.iter().map(|p| p.name.as_str()).collect();
    if let Some(extra) = theta.keys().find(|k| !known.contains(&k.as_str())) {
        return Err(Error::Config(format!("theta: `{extra}` is not a parameter of this model")));
    }
    // fixed parameters given in theta: take the value
    for p in &mut config.parameters {
        if let (true, Some(v)) = (p.fixed, theta.get(&p.name)) {
            p.start = scalar(&p.name, v)?;
        }
    }
    match config.prepare(registry)? {
        Prepared::Regression { model, .. } => {
            let mut th = [0.0; 4];
            for (k, name) in regression::PARAM_NAMES.iter().enumerate() {
                let v = theta
                    .get(*name)
                    .ok_or_else(|| Error::Config(format!("theta: missing `{name}`")))?;
                th[k] = scalar(name, v)?;
            }
            let u = model.uvector(&th)?;
            Ok(LoglikReport {
                log_likelihood: gaussian::log_likelihood_at_optimum(&u),
                rss: u.sum_squares(),
                sigma: gaussian::sigma2_hat(&u).sigma,
                sigma_p: None,
                sigma_m: None,
                sigma_0: None,
                n: u.n(),
            })
        }
        Prepared::Sde { model, dataset } => {
            let binding = model.binding();
            let units = binding.units();
            let mut flat = binding.start();
            for spec in binding.specs().iter().filter(|s| !s.fixed) {
                let v = theta
                    .get(&spec.name)
                    .ok_or_else(|| Error::Config(format!("theta: missing `{}`", spec.name)))?;
                let idx = binding.flat_indices(&spec.name);
                match (spec.scope, v) {
                    (Scope::Global, v) => flat[idx[0]] = scalar(&spec.name, v)?,
                    (Scope::Local, ThetaValue::Scalar(x)) => idx.iter().for_each(|&k| flat[k] = *x),
                    (Scope::Local, ThetaValue::List(xs)) => {
                        if xs.len() != idx.len() {
                            return Err(Error::Config(format!(
                                "theta: `{}` needs {} values, got {}",
                                spec.name,
                                idx.len(),
                                xs.len()
                            )));
                        }
                        for (&k, &x) in idx.iter().zip(xs) {
                            flat[k] = x;
                        }
                    }
                    (Scope::Local, ThetaValue::ByUnit(map)) => {
                        for (&k, unit) in idx.iter().zip(units) {
                            flat[k] = *map.get(unit).ok_or_else(|| {
                                Error::Config(format!("theta: `{}` has no value for unit {unit}", spec.name))
                            })?;
                        }
                    }
                }
            }
            let u = model.likelihood_uvector(&dataset.units, &flat)?;
            let stats = model.final_stats(&dataset.units, &flat)?;
            Ok(LoglikReport {
                log_likelihood: stats.log_likelihood,
                rss: u.sum_squares(),
                sigma: stats.sigma2.sqrt(),
                sigma_p: Some(stats.sigma_p),
                sigma_m: Some(stats.sigma_m),
                sigma_0: Some(stats.sigma_0),
                n: u.n(),
            })
        }
    }
}

/// Simulated dataset as CSV with columns `unit,t,x`.
pub fn run_simulate(spec: &SimulationSpec, registry: &TransformRegistry) -> Result<String> {
    let traj = spec.to_trajectory(registry)?;
    let units = simulate::simulate_units(&traj, spec.n_units)?;
    let ds = Dataset {
        rows: units.iter().map(|u| u.len()).sum(),
        units,
        fingerprint: String::new(),
    };
    ds.to_csv(&Columns::new("t", "x", Some("unit")))
}
