//! Exact sampling from the linear SDE transition law on the transformed
//! scale, with initial-state and measurement noise, mapped back through
//! `φ⁻¹`.
//!
//! Random source: ChaCha8 seeded with `seed_from_u64(seed)`; unit `j` of a
//! dataset draws from ChaCha stream `j` of that seed, so units are
//! independent of generation order. Normal variates come from
//! `rand_distr::StandardNormal` (ziggurat). Per unit the draws are, in order:
//! the initial-state deviate, then for each time a process deviate followed
//! by a measurement deviate.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{self, FitResult, Strategy};
use crate::hierarchy::{Drift, ParamSpec, ParameterBinding, SdeModel, UnitData};
use crate::optimize::LsqOptions;
use crate::sde::{self, exprel, variance_growth, NoiseLevels, SdeParams};
use crate::transforms::{Transform, TransformRegistry};

/// Everything needed to draw one trajectory (or many, one per stream).
#[derive(Debug, Clone)]
pub struct TrajectorySpec {
    pub beta0: f64,
    pub beta1: f64,
    pub x0: f64,
    pub t0: f64,
    pub noise: NoiseLevels,
    pub times: Vec<f64>,
    pub transform: Arc<dyn Transform>,
    pub transform_params: Vec<f64>,
    pub seed: u64,
}

impl TrajectorySpec {
    fn check(&self) -> Result<()> {
        let n = &self.noise;
        for (what, s) in [("sigma_p", n.sigma_p), ("sigma_m", n.sigma_m), ("sigma_0", n.sigma_0)] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("{what} = {s} must be finite and >= 0")));
            }
        }
        if self.times.is_empty() {
            return Err(Error::Config("no observation times".into()));
        }
        let mut prev = self.t0;
        for (i, &t) in self.times.iter().enumerate() {
            if !(t > prev) {
                return Err(Error::NonIncreasingTime { index: i, time: t });
            }
            prev = t;
        }
        Ok(())
    }

    fn sde_params(&self) -> SdeParams {
        SdeParams {
            beta0: self.beta0,
            beta1: self.beta1,
            x0: self.x0,
            t0: self.t0,
            ..Default::default()
        }
    }
}

/// Latent path and noisy observations on the transformed scale.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedPath {
    pub latent: Vec<f64>,
    pub observed: Vec<f64>,
}

fn draw_path(spec: &TrajectorySpec, rng: &mut ChaCha8Rng) -> Result<TransformedPath> {
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let y0 = spec.transform.eval(spec.x0, &spec.transform_params)?;
    let mut state = y0 + spec.noise.sigma_0 * normal();
    let mut prev = spec.t0;
    let mut latent = Vec::with_capacity(spec.times.len());
    let mut observed = Vec::with_capacity(spec.times.len());
    for &t in &spec.times {
        let dt = t - prev;
        let b = spec.beta1 * dt;
        let sd = spec.noise.sigma_p * variance_growth(spec.beta1, dt).sqrt();
        state = b.exp() * state + spec.beta0 * dt * exprel(b) + sd * normal();
        latent.push(state);
        observed.push(state + spec.noise.sigma_m * normal());
        prev = t;
    }
    Ok(TransformedPath { latent, observed })
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One trajectory on the transformed scale (stream 0).
pub fn simulate_transformed(spec: &TrajectorySpec) -> Result<TransformedPath> {
    spec.check()?;
    draw_path(spec, &mut stream_rng(spec.seed, 0))
}

fn to_unit(spec: &TrajectorySpec, id: String, path: &TransformedPath) -> Result<UnitData> {
    let x = path
        .observed
        .iter()
        .map(|&y| spec.transform.inverse(y, &spec.transform_params))
        .collect::<Result<Vec<_>>>()?;
    Ok(UnitData {
        id,
        t: spec.times.clone(),
        x,
        t0: spec.t0,
        x0: spec.x0,
    })
}

/// One trajectory on the original scale.
pub fn simulate_trajectory(spec: &TrajectorySpec) -> Result<UnitData> {
    let path = simulate_transformed(spec)?;
    to_unit(spec, "1".into(), &path)
}

/// `n_units` independent trajectories, unit `j` (ids `1..=n_units`) on
/// stream `j − 1`.
pub fn simulate_units(spec: &TrajectorySpec, n_units: usize) -> Result<Vec<UnitData>> {
    spec.check()?;
    (0..n_units)
        .map(|j| {
            let path = draw_path(spec, &mut stream_rng(spec.seed, j as u64))?;
            to_unit(spec, (j + 1).to_string(), &path)
        })
        .collect()
}

/// The estimator configured with the generating family: raw drift, `eta`
/// fixed at 0 when there is no measurement noise, `eta0` fixed at 0 when
/// the initial state is exact, `x0`/`t0` known.
pub fn matching_model(spec: &TrajectorySpec, unit_ids: Vec<String>) -> Result<SdeModel> {
    let mut specs = vec![
        ParamSpec::free("beta0", spec.beta0 + 0.1 * spec.beta0.abs().max(0.1)),
        ParamSpec::free("beta1", spec.beta1 * 0.9),
    ];
    let n = &spec.noise;
    specs.push(if n.sigma_m == 0.0 {
        ParamSpec::fixed("eta", 0.0)
    } else {
        ParamSpec::free("eta", 0.5).bounded(0.0, 1.0)
    });
    specs.push(if n.sigma_0 == 0.0 {
        ParamSpec::fixed("eta0", 0.0)
    } else {
        ParamSpec::free("eta0", 1.0).bounded(0.0, f64::INFINITY)
    });
    let mut names: Vec<&str> = spec.transform.param_names();
    names.retain(|p| !["beta0", "beta1", "eta", "eta0"].contains(p));
    for (name, &v) in names.iter().zip(&spec.transform_params) {
        specs.push(ParamSpec::fixed(name, v));
    }
    let binding = ParameterBinding::new(specs, unit_ids)?;
    SdeModel::new(spec.transform.clone(), Drift::Raw, binding)
}

/// Per-replicate estimates of a simulate-then-fit study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub names: Vec<String>,
    pub truth: Vec<f64>,
    pub estimates: Vec<Vec<f64>>,
    pub converged: usize,
}

impl RecoveryReport {
    pub fn mean(&self, k: usize) -> f64 {
        self.estimates.iter().map(|e| e[k]).sum::<f64>() / self.estimates.len() as f64
    }

    /// Monte-Carlo standard error of the mean estimate.
    pub fn standard_error(&self, k: usize) -> f64 {
        let r = self.estimates.len() as f64;
        let m = self.mean(k);
        let var = self.estimates.iter().map(|e| (e[k] - m).powi(2)).sum::<f64>() / (r - 1.0);
        (var / r).sqrt()
    }

    /// `(mean − truth) / SE` for each parameter.
    pub fn z_scores(&self) -> Vec<f64> {
        (0..self.names.len())
            .map(|k| (self.mean(k) - self.truth[k]) / self.standard_error(k))
            .collect()
    }
}

/// Simulates `replicates` datasets of `n_units` units from `spec` (times
/// taken from the spec), fits each with [`matching_model`], and collects
/// the estimates. Replicate `r` uses seed `spec.seed + r`.
pub fn recovery_study(spec: &TrajectorySpec, n_units: usize, replicates: usize) -> Result<RecoveryReport> {
    let ids: Vec<String> = (1..=n_units).map(|j| j.to_string()).collect();
    let model = matching_model(spec, ids)?;
    let names = model.binding().flat_names();
    let truth: Vec<f64> = names
        .iter()
        .map(|n| match n.as_str() {
            "beta0" => spec.beta0,
            "beta1" => spec.beta1,
            "eta" => {
                let (p, m) = (spec.noise.sigma_p, spec.noise.sigma_m);
                m * m / (m * m + p * p)
            }
            "eta0" => {
                let (p, m) = (spec.noise.sigma_p, spec.noise.sigma_m);
                spec.noise.sigma_0.powi(2) / (m * m + p * p)
            }
            _ => f64::NAN,
        })
        .collect();
    let mut estimates = Vec::with_capacity(replicates);
    let mut converged = 0;
    for r in 0..replicates {
        let mut s = spec.clone();
        s.seed = spec.seed.wrapping_add(r as u64);
        let units = simulate_units(&s, n_units)?;
        let fit: FitResult = estimate::fit_sde(&model, &units, LsqOptions::default(), Strategy::Single)?;
        converged += usize::from(fit.converged);
        estimates.push(fit.theta);
    }
    Ok(RecoveryReport {
        names,
        truth,
        estimates,
        converged,
    })
}

/// `Σv²/σ²` over all units at the true parameters, with its degrees of
/// freedom; chi-square distributed when whitening is exact.
pub fn whitening_statistic(spec: &TrajectorySpec, units: &[UnitData]) -> Result<(f64, usize)> {
    let n = &spec.noise;
    let sigma2 = n.sigma_p * n.sigma_p + n.sigma_m * n.sigma_m;
    let params = SdeParams {
        eta: n.sigma_m * n.sigma_m / sigma2,
        eta0: n.sigma_0 * n.sigma_0 / sigma2,
        ..spec.sde_params()
    };
    let mut stat = 0.0;
    let mut dof = 0;
    for u in units {
        let w = sde::whiten_unit(
            &u.x,
            &u.t,
            &params,
            spec.transform.as_ref(),
            &spec.transform_params,
            &Default::default(),
        )?;
        stat += w.v.iter().map(|v| v * v).sum::<f64>() / sigma2;
        dof += w.v.len();
    }
    Ok((stat, dof))
}

/// Serialized simulation request, as read by the `simulate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    #[serde(default = "identity_name")]
    pub transform: String,
    #[serde(default)]
    pub transform_params: Vec<f64>,
    pub beta0: f64,
    pub beta1: f64,
    #[serde(default)]
    pub x0: f64,
    #[serde(default)]
    pub t0: f64,
    #[serde(default)]
    pub sigma_p: f64,
    #[serde(default)]
    pub sigma_m: f64,
    #[serde(default)]
    pub sigma_0: f64,
    pub times: Vec<f64>,
    #[serde(default = "one")]
    pub n_units: usize,
    #[serde(default)]
    pub seed: u64,
}

fn identity_name() -> String {
    "identity".into()
}

fn one() -> usize {
    1
}

impl SimulationSpec {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }

    pub fn to_trajectory(&self, registry: &TransformRegistry) -> Result<TrajectorySpec> {
        let transform = registry.get(&self.transform)?;
        let want = transform.param_names().len();
        if self.transform_params.len() != want {
            return Err(Error::Config(format!(
                "transform `{}` takes {want} parameter(s), got {}",
                self.transform,
                self.transform_params.len()
            )));
        }
        let spec = TrajectorySpec {
            beta0: self.beta0,
            beta1: self.beta1,
            x0: self.x0,
            t0: self.t0,
            noise: NoiseLevels {
                sigma_p: self.sigma_p,
                sigma_m: self.sigma_m,
                sigma_0: self.sigma_0,
            },
            times: self.times.clone(),
            transform,
            transform_params: self.transform_params.clone(),
            seed: self.seed,
        };
        spec.check()?;
        Ok(spec)
    }
}
