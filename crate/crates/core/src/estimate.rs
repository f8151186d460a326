//! Model-level fitting: least-squares minimization of `Σu²`, σ recovery,
//! information criteria, and direct-likelihood cross-checks.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gaussian;
use crate::hierarchy::{SdeModel, UnitData};
use crate::optimize::{self, FitProblem, LsqFit, LsqOptions, SimplexFit};
use crate::regression::{self, BoxCoxRegression};
use crate::sde::{self, NoiseLevels};

/// How a fit is staged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    Single,
    /// Fit with `eta` held at 0.5, then free it from that solution.
    TwoStage,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "single" => Ok(Strategy::Single),
            "two-stage" => Ok(Strategy::TwoStage),
            other => Err(format!("unknown strategy `{other}` (single | two-stage)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Flat optimizer vector and its names (`a[301]` for local entries).
    pub names: Vec<String>,
    pub theta: Vec<f64>,
    pub rss: f64,
    pub log_likelihood: f64,
    /// Total `σ̂`.
    pub sigma: f64,
    pub sigma_p: Option<f64>,
    pub sigma_m: Option<f64>,
    pub sigma_0: Option<f64>,
    /// `σ̂²` with the `n − df + 1` denominator, for reference only.
    pub sigma2_unbiased: Option<f64>,
    pub aic: f64,
    pub bic: f64,
    /// Estimated parameters including σ.
    pub df: usize,
    pub n: usize,
    pub iterations: usize,
    pub converged: bool,
    pub at_bound: Vec<bool>,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|k| self.theta[k])
    }

    /// Every entry of a (possibly local) parameter, in unit order.
    pub fn values_of(&self, name: &str) -> Vec<f64> {
        let prefix = format!("{name}[");
        self.names
            .iter()
            .zip(&self.theta)
            .filter(|(n, _)| *n == name || n.starts_with(&prefix))
            .map(|(_, &v)| v)
            .collect()
    }

    pub fn is_at_bound(&self, name: &str) -> Option<bool> {
        self.names.iter().position(|n| n == name).map(|k| self.at_bound[k])
    }
}

fn assemble(
    names: Vec<String>,
    lsq: &LsqFit,
    u: &gaussian::UVector,
    noise: Option<sde::FinalStats>,
    iterations: usize,
) -> FitResult {
    let n = u.n();
    let df = lsq.theta.len() + 1;
    let log_likelihood = gaussian::log_likelihood_at_optimum(u);
    let (aic, bic) = optimize::information_criteria(log_likelihood, df, n);
    FitResult {
        names,
        theta: lsq.theta.clone(),
        rss: lsq.rss,
        log_likelihood: noise.map_or(log_likelihood, |s| s.log_likelihood),
        sigma: gaussian::sigma2_hat(u).sigma,
        sigma_p: noise.map(|s| s.sigma_p),
        sigma_m: noise.map(|s| s.sigma_m),
        sigma_0: noise.map(|s| s.sigma_0),
        sigma2_unbiased: gaussian::sigma2_hat_unbiased(u, df - 1),
        aic,
        bic,
        df,
        n,
        iterations,
        converged: lsq.converged,
        at_bound: lsq.at_bound.clone(),
    }
}

/// Least-squares fit of a (possibly hierarchical) SDE model.
pub fn fit_sde(
    model: &SdeModel,
    units: &[UnitData],
    options: LsqOptions,
    strategy: Strategy,
) -> Result<FitResult> {
    let binding = model.binding();
    let mut start = binding.start();
    let mut iterations = 0;
    let eta_free = binding
        .index_of("eta")
        .map(|k| !binding.specs()[k].fixed)
        .unwrap_or(false);
    if strategy == Strategy::TwoStage && eta_free {
        // rebind drops any prior: it is defined on the full flat vector
        let warm_model = model.rebind(binding.with_fixed("eta", 0.5)?)?;
        let stage = run_lsq(&warm_model, units, warm_model.binding().start(), options)?;
        iterations += stage.iterations;
        start = binding.carry_over(warm_model.binding(), &stage.theta)?;
    }
    let lsq = run_lsq(model, units, start, options)?;
    iterations += lsq.iterations;
    let u = model.likelihood_uvector(units, &lsq.theta)?;
    let stats = model.final_stats(units, &lsq.theta)?;
    let mut result = assemble(binding.flat_names(), &lsq, &u, Some(stats), iterations);
    // with a prior the minimized objective differs from the likelihood RSS
    result.rss = lsq.rss;
    Ok(result)
}

fn run_lsq(model: &SdeModel, units: &[UnitData], start: Vec<f64>, options: LsqOptions) -> Result<LsqFit> {
    let problem = FitProblem::new(|flat: &[f64]| Ok(model.uvector(units, flat)?.u), start)
        .with_bounds(model.binding().bounds())
        .with_options(options);
    optimize::fit_least_squares(&problem)
}

/// Least-squares fit of the Box–Cox regression.
pub fn fit_regression(
    model: &BoxCoxRegression,
    start: [f64; 4],
    options: LsqOptions,
) -> Result<FitResult> {
    let problem = FitProblem::new(|th: &[f64]| Ok(model.uvector(th)?.u), start.to_vec())
        .with_options(options);
    let lsq = optimize::fit_least_squares(&problem)?;
    let u = model.uvector(&lsq.theta)?;
    let names = regression::PARAM_NAMES.iter().map(|s| s.to_string()).collect();
    Ok(assemble(names, &lsq, &u, None, lsq.iterations))
}

/// Direct simplex minimization of the regression's exact `−ln L` over
/// `(β₀, β₁, λ_x, λ_y, σ)`.
pub fn fit_direct_regression(model: &BoxCoxRegression, start: [f64; 5]) -> Result<SimplexFit> {
    let nll = |th: &[f64]| model.negative_log_likelihood(th).unwrap_or(f64::INFINITY);
    optimize::fit_direct_nll(nll, &start, &[(f64::NEG_INFINITY, f64::INFINITY); 5])
}

/// Exact `−ln L` of an SDE model from dense per-unit covariances, with the
/// noise given on the absolute `(σ_p, σ_m, σ₀)` scale instead of `(σ², η, η₀)`.
/// The model's own `eta`/`eta0` values are ignored.
pub fn sde_negative_log_likelihood(
    model: &SdeModel,
    units: &[UnitData],
    flat: &[f64],
    noise: &NoiseLevels,
) -> Result<f64> {
    let mut total = 0.0;
    for (j, unit) in units.iter().enumerate() {
        let values = model.binding().resolve(flat, j)?;
        let m = model.unit_model(&values, unit);
        total += sde::dense_negative_log_likelihood(
            &unit.x,
            &unit.t,
            m.sde.beta0,
            m.sde.beta1,
            m.sde.x0,
            m.sde.t0,
            noise,
            &m.multipliers,
            model.transform().as_ref(),
            &m.transform_params,
        )
        .map_err(|e| e.in_unit(&unit.id))?;
    }
    Ok(total)
}

/// Direct simplex fit over the structural flat vector followed by
/// `σ_p, σ_m` (signs are immaterial). `eta`/`eta0` should be fixed in the
/// model's binding, since the noise is carried by the two extra entries.
pub fn fit_direct_sde(
    model: &SdeModel,
    units: &[UnitData],
    start: &[f64],
    sigma_start: (f64, f64),
) -> Result<SimplexFit> {
    let p = start.len();
    let mut x0 = start.to_vec();
    x0.extend([sigma_start.0, sigma_start.1]);
    let mut bounds = model.binding().bounds();
    bounds.extend([(f64::NEG_INFINITY, f64::INFINITY); 2]);
    let nll = |th: &[f64]| {
        let noise = NoiseLevels {
            sigma_p: th[p].abs(),
            sigma_m: th[p + 1].abs(),
            sigma_0: 0.0,
        };
        sde_negative_log_likelihood(model, units, &th[..p], &noise).unwrap_or(f64::INFINITY)
    };
    optimize::fit_direct_nll(nll, &x0, &bounds)
}
