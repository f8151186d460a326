//! Univariate linear SDE `dY = (β₀ + β₁Y)dt + σ_p dW` observed with
//! measurement error, `y_i = φ(x_i) = Y(t_i) + ε_i`.
//!
//! Conditional residuals `z_i = y_i − E[y_i | y_{i−1}]` have unit Jacobian
//! with respect to `y` and a tridiagonal covariance `σ² C`, with
//! `σ² = σ_m² + σ_p²`, `η = σ_m²/σ²`, `η₀ = σ₀²/σ²`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::{self, TridiagonalCovariance, UVector};
use crate::transforms::Transform;

/// `|β₁|` below this selects the `β₁ = 0` formulas.
pub const BETA1_ZERO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdeParams {
    pub beta0: f64,
    pub beta1: f64,
    /// Relative measurement variance `σ_m²/σ²`, in `[0, 1]`.
    pub eta: f64,
    /// Relative initial-condition variance `σ₀²/σ²`.
    pub eta0: f64,
    /// Initial state on the original scale.
    pub x0: f64,
    pub t0: f64,
}

impl Default for SdeParams {
    fn default() -> Self {
        SdeParams {
            beta0: 0.0,
            beta1: 0.0,
            eta: 0.0,
            eta0: 0.0,
            x0: 0.0,
            t0: 0.0,
        }
    }
}

impl SdeParams {
    pub fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!("eta = {} outside [0, 1]", self.eta)));
        }
        if !(self.eta0 >= 0.0) {
            return Err(Error::Config(format!("eta0 = {} is negative", self.eta0)));
        }
        Ok(())
    }
}

/// Per-unit σ multipliers `σ_m = μ_m σ_M`, `σ₀ = μ₀ σ_Z`, `σ_p = μ_p σ_P`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Multipliers {
    pub m: f64,
    pub zero: f64,
    pub p: f64,
}

impl Default for Multipliers {
    fn default() -> Self {
        Multipliers {
            m: 1.0,
            zero: 1.0,
            p: 1.0,
        }
    }
}

/// `expm1(x)/x`, equal to 1 at 0.
pub fn exprel(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else if x.abs() < 1e-5 {
        // the quotient loses digits before expm1 does
        1.0 + x / 2.0 * (1.0 + x / 3.0 * (1.0 + x / 4.0))
    } else {
        x.exp_m1() / x
    }
}

/// `(e^{2β₁Δ} − 1)/(2β₁)`, tending to `Δ` as `β₁ → 0`.
pub fn variance_growth(beta1: f64, dt: f64) -> f64 {
    dt * exprel(2.0 * beta1 * dt)
}

/// Conditional residuals and their time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalResiduals {
    pub z: Vec<f64>,
    pub dt: Vec<f64>,
}

/// `z_i = y_i + β₀/β₁ − e^{β₁Δ_i}(y_{i−1} + β₀/β₁)`, with `y₀` the transformed
/// initial state; `z_i = y_i − y_{i−1} − β₀Δ_i` when `β₁ = 0`.
///
/// Evaluated as `y_i − e^{β₁Δ}y_{i−1} − β₀Δ·expm1(β₁Δ)/(β₁Δ)`, which covers both
/// branches without cancellation.
pub fn conditional_residuals(
    y: &[f64],
    t: &[f64],
    y0: f64,
    params: &SdeParams,
) -> Result<ConditionalResiduals> {
    if y.len() != t.len() {
        return Err(Error::LengthMismatch {
            expected: y.len(),
            actual: t.len(),
        });
    }
    let mut z = Vec::with_capacity(y.len());
    let mut dt = Vec::with_capacity(y.len());
    let (mut prev_t, mut prev_y) = (params.t0, y0);
    let b1 = if params.beta1.abs() < BETA1_ZERO {
        0.0
    } else {
        params.beta1
    };
    for (i, (&yi, &ti)) in y.iter().zip(t).enumerate() {
        let d = ti - prev_t;
        if !(d > 0.0) {
            return Err(Error::NonIncreasingTime { index: i, time: ti });
        }
        let decay = (b1 * d).exp();
        z.push(yi - decay * prev_y - params.beta0 * d * exprel(b1 * d));
        dt.push(d);
        prev_t = ti;
        prev_y = yi;
    }
    Ok(ConditionalResiduals { z, dt })
}

/// Non-zero entries of `C` (so that `Var z = σ² C`) for one unit.
pub fn covariance_entries(
    dt: &[f64],
    params: &SdeParams,
    mult: &Multipliers,
) -> TridiagonalCovariance {
    let n = dt.len();
    let b1 = if params.beta1.abs() < BETA1_ZERO {
        0.0
    } else {
        params.beta1
    };
    let m = mult.m * mult.m * params.eta;
    let zero = mult.zero * mult.zero * params.eta0;
    let p = mult.p * mult.p * (1.0 - params.eta);
    let mut diag = Vec::with_capacity(n);
    let mut sub = Vec::with_capacity(n);
    for (i, &d) in dt.iter().enumerate() {
        let ex = (b1 * d).exp();
        let ex2 = ex * ex;
        let process = p * variance_growth(b1, d);
        if i == 0 {
            diag.push(ex2 * zero + m + process);
            sub.push(0.0);
        } else {
            diag.push((ex2 + 1.0) * m + process);
            sub.push(-ex * m);
        }
    }
    TridiagonalCovariance { diag, sub }
}

/// One unit's whitened residuals `v = L⁻¹z` and `ln J = Σ ln|φ'(x_i)| − ln|L|`.
#[derive(Debug, Clone, PartialEq)]
pub struct WhitenedUnit {
    pub v: Vec<f64>,
    pub log_jacobian: f64,
}

/// Sorts `(t, x)` pairs by time (stable), rejecting repeated times.
pub fn sort_by_time(x: &[f64], t: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() != t.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            actual: t.len(),
        });
    }
    let mut idx: Vec<usize> = (0..t.len()).collect();
    idx.sort_by(|&a, &b| t[a].total_cmp(&t[b]));
    for w in idx.windows(2) {
        if t[w[0]] == t[w[1]] {
            return Err(Error::DuplicateTime { time: t[w[0]] });
        }
    }
    Ok((
        idx.iter().map(|&i| x[i]).collect(),
        idx.iter().map(|&i| t[i]).collect(),
    ))
}

/// Whitens one unit's observations. `x`, `t` need not be sorted.
pub fn whiten_unit(
    x: &[f64],
    t: &[f64],
    params: &SdeParams,
    transform: &dyn Transform,
    transform_params: &[f64],
    mult: &Multipliers,
) -> Result<WhitenedUnit> {
    if x.is_empty() {
        return Err(Error::LengthMismatch {
            expected: 1,
            actual: 0,
        });
    }
    let (x, t) = sort_by_time(x, t)?;
    let mut y = Vec::with_capacity(x.len());
    let mut log_phi = 0.0;
    for &xi in &x {
        y.push(transform.eval(xi, transform_params)?);
        log_phi += transform.derivative(xi, transform_params)?.abs().ln();
    }
    let y0 = transform.eval(params.x0, transform_params)?;
    let cr = conditional_residuals(&y, &t, y0, params)?;
    let cov = covariance_entries(&cr.dt, params, mult);
    let (logdet, v) = if cov.is_diagonal() {
        // process-noise-only: independent increments
        let mut logdet = 0.0;
        let mut v = Vec::with_capacity(cr.z.len());
        for (i, (&zi, &c)) in cr.z.iter().zip(&cov.diag).enumerate() {
            if !(c > 0.0) {
                return Err(Error::NotPositiveDefinite { index: i, pivot: c });
            }
            let l = c.sqrt();
            logdet += l.ln();
            v.push(zi / l);
        }
        (logdet, v)
    } else {
        cov.logdet_and_solve(&cr.z)?
    };
    Ok(WhitenedUnit {
        v,
        log_jacobian: log_phi - logdet,
    })
}

/// The vector whose sum of squares is minimized, for a single unit.
pub fn uvector(
    x: &[f64],
    t: &[f64],
    params: &SdeParams,
    transform: &dyn Transform,
    transform_params: &[f64],
) -> Result<UVector> {
    let w = whiten_unit(
        x,
        t,
        params,
        transform,
        transform_params,
        &Multipliers::default(),
    )?;
    Ok(UVector::from_whitened(w.v, w.log_jacobian))
}

/// σ estimates and the maximized log-likelihood at an optimum.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FinalStats {
    pub sigma2: f64,
    pub sigma_p: f64,
    pub sigma_m: f64,
    pub sigma_0: f64,
    pub log_likelihood: f64,
}

pub fn final_stats(u: &UVector, eta: f64, eta0: f64) -> FinalStats {
    let sigma2 = gaussian::sigma2_hat(u).sigma2;
    FinalStats {
        sigma2,
        sigma_p: ((1.0 - eta) * sigma2).sqrt(),
        sigma_m: (eta * sigma2).sqrt(),
        sigma_0: (eta0 * sigma2).sqrt(),
        log_likelihood: gaussian::log_likelihood_at_optimum(u),
    }
}

/// Absolute-scale noise levels for the direct likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevels {
    pub sigma_p: f64,
    pub sigma_m: f64,
    pub sigma_0: f64,
}

/// Exact negative log-likelihood of the original observations, built from
/// the dense covariance of `y = φ(x)` itself (no conditional residuals, no
/// banded factorization). Used to cross-check the least-squares route.
pub fn dense_negative_log_likelihood(
    x: &[f64],
    t: &[f64],
    beta0: f64,
    beta1: f64,
    x0: f64,
    t0: f64,
    noise: &NoiseLevels,
    mult: &Multipliers,
    transform: &dyn Transform,
    transform_params: &[f64],
) -> Result<f64> {
    let (x, t) = sort_by_time(x, t)?;
    let n = x.len();
    let y0 = transform.eval(x0, transform_params)?;
    let sp2 = (mult.p * noise.sigma_p).powi(2);
    let sm2 = (mult.m * noise.sigma_m).powi(2);
    let s02 = (mult.zero * noise.sigma_0).powi(2);
    let mut resid = DVector::zeros(n);
    let mut log_phi = 0.0;
    for i in 0..n {
        let s = t[i] - t0;
        if !(s > 0.0) {
            return Err(Error::NonIncreasingTime { index: i, time: t[i] });
        }
        let mean = y0 * (beta1 * s).exp() + beta0 * s * exprel(beta1 * s);
        resid[i] = transform.eval(x[i], transform_params)? - mean;
        log_phi += transform.derivative(x[i], transform_params)?.abs().ln();
    }
    let cov = DMatrix::from_fn(n, n, |i, j| {
        let (si, sj) = (t[i] - t0, t[j] - t0);
        let m = si.min(sj);
        let process = sp2 * (beta1 * (si + sj - 2.0 * m)).exp() * variance_growth(beta1, m);
        let initial = s02 * (beta1 * (si + sj)).exp();
        let meas = if i == j { sm2 } else { 0.0 };
        process + initial + meas
    });
    let chol = cov.cholesky().ok_or(Error::NotPositiveDefinite {
        index: 0,
        pivot: f64::NAN,
    })?;
    let l = chol.l();
    let logdet: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
    let w = l
        .solve_lower_triangular(&resid)
        .ok_or(Error::Singular("dense covariance"))?;
    let quad = w.norm_squared();
    Ok(0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + 0.5 * quad - log_phi)
}
