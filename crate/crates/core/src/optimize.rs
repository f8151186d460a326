//! Bounded nonlinear least squares (Levenberg–Marquardt), a derivative-free
//! simplex minimizer for direct likelihood checks, and information criteria.
//!
//! Bounds are handled by a smooth change of variables rather than by
//! projection: a two-sided box `[l, u]` maps through a logistic, a one-sided
//! bound through an exponential. Maximum likelihood is invariant under such
//! reparametrizations, so the optimum is unchanged; parameters that end up on
//! a bound are reported through `at_bound`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closeness to a bound (original scale) that counts as "at the bound".
pub const AT_BOUND_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsqOptions {
    /// Relative RSS decrease below which an accepted step ends the fit.
    pub ftol: f64,
    /// Step-norm threshold, relative to the (internal) parameter norm.
    pub xtol: f64,
    /// Gradient threshold (∞-norm of `J'r`).
    pub gtol: f64,
    pub max_iter: usize,
}

impl Default for LsqOptions {
    fn default() -> Self {
        LsqOptions {
            ftol: 1e-10,
            xtol: 1e-10,
            gtol: 1e-14,
            max_iter: 500,
        }
    }
}

/// One coordinate of the bound-removing change of variables.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Coord {
    Free,
    Lower(f64),
    Upper(f64),
    Box(f64, f64),
    Pinned(f64),
}

impl Coord {
    fn new(lower: f64, upper: f64) -> Self {
        match (lower.is_finite(), upper.is_finite()) {
            (false, false) => Coord::Free,
            (true, false) => Coord::Lower(lower),
            (false, true) => Coord::Upper(upper),
            (true, true) if lower == upper => Coord::Pinned(lower),
            (true, true) => Coord::Box(lower, upper),
        }
    }

    fn to_external(self, w: f64) -> f64 {
        match self {
            Coord::Free => w,
            Coord::Lower(l) => l + w.exp(),
            Coord::Upper(u) => u - w.exp(),
            Coord::Box(l, u) => l + (u - l) / (1.0 + (-w).exp()),
            Coord::Pinned(v) => v,
        }
    }

    /// Internal coordinate; points on a bound are nudged just inside.
    fn to_internal(self, theta: f64) -> f64 {
        match self {
            Coord::Free => theta,
            Coord::Lower(l) => (theta - l).max(1e-8 * l.abs().max(1.0)).ln(),
            Coord::Upper(u) => (u - theta).max(1e-8 * u.abs().max(1.0)).ln(),
            Coord::Box(l, u) => {
                let s = ((theta - l) / (u - l)).clamp(1e-8, 1.0 - 1e-8);
                (s / (1.0 - s)).ln()
            }
            Coord::Pinned(_) => 0.0,
        }
    }
}

/// Bounded least-squares problem over a residual function.
pub struct FitProblem<F> {
    pub residuals: F,
    pub bounds: Vec<(f64, f64)>,
    pub start: Vec<f64>,
    pub options: LsqOptions,
}

impl<F> FitProblem<F>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    pub fn new(residuals: F, start: Vec<f64>) -> Self {
        let bounds = vec![(f64::NEG_INFINITY, f64::INFINITY); start.len()];
        FitProblem {
            residuals,
            bounds,
            start,
            options: LsqOptions::default(),
        }
    }

    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn with_options(mut self, options: LsqOptions) -> Self {
        self.options = options;
        self
    }
}

/// Outcome of [`fit_least_squares`].
#[derive(Debug, Clone, PartialEq)]
pub struct LsqFit {
    pub theta: Vec<f64>,
    pub residuals: Vec<f64>,
    pub rss: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub at_bound: Vec<bool>,
    /// RSS after every accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

fn sum_squares(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

struct Objective<'a, F> {
    f: &'a F,
    coords: Vec<Coord>,
    evaluations: usize,
}

impl<F> Objective<'_, F>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    fn external(&self, w: &[f64]) -> Vec<f64> {
        self.coords
            .iter()
            .zip(w)
            .map(|(c, &w)| c.to_external(w))
            .collect()
    }

    /// Residuals at internal point `w`; `None` marks an infeasible point.
    fn eval(&mut self, w: &[f64], m: Option<usize>) -> Option<Vec<f64>> {
        self.evaluations += 1;
        let r = (self.f)(&self.external(w)).ok()?;
        if r.iter().all(|x| x.is_finite()) && m.map_or(true, |m| m == r.len()) {
            Some(r)
        } else {
            None
        }
    }

    fn jacobian(&mut self, w: &[f64], r: &[f64]) -> DMatrix<f64> {
        let m = r.len();
        let mut jac = DMatrix::zeros(m, w.len());
        let mut probe = w.to_vec();
        for k in 0..w.len() {
            if matches!(self.coords[k], Coord::Pinned(_)) {
                continue;
            }
            let h = f64::max(1e-7, 1e-7 * w[k].abs());
            probe[k] = w[k] + h;
            let (col, step) = match self.eval(&probe, Some(m)) {
                Some(rp) => (rp, h),
                None => {
                    probe[k] = w[k] - h;
                    match self.eval(&probe, Some(m)) {
                        Some(rm) => (rm, -h),
                        None => {
                            probe[k] = w[k];
                            continue;
                        }
                    }
                }
            };
            for i in 0..m {
                jac[(i, k)] = (col[i] - r[i]) / step;
            }
            probe[k] = w[k];
        }
        jac
    }
}

/// Minimizes `Σ r(θ)²` within box bounds by Levenberg–Marquardt with a
/// forward-difference Jacobian. Infeasible trial points (errors or
/// non-finite residuals) are treated as rejected steps.
pub fn fit_least_squares<F>(problem: &FitProblem<F>) -> Result<LsqFit>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let p = problem.start.len();
    if problem.bounds.len() != p {
        return Err(Error::LengthMismatch {
            expected: p,
            actual: problem.bounds.len(),
        });
    }
    for (k, (&s, &(lo, hi))) in problem.start.iter().zip(&problem.bounds).enumerate() {
        if !(s >= lo && s <= hi) {
            return Err(Error::InfeasibleStart(format!(
                "parameter {k}: {s} outside [{lo}, {hi}]"
            )));
        }
    }
    let coords: Vec<Coord> = problem.bounds.iter().map(|&(l, u)| Coord::new(l, u)).collect();
    let mut w: Vec<f64> = coords
        .iter()
        .zip(&problem.start)
        .map(|(c, &t)| c.to_internal(t))
        .collect();
    let mut obj = Objective {
        f: &problem.residuals,
        coords,
        evaluations: 0,
    };
    let mut r = match (problem.residuals)(&obj.external(&w)) {
        Ok(r) if r.iter().all(|x| x.is_finite()) => r,
        Ok(_) => return Err(Error::InfeasibleStart("non-finite residuals at start".into())),
        Err(e) => return Err(Error::InfeasibleStart(e.to_string())),
    };
    obj.evaluations += 1;
    let m = r.len();
    let opts = problem.options;
    let mut rss = sum_squares(&r);
    let mut history = vec![rss];
    let mut mu = -1.0;
    let mut nu = 2.0;
    let mut converged = false;
    let mut iterations = 0;

    'outer: while iterations < opts.max_iter {
        if rss == 0.0 {
            converged = true;
            break;
        }
        iterations += 1;
        let jac = obj.jacobian(&w, &r);
        let jt = jac.transpose();
        let a = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        if g.amax() <= opts.gtol {
            converged = true;
            break;
        }
        let scale: Vec<f64> = (0..p).map(|k| a[(k, k)].max(1e-12)).collect();
        if mu < 0.0 {
            mu = 1e-3;
        }
        loop {
            let mut lhs = a.clone();
            for k in 0..p {
                lhs[(k, k)] += mu * scale[k];
            }
            let Some(chol) = lhs.cholesky() else {
                mu *= nu;
                nu *= 2.0;
                continue;
            };
            let delta = chol.solve(&(-&g));
            let w_new: Vec<f64> = w.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            let step_small = delta.norm() <= opts.xtol * (DVector::from_column_slice(&w).norm() + opts.xtol);
            match obj.eval(&w_new, Some(m)) {
                Some(r_new) => {
                    let rss_new = sum_squares(&r_new);
                    if rss_new < rss {
                        let predicted: f64 = (0..p)
                            .map(|k| delta[k] * (mu * scale[k] * delta[k] - g[k]))
                            .sum();
                        let rho = (rss - rss_new) / predicted.max(f64::MIN_POSITIVE);
                        let rel = (rss - rss_new) / rss;
                        w = w_new;
                        r = r_new;
                        rss = rss_new;
                        history.push(rss);
                        mu *= f64::max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0).powi(3));
                        nu = 2.0;
                        if rel <= opts.ftol || step_small {
                            converged = true;
                            break 'outer;
                        }
                        break;
                    }
                    if step_small {
                        converged = true;
                        break 'outer;
                    }
                }
                None if step_small => {
                    converged = true;
                    break 'outer;
                }
                None => {}
            }
            mu *= nu;
            nu *= 2.0;
            if mu > 1e30 {
                // no descent direction left at working precision
                converged = true;
                break 'outer;
            }
        }
    }

    let theta = obj.external(&w);
    let at_bound = theta
        .iter()
        .zip(&problem.bounds)
        .map(|(&t, &(lo, hi))| (t - lo).abs() <= AT_BOUND_TOL || (hi - t).abs() <= AT_BOUND_TOL)
        .collect();
    Ok(LsqFit {
        theta,
        residuals: r,
        rss,
        iterations,
        evaluations: obj.evaluations,
        converged,
        at_bound,
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    /// Relative spread of simplex values that ends a pass.
    pub ftol: f64,
    pub max_evaluations: usize,
    /// Fresh simplices built around the incumbent after a pass converges.
    pub restarts: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            ftol: 1e-12,
            max_evaluations: 200_000,
            restarts: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexFit {
    pub theta: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Nelder–Mead minimization of `f` inside box bounds (points outside the box
/// score `+∞`). Each pass starts from a fresh simplex around the incumbent;
/// the search stops once a pass no longer improves it.
pub fn nelder_mead<F>(
    f: F,
    start: &[f64],
    bounds: &[(f64, f64)],
    options: SimplexOptions,
) -> Result<SimplexFit>
where
    F: Fn(&[f64]) -> f64,
{
    let p = start.len();
    if bounds.len() != p {
        return Err(Error::LengthMismatch {
            expected: p,
            actual: bounds.len(),
        });
    }
    let evaluations = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evaluations.set(evaluations.get() + 1);
        let inside = x.iter().zip(bounds).all(|(&v, &(l, u))| v >= l && v <= u);
        let v = if inside { f(x) } else { f64::INFINITY };
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut best = start.to_vec();
    let mut best_val = eval(&best);
    if !best_val.is_finite() {
        return Err(Error::InfeasibleStart("objective not finite at start".into()));
    }
    let mut converged = false;
    for pass in 0..=options.restarts {
        let scale = if pass == 0 { 0.1 } else { 0.02 };
        let mut simplex: Vec<Vec<f64>> = vec![best.clone()];
        for k in 0..p {
            let mut v = best.clone();
            let step = if v[k] != 0.0 { scale * v[k].abs() } else { 0.00025 };
            v[k] += step;
            if v[k] > bounds[k].1 {
                v[k] = best[k] - step;
            }
            simplex.push(v);
        }
        let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();
        let pass_start = best_val;
        loop {
            let mut order: Vec<usize> = (0..=p).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();
            let (lo, hi) = (values[0], values[p]);
            if (hi - lo).abs() <= options.ftol * (lo.abs() + options.ftol) {
                break;
            }
            if evaluations.get() >= options.max_evaluations {
                break;
            }
            let centroid: Vec<f64> = (0..p)
                .map(|k| simplex[..p].iter().map(|v| v[k]).sum::<f64>() / p as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[p])
                    .map(|(c, w)| c + t * (w - c))
                    .collect()
            };
            let xr = along(-1.0);
            let fr = eval(&xr);
            if fr < values[0] {
                let xe = along(-2.0);
                let fe = eval(&xe);
                if fe < fr {
                    simplex[p] = xe;
                    values[p] = fe;
                } else {
                    simplex[p] = xr;
                    values[p] = fr;
                }
                continue;
            }
            if fr < values[p - 1] {
                simplex[p] = xr;
                values[p] = fr;
                continue;
            }
            let (xc, fc) = if fr < values[p] {
                let x = along(-0.5);
                let v = eval(&x);
                (x, v)
            } else {
                let x = along(0.5);
                let v = eval(&x);
                (x, v)
            };
            if fc < values[p].min(fr) {
                simplex[p] = xc;
                values[p] = fc;
                continue;
            }
            for i in 1..=p {
                let shrunk: Vec<f64> = simplex[0]
                    .iter()
                    .zip(&simplex[i])
                    .map(|(b, v)| b + 0.5 * (v - b))
                    .collect();
                values[i] = eval(&shrunk);
                simplex[i] = shrunk;
            }
        }
        let i = (0..=p).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
        if values[i] < best_val {
            best = simplex[i].clone();
            best_val = values[i];
        }
        if evaluations.get() >= options.max_evaluations {
            break;
        }
        if pass > 0 && pass_start - best_val <= options.ftol * (best_val.abs() + options.ftol) {
            converged = true;
            break;
        }
    }
    Ok(SimplexFit {
        theta: best,
        value: best_val,
        evaluations: evaluations.get(),
        converged,
    })
}

/// Direct minimization of an exact negative log-likelihood, for checking
/// the least-squares route.
pub fn fit_direct_nll<F>(nll: F, start: &[f64], bounds: &[(f64, f64)]) -> Result<SimplexFit>
where
    F: Fn(&[f64]) -> f64,
{
    nelder_mead(nll, start, bounds, SimplexOptions::default())
}

/// `(AIC, BIC)`; `df` counts every estimated parameter including σ.
pub fn information_criteria(log_likelihood: f64, df: usize, n: usize) -> (f64, f64) {
    let df = df as f64;
    (
        2.0 * df - 2.0 * log_likelihood,
        df * (n as f64).ln() - 2.0 * log_likelihood,
    )
}
