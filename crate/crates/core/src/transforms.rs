//! Invertible, differentiable changes of variable `y = φ(x, θ)` that reduce a
//! nonlinear SDE to the linear (Ornstein–Uhlenbeck) form.
//!
//! Each family is addressed by name from model configurations:
//!
//! | name                | parameters | y                    |
//! |---------------------|------------|----------------------|
//! | `identity`          |            | x                    |
//! | `box_cox`           | `lambda`   | (x^λ − 1)/λ, ln x    |
//! | `power_richards`    | `c`        | x^c                  |
//! | `richards_scale`    | `a`, `c`   | box_cox(x/a, c)      |
//! | `log_mult_richards` | `a`, `c`   | ln\|a^c − x^c\|      |
//!
//! Further families can be added at run time through [`TransformRegistry::register`],
//! either by implementing [`Transform`] or with an [`FnTransform`].

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Below this magnitude the Box–Cox shape exponent is treated as zero.
pub const BOX_COX_ZERO: f64 = 1e-9;

/// Smallest admissible |a^c − H^c| for the multiplicative-noise transform.
pub const LOG_MULT_GAP: f64 = 1e-12;

/// Box–Cox transform `(y^λ − 1)/λ`, continuous at `λ = 0` where it is `ln y`.
pub fn box_cox(y: f64, lambda: f64) -> Result<f64> {
    if !(y > 0.0) {
        return Err(Error::Domain {
            what: "box_cox",
            value: y,
        });
    }
    Ok(box_cox_positive(y, lambda))
}

fn box_cox_positive(y: f64, lambda: f64) -> f64 {
    if lambda.abs() < BOX_COX_ZERO {
        y.ln()
    } else {
        // expm1 keeps digits when λ ln y is tiny
        (lambda * y.ln()).exp_m1() / lambda
    }
}

/// Box–Cox applied to a regressor, which may be exactly zero when `λ > 0`
/// (the transform then equals `−1/λ`).
pub fn box_cox_regressor(x: f64, lambda: f64) -> Result<f64> {
    if x > 0.0 {
        Ok(box_cox_positive(x, lambda))
    } else if x == 0.0 && lambda >= BOX_COX_ZERO {
        Ok(-1.0 / lambda)
    } else {
        Err(Error::Domain {
            what: "box_cox_regressor",
            value: x,
        })
    }
}

/// `∂/∂y` of [`box_cox`]: `y^(λ−1)` for every λ.
pub fn box_cox_derivative(y: f64, lambda: f64) -> Result<f64> {
    if !(y > 0.0) {
        return Err(Error::Domain {
            what: "box_cox",
            value: y,
        });
    }
    Ok(y.powf(lambda - 1.0))
}

fn box_cox_inverse(z: f64, lambda: f64) -> Result<f64> {
    if lambda.abs() < BOX_COX_ZERO {
        return Ok(z.exp());
    }
    let base = 1.0 + lambda * z;
    if base > 0.0 {
        Ok(base.powf(1.0 / lambda))
    } else {
        Err(Error::NotInvertible("box_cox".into()))
    }
}

fn power(h: f64, c: f64) -> Result<f64> {
    if h >= 0.0 {
        return Ok(h.powf(c));
    }
    if c.fract() == 0.0 && c.abs() < i32::MAX as f64 {
        return Ok(h.powi(c as i32));
    }
    Err(Error::Domain {
        what: "power_richards",
        value: h,
    })
}

/// Richards-family transform of a size `H`.
///
/// Plain form is `H^c`; with `scale_aware` it is `box_cox(H/a, c)`, which keeps
/// `a` and the time scale proper scale parameters.
pub fn power_richards(h: f64, a: f64, c: f64, scale_aware: bool) -> Result<f64> {
    if scale_aware {
        if !(a > 0.0) {
            return Err(Error::Domain {
                what: "richards_scale (a)",
                value: a,
            });
        }
        // H = 0 is the usual starting size; finite when c > 0
        box_cox_regressor(h / a, c)
    } else {
        power(h, c)
    }
}

/// Lamperti transform for multiplicative Richards noise, `ln|a^c − H^c|`.
pub fn log_mult_richards(h: f64, a: f64, c: f64) -> Result<f64> {
    Ok(log_mult_gap(h, a, c)?.abs().ln())
}

fn log_mult_gap(h: f64, a: f64, c: f64) -> Result<f64> {
    if h < 0.0 || !(a > 0.0) {
        return Err(Error::Domain {
            what: "log_mult_richards",
            value: if h < 0.0 { h } else { a },
        });
    }
    let gap = a.powf(c) - h.powf(c);
    if !(gap.abs() >= LOG_MULT_GAP) {
        return Err(Error::Singularity { value: h, gap });
    }
    Ok(gap)
}

/// Derivative of [`log_mult_richards`] with respect to `H`.
pub fn log_mult_richards_derivative(h: f64, a: f64, c: f64) -> Result<f64> {
    let gap = log_mult_gap(h, a, c)?;
    Ok(-c * h.powf(c - 1.0) / gap)
}

/// A named scalar change of variables with an analytic derivative.
///
/// Parameters are passed positionally in the order of [`Transform::param_names`].
pub trait Transform: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn param_names(&self) -> Vec<&str>;
    fn eval(&self, x: f64, params: &[f64]) -> Result<f64>;
    fn derivative(&self, x: f64, params: &[f64]) -> Result<f64>;

    /// Inverse map, used to report simulated data on the original scale.
    fn inverse(&self, _y: f64, _params: &[f64]) -> Result<f64> {
        Err(Error::NotInvertible(self.name().to_string()))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Transform for Identity {
    fn name(&self) -> &str {
        "identity"
    }
    fn param_names(&self) -> Vec<&str> {
        Vec::new()
    }
    fn eval(&self, x: f64, _: &[f64]) -> Result<f64> {
        Ok(x)
    }
    fn derivative(&self, _: f64, _: &[f64]) -> Result<f64> {
        Ok(1.0)
    }
    fn inverse(&self, y: f64, _: &[f64]) -> Result<f64> {
        Ok(y)
    }
}

/// `box_cox` with parameter `lambda`.
#[derive(Debug, Clone, Copy, Default)]
pub struct BoxCox;

impl Transform for BoxCox {
    fn name(&self) -> &str {
        "box_cox"
    }
    fn param_names(&self) -> Vec<&str> {
        vec!["lambda"]
    }
    fn eval(&self, x: f64, p: &[f64]) -> Result<f64> {
        box_cox(x, p[0])
    }
    fn derivative(&self, x: f64, p: &[f64]) -> Result<f64> {
        box_cox_derivative(x, p[0])
    }
    fn inverse(&self, y: f64, p: &[f64]) -> Result<f64> {
        box_cox_inverse(y, p[0])
    }
}

/// `power_richards`: `H^c`.
#[derive(Debug, Clone, Copy, Default)]
pub struct PowerRichards;

impl Transform for PowerRichards {
    fn name(&self) -> &str {
        "power_richards"
    }
    fn param_names(&self) -> Vec<&str> {
        vec!["c"]
    }
    fn eval(&self, x: f64, p: &[f64]) -> Result<f64> {
        power(x, p[0])
    }
    fn derivative(&self, x: f64, p: &[f64]) -> Result<f64> {
        let c = p[0];
        Ok(c * power(x, c - 1.0)?)
    }
    fn inverse(&self, y: f64, p: &[f64]) -> Result<f64> {
        let c = p[0];
        if y > 0.0 && c != 0.0 {
            Ok(y.powf(1.0 / c))
        } else {
            Err(Error::NotInvertible(self.name().into()))
        }
    }
}

/// `richards_scale`: `box_cox(H/a, c)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct RichardsScale;

impl Transform for RichardsScale {
    fn name(&self) -> &str {
        "richards_scale"
    }
    fn param_names(&self) -> Vec<&str> {
        vec!["a", "c"]
    }
    fn eval(&self, x: f64, p: &[f64]) -> Result<f64> {
        power_richards(x, p[0], p[1], true)
    }
    fn derivative(&self, x: f64, p: &[f64]) -> Result<f64> {
        let (a, c) = (p[0], p[1]);
        if !(a > 0.0) || !(x > 0.0) {
            return Err(Error::Domain {
                what: "richards_scale",
                value: x,
            });
        }
        Ok((x / a).powf(c - 1.0) / a)
    }
    fn inverse(&self, y: f64, p: &[f64]) -> Result<f64> {
        Ok(p[0] * box_cox_inverse(y, p[1])?)
    }
}

/// `log_mult_richards`: `ln|a^c − H^c|`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogMultRichards;

impl Transform for LogMultRichards {
    fn name(&self) -> &str {
        "log_mult_richards"
    }
    fn param_names(&self) -> Vec<&str> {
        vec!["a", "c"]
    }
    fn eval(&self, x: f64, p: &[f64]) -> Result<f64> {
        log_mult_richards(x, p[0], p[1])
    }
    fn derivative(&self, x: f64, p: &[f64]) -> Result<f64> {
        log_mult_richards_derivative(x, p[0], p[1])
    }
    /// Inverts on the branch `H < a`.
    fn inverse(&self, y: f64, p: &[f64]) -> Result<f64> {
        let (a, c) = (p[0], p[1]);
        let base = a.powf(c) - y.exp();
        if base > 0.0 && c != 0.0 {
            Ok(base.powf(1.0 / c))
        } else {
            Err(Error::NotInvertible(self.name().into()))
        }
    }
}

type ScalarFn = dyn Fn(f64, &[f64]) -> Result<f64> + Send + Sync;

/// A transform assembled from closures, for registering families at run time.
pub struct FnTransform {
    name: String,
    params: Vec<String>,
    eval: Box<ScalarFn>,
    derivative: Box<ScalarFn>,
    inverse: Option<Box<ScalarFn>>,
}

impl FnTransform {
    pub fn new<F, D>(name: impl Into<String>, params: &[&str], eval: F, derivative: D) -> Self
    where
        F: Fn(f64, &[f64]) -> Result<f64> + Send + Sync + 'static,
        D: Fn(f64, &[f64]) -> Result<f64> + Send + Sync + 'static,
    {
        FnTransform {
            name: name.into(),
            params: params.iter().map(|s| s.to_string()).collect(),
            eval: Box::new(eval),
            derivative: Box::new(derivative),
            inverse: None,
        }
    }

    pub fn with_inverse<I>(mut self, inverse: I) -> Self
    where
        I: Fn(f64, &[f64]) -> Result<f64> + Send + Sync + 'static,
    {
        self.inverse = Some(Box::new(inverse));
        self
    }
}

impl fmt::Debug for FnTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnTransform")
            .field("name", &self.name)
            .field("params", &self.params)
            .finish_non_exhaustive()
    }
}

impl Transform for FnTransform {
    fn name(&self) -> &str {
        &self.name
    }
    fn param_names(&self) -> Vec<&str> {
        self.params.iter().map(String::as_str).collect()
    }
    fn eval(&self, x: f64, p: &[f64]) -> Result<f64> {
        (self.eval)(x, p)
    }
    fn derivative(&self, x: f64, p: &[f64]) -> Result<f64> {
        (self.derivative)(x, p)
    }
    fn inverse(&self, y: f64, p: &[f64]) -> Result<f64> {
        match &self.inverse {
            Some(inv) => inv(y, p),
            None => Err(Error::NotInvertible(self.name.clone())),
        }
    }
}

/// Name → family lookup.
#[derive(Debug, Clone)]
pub struct TransformRegistry {
    families: BTreeMap<String, Arc<dyn Transform>>,
}

impl Default for TransformRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl TransformRegistry {
    pub fn empty() -> Self {
        TransformRegistry {
            families: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(Identity));
        r.register(Arc::new(BoxCox));
        r.register(Arc::new(PowerRichards));
        r.register(Arc::new(RichardsScale));
        r.register(Arc::new(LogMultRichards));
        r
    }

    /// Adds or replaces a family under its own name.
    pub fn register(&mut self, family: Arc<dyn Transform>) {
        self.families.insert(family.name().to_string(), family);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Transform>> {
        self.families
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownTransform(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.families.keys().map(String::as_str)
    }
}
