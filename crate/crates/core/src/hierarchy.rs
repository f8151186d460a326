//! Multi-unit (longitudinal) models: global and fixed-local parameters, σ
//! multipliers, and the concatenated u-vector under a shared σ².

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{self, PriorDensity, UVector};
use crate::sde::{self, FinalStats, Multipliers, SdeParams, WhitenedUnit};
use crate::transforms::Transform;

/// Observations of one unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitData {
    pub id: String,
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub t0: f64,
    pub x0: f64,
}

impl UnitData {
    pub fn new(id: impl Into<String>, t: Vec<f64>, x: Vec<f64>) -> Self {
        UnitData {
            id: id.into(),
            t,
            x,
            t0: 0.0,
            x0: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    #[default]
    Global,
    Local,
}

/// A named model parameter as seen by the optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub start: f64,
    /// Omitted in JSON when unbounded.
    #[serde(default = "neg_inf", skip_serializing_if = "is_infinite")]
    pub lower: f64,
    #[serde(default = "pos_inf", skip_serializing_if = "is_infinite")]
    pub upper: f64,
    #[serde(default)]
    pub fixed: bool,
    #[serde(default)]
    pub scope: Scope,
}

fn neg_inf() -> f64 {
    f64::NEG_INFINITY
}
fn pos_inf() -> f64 {
    f64::INFINITY
}
fn is_infinite(v: &f64) -> bool {
    v.is_infinite()
}

impl ParamSpec {
    pub fn free(name: &str, start: f64) -> Self {
        ParamSpec {
            name: name.to_string(),
            start,
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            fixed: false,
            scope: Scope::Global,
        }
    }

    pub fn fixed(name: &str, value: f64) -> Self {
        ParamSpec {
            fixed: true,
            ..Self::free(name, value)
        }
    }

    pub fn bounded(mut self, lower: f64, upper: f64) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn local(mut self) -> Self {
        self.scope = Scope::Local;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    Fixed(f64),
    Global(usize),
    /// Offset of the first unit's entry.
    Local(usize),
}

/// Maps the optimizer's flat vector to per-unit named values.
///
/// Flat layout: free globals in declaration order, then each free local
/// parameter in declaration order with one entry per unit (units in
/// dataset order).
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBinding {
    specs: Vec<ParamSpec>,
    units: Vec<String>,
    slots: Vec<Slot>,
    n_free: usize,
}

impl ParameterBinding {
    pub fn new(specs: Vec<ParamSpec>, units: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &specs {
            if !seen.insert(s.name.as_str()) {
                return Err(Error::Binding(format!("parameter `{}` declared twice", s.name)));
            }
            if (s.name == "eta" || s.name == "eta0") && s.scope == Scope::Local {
                return Err(Error::LocalEta(s.name.clone()));
            }
            if !(s.lower <= s.upper) {
                return Err(Error::Binding(format!("`{}`: lower bound above upper", s.name)));
            }
            if !s.fixed && !(s.start >= s.lower && s.start <= s.upper) {
                return Err(Error::InfeasibleStart(format!(
                    "`{}` start {} outside [{}, {}]",
                    s.name, s.start, s.lower, s.upper
                )));
            }
        }
        if units.is_empty() {
            return Err(Error::Binding("no units".into()));
        }
        let mut slots = vec![Slot::Fixed(0.0); specs.len()];
        let mut next = 0;
        for (i, s) in specs.iter().enumerate() {
            slots[i] = if s.fixed {
                Slot::Fixed(s.start)
            } else if s.scope == Scope::Global {
                next += 1;
                Slot::Global(next - 1)
            } else {
                continue;
            };
        }
        for (i, s) in specs.iter().enumerate() {
            if !s.fixed && s.scope == Scope::Local {
                slots[i] = Slot::Local(next);
                next += units.len();
            }
        }
        Ok(ParameterBinding {
            specs,
            units,
            slots,
            n_free: next,
        })
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    /// Values of every declared parameter for unit `unit`, aligned with
    /// [`Self::specs`].
    pub fn resolve(&self, flat: &[f64], unit: usize) -> Result<Vec<f64>> {
        if flat.len() != self.n_free {
            return Err(Error::LengthMismatch {
                expected: self.n_free,
                actual: flat.len(),
            });
        }
        if unit >= self.units.len() {
            return Err(Error::Binding(format!("unit index {unit} out of range")));
        }
        Ok(self
            .slots
            .iter()
            .map(|slot| match *slot {
                Slot::Fixed(v) => v,
                Slot::Global(i) => flat[i],
                Slot::Local(off) => flat[off + unit],
            })
            .collect())
    }

    /// Same as [`Self::resolve`], addressed by unit id.
    pub fn resolve_unit(&self, flat: &[f64], unit_id: &str) -> Result<Vec<f64>> {
        let j = self
            .units
            .iter()
            .position(|u| u == unit_id)
            .ok_or_else(|| Error::Binding(format!("unknown unit `{unit_id}`")))?;
        self.resolve(flat, j)
    }

    /// Inverse of [`Self::resolve`] over all units. Local values are taken
    /// from each unit's row, globals from the first row.
    pub fn flatten(&self, resolved: &[Vec<f64>]) -> Result<Vec<f64>> {
        if resolved.len() != self.units.len() {
            return Err(Error::LengthMismatch {
                expected: self.units.len(),
                actual: resolved.len(),
            });
        }
        let mut flat = vec![0.0; self.n_free];
        for (i, slot) in self.slots.iter().enumerate() {
            match *slot {
                Slot::Fixed(_) => {}
                Slot::Global(k) => flat[k] = resolved[0][i],
                Slot::Local(off) => {
                    for (j, row) in resolved.iter().enumerate() {
                        flat[off + j] = row[i];
                    }
                }
            }
        }
        Ok(flat)
    }

    pub fn start(&self) -> Vec<f64> {
        let mut flat = vec![0.0; self.n_free];
        self.fill(&mut flat, |s| s.start);
        flat
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        let mut lo = vec![0.0; self.n_free];
        let mut hi = vec![0.0; self.n_free];
        self.fill(&mut lo, |s| s.lower);
        self.fill(&mut hi, |s| s.upper);
        lo.into_iter().zip(hi).collect()
    }

    fn fill(&self, flat: &mut [f64], f: impl Fn(&ParamSpec) -> f64) {
        for (spec, slot) in self.specs.iter().zip(&self.slots) {
            match *slot {
                Slot::Fixed(_) => {}
                Slot::Global(k) => flat[k] = f(spec),
                Slot::Local(off) => {
                    for j in 0..self.units.len() {
                        flat[off + j] = f(spec);
                    }
                }
            }
        }
    }

    /// Display names of the flat entries, e.g. `b` or `a[301]`.
    pub fn flat_names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.n_free];
        for (spec, slot) in self.specs.iter().zip(&self.slots) {
            match *slot {
                Slot::Fixed(_) => {}
                Slot::Global(k) => names[k] = spec.name.clone(),
                Slot::Local(off) => {
                    for (j, u) in self.units.iter().enumerate() {
                        names[off + j] = format!("{}[{}]", spec.name, u);
                    }
                }
            }
        }
        names
    }

    /// Flat indices holding parameter `name` (one for globals, one per unit
    /// for locals, none when fixed).
    pub fn flat_indices(&self, name: &str) -> Vec<usize> {
        match self.index_of(name).map(|i| self.slots[i]) {
            Some(Slot::Global(k)) => vec![k],
            Some(Slot::Local(off)) => (off..off + self.units.len()).collect(),
            _ => Vec::new(),
        }
    }

    /// Copy of this binding with `name` held at `value`.
    pub fn with_fixed(&self, name: &str, value: f64) -> Result<Self> {
        let mut specs = self.specs.clone();
        let s = specs
            .iter_mut()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Binding(format!("unknown parameter `{name}`")))?;
        s.fixed = true;
        s.start = value;
        s.scope = Scope::Global;
        Self::new(specs, self.units.clone())
    }

    /// Starting flat vector for this binding, taking every parameter that
    /// `from` also declares from `from_flat` (clamped to this binding's
    /// bounds) and the declared start otherwise.
    pub fn carry_over(&self, from: &ParameterBinding, from_flat: &[f64]) -> Result<Vec<f64>> {
        let mut flat = self.start();
        for (spec, slot) in self.specs.iter().zip(&self.slots) {
            let Some(k) = from.index_of(&spec.name) else { continue };
            let clamp = |v: f64| v.clamp(spec.lower, spec.upper);
            match *slot {
                Slot::Fixed(_) => {}
                Slot::Global(i) => flat[i] = clamp(from.resolve(from_flat, 0)?[k]),
                Slot::Local(off) => {
                    for j in 0..self.units.len() {
                        flat[off + j] = clamp(from.resolve(from_flat, j)?[k]);
                    }
                }
            }
        }
        Ok(flat)
    }
}

/// How drift coefficients and σ multipliers derive from named parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Drift {
    /// `beta0`, `beta1` (and optional `mu_m`, `mu_0`, `mu_p`) given directly.
    #[default]
    Raw,
    /// `β₀ = b·a^c`, `β₁ = −b`.
    RichardsAdditive,
    /// `β₀ = −b`, `β₁ = 0`.
    RichardsMult,
    /// `β₀ = 0`, `β₁ = −b`, `μ_p = √|b|`.
    RichardsScaled,
}

impl Drift {
    fn needs(&self) -> &'static [&'static str] {
        match self {
            Drift::Raw => &[],
            _ => &["b"],
        }
    }
}

#[derive(Debug, Clone, Default)]
struct NamedIndex {
    beta0: Option<usize>,
    beta1: Option<usize>,
    eta: Option<usize>,
    eta0: Option<usize>,
    x0: Option<usize>,
    t0: Option<usize>,
    mu_m: Option<usize>,
    mu_0: Option<usize>,
    mu_p: Option<usize>,
    a: Option<usize>,
    b: Option<usize>,
    c: Option<usize>,
}

/// Fully resolved per-unit model.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitModel {
    pub sde: SdeParams,
    pub transform_params: Vec<f64>,
    pub multipliers: Multipliers,
}

/// Reducible SDE over one or more units.
#[derive(Debug)]
pub struct SdeModel {
    transform: Arc<dyn Transform>,
    drift: Drift,
    binding: ParameterBinding,
    transform_idx: Vec<usize>,
    named: NamedIndex,
    prior: Option<PriorDensity>,
}

impl SdeModel {
    pub fn new(transform: Arc<dyn Transform>, drift: Drift, binding: ParameterBinding) -> Result<Self> {
        let find = |n: &str| binding.index_of(n);
        let transform_idx = transform
            .param_names()
            .iter()
            .map(|n| {
                find(n).ok_or_else(|| {
                    Error::Binding(format!(
                        "transform `{}` needs parameter `{n}`",
                        transform.name()
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for n in drift.needs() {
            if find(n).is_none() {
                return Err(Error::Binding(format!("drift {drift:?} needs parameter `{n}`")));
            }
        }
        if drift == Drift::RichardsAdditive && (find("a").is_none() || find("c").is_none()) {
            return Err(Error::Binding("richards_additive needs `a` and `c`".into()));
        }
        let named = NamedIndex {
            beta0: find("beta0"),
            beta1: find("beta1"),
            eta: find("eta"),
            eta0: find("eta0"),
            x0: find("x0"),
            t0: find("t0"),
            mu_m: find("mu_m"),
            mu_0: find("mu_0"),
            mu_p: find("mu_p"),
            a: find("a"),
            b: find("b"),
            c: find("c"),
        };
        Ok(SdeModel {
            transform,
            drift,
            binding,
            transform_idx,
            named,
            prior: None,
        })
    }

    /// MAP estimation: weight residuals by a prior on the flat vector.
    pub fn with_prior(mut self, prior: PriorDensity) -> Self {
        self.prior = Some(prior);
        self
    }

    pub fn prior(&self) -> Option<&PriorDensity> {
        self.prior.as_ref()
    }

    pub fn binding(&self) -> &ParameterBinding {
        &self.binding
    }

    pub fn transform(&self) -> &Arc<dyn Transform> {
        &self.transform
    }

    pub fn drift(&self) -> Drift {
        self.drift
    }

    /// Same model with a different binding (e.g. a parameter fixed).
    pub fn rebind(&self, binding: ParameterBinding) -> Result<Self> {
        Self::new(self.transform.clone(), self.drift, binding)
    }

    pub fn unit_model(&self, values: &[f64], unit: &UnitData) -> UnitModel {
        let get = |i: Option<usize>, default: f64| i.map_or(default, |k| values[k]);
        let n = &self.named;
        let b = get(n.b, 0.0);
        let mut mult = Multipliers {
            m: get(n.mu_m, 1.0),
            zero: get(n.mu_0, 1.0),
            p: get(n.mu_p, 1.0),
        };
        let (beta0, beta1) = match self.drift {
            Drift::Raw => (get(n.beta0, 0.0), get(n.beta1, 0.0)),
            Drift::RichardsAdditive => {
                let (a, c) = (get(n.a, 0.0), get(n.c, 1.0));
                (b * a.powf(c), -b)
            }
            Drift::RichardsMult => (-b, 0.0),
            Drift::RichardsScaled => {
                mult.p = b.abs().sqrt();
                (0.0, -b)
            }
        };
        UnitModel {
            sde: SdeParams {
                beta0,
                beta1,
                eta: get(n.eta, 0.0),
                eta0: get(n.eta0, 0.0),
                x0: get(n.x0, unit.x0),
                t0: get(n.t0, unit.t0),
            },
            transform_params: self.transform_idx.iter().map(|&k| values[k]).collect(),
            multipliers: mult,
        }
    }

    /// Per-unit whitened blocks, in unit order.
    pub fn whiten(&self, units: &[UnitData], flat: &[f64]) -> Result<Vec<WhitenedUnit>> {
        if units.len() != self.binding.units().len() {
            return Err(Error::LengthMismatch {
                expected: self.binding.units().len(),
                actual: units.len(),
            });
        }
        units
            .iter()
            .enumerate()
            .map(|(j, unit)| {
                let values = self.binding.resolve(flat, j)?;
                let m = self.unit_model(&values, unit);
                m.sde.check().map_err(|e| e.in_unit(&unit.id))?;
                sde::whiten_unit(
                    &unit.x,
                    &unit.t,
                    &m.sde,
                    self.transform.as_ref(),
                    &m.transform_params,
                    &m.multipliers,
                )
                .map_err(|e| e.in_unit(&unit.id))
            })
            .collect()
    }

    /// Concatenated u-vector `(v₁, …, v_m) / J^{1/n}`.
    pub fn uvector(&self, units: &[UnitData], flat: &[f64]) -> Result<UVector> {
        let u = self.likelihood_uvector(units, flat)?;
        match &self.prior {
            Some(p) => u.with_log_prior(p.log_density(flat)),
            None => Ok(u),
        }
    }

    /// The u-vector without any prior weighting.
    pub fn likelihood_uvector(&self, units: &[UnitData], flat: &[f64]) -> Result<UVector> {
        let blocks = self.whiten(units, flat)?;
        let n: usize = blocks.iter().map(|b| b.v.len()).sum();
        let mut v = Vec::with_capacity(n);
        // unit order must not change the bits of ln J
        let log_j = gaussian::order_free_sum(blocks.iter().map(|b| b.log_jacobian));
        for b in blocks {
            v.extend(b.v);
        }
        Ok(UVector::from_whitened(v, log_j))
    }

    /// σ_P, σ_M, σ_Z and the log-likelihood at `flat`, maximized over σ².
    /// A prior, if any, is ignored here.
    pub fn final_stats(&self, units: &[UnitData], flat: &[f64]) -> Result<FinalStats> {
        let u = self.likelihood_uvector(units, flat)?;
        let values = self.binding.resolve(flat, 0)?;
        let m = self.unit_model(&values, &units[0]);
        Ok(sde::final_stats(&u, m.sde.eta, m.sde.eta0))
    }

    /// True when η is held at zero, so every covariance is diagonal.
    pub fn process_noise_only(&self) -> bool {
        match self.named.eta {
            None => true,
            Some(k) => {
                let s = &self.binding.specs()[k];
                s.fixed && s.start == 0.0
            }
        }
    }

    pub fn n_obs(units: &[UnitData]) -> usize {
        units.iter().map(UnitData::len).sum()
    }
}
