//! Declarative model configuration (JSON).
//!
//! ```json
//! {
//!   "kind": "sde",
//!   "data": { "path": "../data/loblolly.csv", "t": "age", "x": "height", "unit": "Seed" },
//!   "transform": "richards_scale",
//!   "drift": "richards_scaled",
//!   "parameters": [
//!     { "name": "a", "start": 72, "scope": "local" },
//!     { "name": "b", "start": 0.1 },
//!     { "name": "c", "start": 0.5 }
//!   ]
//! }
//! ```
//!
//! A relative data path is taken relative to the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, Continuous, Gamma, LogNormal, Normal, Uniform};

use crate::data::{self, Columns, Dataset, Duplicates};
use crate::error::{Error, Result};
use crate::estimate::Strategy;
use crate::gaussian::PriorDensity;
use crate::hierarchy::{Drift, ParamSpec, ParameterBinding, SdeModel};
use crate::optimize::LsqOptions;
use crate::regression::{self, BoxCoxRegression};
use crate::transforms::TransformRegistry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Sde,
    /// Box–Cox on both sides of a straight line; `t` is the regressor and
    /// `x` the response.
    BoxcoxRegression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    pub t: String,
    pub x: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    /// Fit only these units (in this order).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicates: Option<Duplicates>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Initial {
    #[serde(default)]
    pub t0: f64,
    #[serde(default)]
    pub x0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "distribution", rename_all = "snake_case", deny_unknown_fields)]
pub enum Distribution {
    Normal { mean: f64, sd: f64 },
    LogNormal { mu: f64, sigma: f64 },
    Beta { a: f64, b: f64 },
    Gamma { shape: f64, rate: f64 },
    Uniform { lower: f64, upper: f64 },
}

impl Distribution {
    fn log_pdf_fn(&self) -> Result<Box<dyn Fn(f64) -> f64 + Send + Sync>> {
        let bad = |e: &dyn std::fmt::Display| Error::Config(format!("prior {self:?}: {e}"));
        Ok(match *self {
            Distribution::Normal { mean, sd } => {
                let d = Normal::new(mean, sd).map_err(|e| bad(&e))?;
                Box::new(move |x| d.ln_pdf(x))
            }
            Distribution::LogNormal { mu, sigma } => {
                let d = LogNormal::new(mu, sigma).map_err(|e| bad(&e))?;
                Box::new(move |x| d.ln_pdf(x))
            }
            Distribution::Beta { a, b } => {
                let d = Beta::new(a, b).map_err(|e| bad(&e))?;
                Box::new(move |x| d.ln_pdf(x))
            }
            Distribution::Gamma { shape, rate } => {
                let d = Gamma::new(shape, rate).map_err(|e| bad(&e))?;
                Box::new(move |x| d.ln_pdf(x))
            }
            Distribution::Uniform { lower, upper } => {
                let d = Uniform::new(lower, upper).map_err(|e| bad(&e))?;
                Box::new(move |x| d.ln_pdf(x))
            }
        })
    }
}

/// Independent prior on one named parameter (every unit's entry, if local).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub parameter: String,
    #[serde(flatten)]
    pub distribution: Distribution,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_tol() -> f64 {
    LsqOptions::default().ftol
}

fn default_max_iter() -> usize {
    LsqOptions::default().max_iter
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            strategy: Strategy::Single,
            tol: default_tol(),
            max_iter: default_max_iter(),
        }
    }
}

impl FitOptions {
    pub fn lsq(&self) -> LsqOptions {
        LsqOptions {
            ftol: self.tol,
            xtol: self.tol,
            max_iter: self.max_iter,
            ..LsqOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub kind: ModelKind,
    pub data: DataConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<String>,
    #[serde(default)]
    pub drift: Drift,
    #[serde(default)]
    pub initial: Initial,
    pub parameters: Vec<ParamSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub priors: Vec<PriorConfig>,
    #[serde(default)]
    pub fit: FitOptions,
}

/// Names the SDE model understands besides the transform's own parameters.
pub const MODEL_NAMES: [&str; 12] = [
    "beta0", "beta1", "eta", "eta0", "x0", "t0", "mu_m", "mu_0", "mu_p", "a", "b", "c",
];

/// A configuration ready to fit.
#[derive(Debug)]
pub enum Prepared {
    Sde { model: SdeModel, dataset: Dataset },
    Regression {
        model: BoxCoxRegression,
        start: [f64; 4],
        dataset: Dataset,
    },
}

impl Prepared {
    pub fn dataset(&self) -> &Dataset {
        match self {
            Prepared::Sde { dataset, .. } | Prepared::Regression { dataset, .. } => dataset,
        }
    }
}

impl ModelConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file and makes its data path absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_json(&bytes)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), config_message(&e))))?;
        if cfg.data.path.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.data.path = base.join(&cfg.data.path);
        }
        if let Ok(abs) = cfg.data.path.canonicalize() {
            cfg.data.path = abs;
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn columns(&self) -> Columns {
        Columns {
            t: self.data.t.clone(),
            x: self.data.x.clone(),
            unit: self.data.unit.clone(),
        }
    }

    fn spec(&self, name: &str) -> Option<&ParamSpec> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn load_data(&self) -> Result<Dataset> {
        let duplicates = self.data.duplicates.unwrap_or(match self.kind {
            ModelKind::Sde => Duplicates::Reject,
            ModelKind::BoxcoxRegression => Duplicates::Allow,
        });
        let ds = data::load_csv(&self.data.path, &self.columns(), duplicates)?;
        match &self.data.units {
            Some(ids) => ds.select(ids),
            None => Ok(ds),
        }
    }

    /// Loads the data and assembles the model.
    pub fn prepare(&self, registry: &TransformRegistry) -> Result<Prepared> {
        self.validate(registry)?;
        let mut dataset = self.load_data()?;
        match self.kind {
            ModelKind::BoxcoxRegression => {
                let (x, y): (Vec<f64>, Vec<f64>) = dataset
                    .units
                    .iter()
                    .flat_map(|u| u.t.iter().copied().zip(u.x.iter().copied()))
                    .unzip();
                let mut start = [0.0; 4];
                for (k, name) in regression::PARAM_NAMES.iter().enumerate() {
                    start[k] = self.spec(name).map(|s| s.start).unwrap_or(0.0);
                }
                Ok(Prepared::Regression {
                    model: BoxCoxRegression::new(x, y)?,
                    start,
                    dataset,
                })
            }
            ModelKind::Sde => {
                for u in &mut dataset.units {
                    u.t0 = self.initial.t0;
                    u.x0 = self.initial.x0;
                }
                let model = self.build_model(registry, dataset.unit_ids())?;
                Ok(Prepared::Sde { model, dataset })
            }
        }
    }

    pub fn build_model(&self, registry: &TransformRegistry, unit_ids: Vec<String>) -> Result<SdeModel> {
        let transform = registry.get(self.transform.as_deref().unwrap_or("identity"))?;
        let binding = ParameterBinding::new(self.parameters.clone(), unit_ids)?;
        let model = SdeModel::new(transform, self.drift, binding.clone())?;
        Ok(match self.prior_density(&binding)? {
            Some(p) => model.with_prior(p),
            None => model,
        })
    }

    /// Joint log prior over the flat vector of `binding`.
    pub fn prior_density(&self, binding: &ParameterBinding) -> Result<Option<PriorDensity>> {
        if self.priors.is_empty() {
            return Ok(None);
        }
        let mut terms = Vec::new();
        let mut label = Vec::new();
        for p in &self.priors {
            let idx = binding.flat_indices(&p.parameter);
            if idx.is_empty() {
                return Err(Error::Config(format!(
                    "prior on `{}`, which is not a free parameter",
                    p.parameter
                )));
            }
            terms.push((idx, p.distribution.log_pdf_fn()?));
            label.push(p.parameter.as_str());
        }
        Ok(Some(PriorDensity::new(label.join("+"), move |flat: &[f64]| {
            terms
                .iter()
                .map(|(idx, f)| idx.iter().map(|&k| f(flat[k])).sum::<f64>())
                .sum()
        })))
    }

    /// Static checks that do not need the data.
    pub fn validate(&self, registry: &TransformRegistry) -> Result<()> {
        let f = &self.fit;
        if !(f.tol > 0.0) || f.max_iter == 0 {
            return Err(Error::Config("fit.tol must be > 0 and fit.max_iter >= 1".into()));
        }
        match self.kind {
            ModelKind::BoxcoxRegression => {
                for p in &self.parameters {
                    if !regression::PARAM_NAMES.contains(&p.name.as_str()) {
                        return Err(Error::Config(format!(
                            "unknown regression parameter `{}` (expected {:?})",
                            p.name,
                            regression::PARAM_NAMES
                        )));
                    }
                    if p.fixed || p.scope != Default::default() || p.lower.is_finite() || p.upper.is_finite() {
                        return Err(Error::Config(format!(
                            "regression parameter `{}` must be free, global and unbounded",
                            p.name
                        )));
                    }
                }
                if !self.priors.is_empty() {
                    return Err(Error::Config("priors apply to sde models only".into()));
                }
            }
            ModelKind::Sde => {
                let transform = registry.get(self.transform.as_deref().unwrap_or("identity"))?;
                let own = transform.param_names();
                for p in &self.parameters {
                    if !MODEL_NAMES.contains(&p.name.as_str()) && !own.contains(&p.name.as_str()) {
                        return Err(Error::Config(format!(
                            "unknown parameter `{}` for transform `{}`",
                            p.name,
                            transform.name()
                        )));
                    }
                }
            }
        }
        // binding-level checks (duplicates, bounds, local eta) need no units
        ParameterBinding::new(self.parameters.clone(), vec!["_".into()]).map(|_| ())
    }
}

fn config_message(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LOB: &str = r#"{
        "data": {"path": "x.csv", "t": "age", "x": "height", "unit": "Seed"},
        "transform": "power_richards",
        "drift": "richards_additive",
        "parameters": [
            {"name": "a", "start": 72, "lower": 0, "upper": 100},
            {"name": "b", "start": 0.1},
            {"name": "c", "start": 0.5},
            {"name": "eta", "start": 0.5, "lower": 0, "upper": 1}
        ],
        "priors": [{"parameter": "eta", "distribution": "beta", "a": 2, "b": 2}],
        "fit": {"strategy": "two-stage"}
    }"#;

    #[test]
    fn parses_and_round_trips() {
        let c = ModelConfig::from_json(LOB.as_bytes()).unwrap();
        assert_eq!(c.kind, ModelKind::Sde);
        assert_eq!(c.drift, Drift::RichardsAdditive);
        assert_eq!(c.fit.strategy, Strategy::TwoStage);
        assert_eq!(c.fit.max_iter, 500);
        assert_eq!(c.parameters[1].lower, f64::NEG_INFINITY);
        let back = ModelConfig::from_json(c.to_json().as_bytes()).unwrap();
        assert_eq!(back, c);
        c.validate(&TransformRegistry::with_builtins()).unwrap();
    }

    #[test]
    fn rejects_unknown_fields_and_names() {
        let reg = TransformRegistry::with_builtins();
        assert!(ModelConfig::from_json(br#"{"data": {"path": "x", "t": "a", "x": "b"}, "parameters": [], "bogus": 1}"#).is_err());
        let mut c = ModelConfig::from_json(LOB.as_bytes()).unwrap();
        c.parameters.push(ParamSpec::free("lambda", 1.0));
        assert!(matches!(c.validate(&reg), Err(Error::Config(_))));
        let mut c = ModelConfig::from_json(LOB.as_bytes()).unwrap();
        c.parameters[3] = ParamSpec::free("eta", 0.5).bounded(0.0, 1.0).local();
        assert!(matches!(c.validate(&reg), Err(Error::LocalEta(_))));
        let mut c = ModelConfig::from_json(LOB.as_bytes()).unwrap();
        c.transform = Some("nope".into());
        assert!(matches!(c.validate(&reg), Err(Error::UnknownTransform(_))));
        let mut c = ModelConfig::from_json(LOB.as_bytes()).unwrap();
        c.parameters[0].start = 200.0;
        assert!(c.validate(&reg).is_err());
    }

    #[test]
    fn prior_density_sums_named_terms() {
        let c = ModelConfig::from_json(LOB.as_bytes()).unwrap();
        let binding = ParameterBinding::new(c.parameters.clone(), vec!["1".into()]).unwrap();
        let p = c.prior_density(&binding).unwrap().unwrap();
        // Beta(2,2) density at 0.5 is 1.5
        let flat = [72.0, 0.1, 0.5, 0.5];
        assert!((p.log_density(&flat) - 1.5f64.ln()).abs() < 1e-12);
        assert_eq!(p.log_density(&[72.0, 0.1, 0.5, 1.0]), f64::NEG_INFINITY);
        let mut c2 = c.clone();
        c2.priors[0].parameter = "zz".into();
        assert!(c2.prior_density(&binding).is_err());
    }

    #[test]
    fn regression_config_checks() {
        let text = br#"{"kind": "boxcox_regression",
            "data": {"path": "g.csv", "t": "Age", "x": "GAG"},
            "parameters": [{"name": "beta0", "start": 2.9}, {"name": "lambda_y", "start": 0}]}"#;
        let c = ModelConfig::from_json(text).unwrap();
        c.validate(&TransformRegistry::with_builtins()).unwrap();
        let mut bad = c.clone();
        bad.parameters.push(ParamSpec::free("eta", 0.5));
        assert!(bad.validate(&TransformRegistry::with_builtins()).is_err());
    }
}
