//! Machine-readable fit reports and model comparison.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::estimate::FitResult;

pub const TOOL: &str = "reducible-sde";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub fingerprint: String,
    pub rows: usize,
    pub units: usize,
}

/// One value of a local parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitValue {
    pub unit: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalTable {
    pub parameter: String,
    pub values: Vec<UnitValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub tool: String,
    pub version: String,
    /// `process-noise-only`, `process-and-measurement` or `independent-errors`.
    pub noise_structure: String,
    pub dataset: DatasetSummary,
    pub fit: FitResult,
    /// Local parameters by unit (empty when all parameters are global).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub local: Vec<LocalTable>,
    pub config: ModelConfig,
}

impl FitReport {
    pub fn new(
        config: ModelConfig,
        dataset: DatasetSummary,
        fit: FitResult,
        noise_structure: &str,
        unit_ids: &[String],
    ) -> Self {
        let mut local: Vec<LocalTable> = Vec::new();
        for (name, &value) in fit.names.iter().zip(&fit.theta) {
            let Some((param, unit)) = name.strip_suffix(']').and_then(|n| n.split_once('[')) else {
                continue;
            };
            debug_assert!(unit_ids.iter().any(|u| u == unit));
            let entry = UnitValue {
                unit: unit.to_string(),
                value,
            };
            match local.iter_mut().find(|t| t.parameter == param) {
                Some(t) => t.values.push(entry),
                None => local.push(LocalTable {
                    parameter: param.to_string(),
                    values: vec![entry],
                }),
            }
        }
        FitReport {
            tool: TOOL.into(),
            version: VERSION.into(),
            noise_structure: noise_structure.into(),
            dataset,
            fit,
            local,
            config,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(bytes: &[u8]) -> crate::Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }

    /// Human-readable summary.
    pub fn table(&self) -> String {
        let f = &self.fit;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "n = {}  units = {}  df = {}  {}",
            f.n, self.dataset.units, f.df, self.noise_structure
        );
        for ((name, v), b) in f.names.iter().zip(&f.theta).zip(&f.at_bound) {
            let _ = writeln!(s, "  {name:<16} {v:>14.7}{}", if *b { "  (at bound)" } else { "" });
        }
        let _ = writeln!(s, "  rss {:.6}  sigma {:.8}", f.rss, f.sigma);
        if let (Some(p), Some(m), Some(z)) = (f.sigma_p, f.sigma_m, f.sigma_0) {
            let _ = writeln!(s, "  sigma_p {p:.8}  sigma_m {m:.8}  sigma_0 {z:.8}");
        }
        let _ = writeln!(
            s,
            "  logLik {:.6}  AIC {:.4}  BIC {:.4}  iterations {}  {}",
            f.log_likelihood,
            f.aic,
            f.bic,
            f.iterations,
            if f.converged { "converged" } else { "NOT CONVERGED" }
        );
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub label: String,
    pub df: usize,
    pub log_likelihood: f64,
    pub aic: f64,
    pub bic: f64,
    pub delta_aic: f64,
    pub delta_bic: f64,
}

/// ΔAIC/ΔBIC relative to the best model of each criterion, in input order.
pub fn compare(reports: &[(String, FitReport)]) -> Vec<CompareRow> {
    let best_aic = reports.iter().map(|(_, r)| r.fit.aic).fold(f64::INFINITY, f64::min);
    let best_bic = reports.iter().map(|(_, r)| r.fit.bic).fold(f64::INFINITY, f64::min);
    reports
        .iter()
        .map(|(label, r)| CompareRow {
            label: label.clone(),
            df: r.fit.df,
            log_likelihood: r.fit.log_likelihood,
            aic: r.fit.aic,
            bic: r.fit.bic,
            delta_aic: r.fit.aic - best_aic,
            delta_bic: r.fit.bic - best_bic,
        })
        .collect()
}

pub fn compare_table(rows: &[CompareRow]) -> String {
    let mut s = format!(
        "{:<32} {:>4} {:>12} {:>10} {:>10} {:>8} {:>8}\n",
        "model", "df", "logLik", "AIC", "BIC", "dAIC", "dBIC"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<32} {:>4} {:>12.5} {:>10.4} {:>10.4} {:>8.3} {:>8.3}",
            r.label, r.df, r.log_likelihood, r.aic, r.bic, r.delta_aic, r.delta_bic
        );
    }
    s
}
