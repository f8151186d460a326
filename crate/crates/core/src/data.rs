//! CSV ingestion into per-unit longitudinal series.
//!
//! Numbers use `.` as the decimal separator regardless of locale; a cell such
//! as `4,51` is rejected with a dedicated error rather than misread.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DataError, Error, Result};
use crate::hierarchy::UnitData;

/// Column names to read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Columns {
    pub t: String,
    pub x: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

impl Columns {
    pub fn new(t: &str, x: &str, unit: Option<&str>) -> Self {
        Columns {
            t: t.into(),
            x: x.into(),
            unit: unit.map(Into::into),
        }
    }
}

/// Whether repeated `(unit, t)` pairs are an error. Time series need
/// distinct times; a plain regression dataset may repeat regressor values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Duplicates {
    #[default]
    Reject,
    Allow,
}

/// Id given to the single unit of a dataset without a unit column.
pub const SINGLE_UNIT: &str = "1";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Units in first-appearance order, each sorted by `t`.
    pub units: Vec<UnitData>,
    pub rows: usize,
    /// SHA-256 of the raw file bytes, lowercase hex.
    pub fingerprint: String,
}

impl Dataset {
    pub fn unit_ids(&self) -> Vec<String> {
        self.units.iter().map(|u| u.id.clone()).collect()
    }

    /// Keeps only the listed units, in the listed order.
    pub fn select(&self, ids: &[String]) -> Result<Dataset> {
        let units = ids
            .iter()
            .map(|id| {
                self.units
                    .iter()
                    .find(|u| &u.id == id)
                    .cloned()
                    .ok_or_else(|| Error::Data(DataError::UnknownUnit(id.clone())))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            rows: units.iter().map(UnitData::len).sum(),
            units,
            fingerprint: self.fingerprint.clone(),
        })
    }

    /// Writes `unit,t,x` rows (the schema the loader reads back).
    pub fn to_csv(&self, columns: &Columns) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let unit_col = columns.unit.as_deref().unwrap_or("unit");
        let csv_err = |e: csv::Error| Error::Data(DataError::Malformed(e.to_string()));
        w.write_record([unit_col, &columns.t, &columns.x]).map_err(csv_err)?;
        for u in &self.units {
            for (t, x) in u.t.iter().zip(&u.x) {
                w.write_record([u.id.clone(), format!("{t:?}"), format!("{x:?}")])
                    .map_err(csv_err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(DataError::Malformed(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub fn fingerprint(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn parse_number(cell: &str, row: usize, column: &str) -> Result<f64, DataError> {
    let s = cell.trim();
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => {
            let digits = s.trim_start_matches(['+', '-']);
            let comma = digits.split_once(',').is_some_and(|(a, b)| {
                !a.is_empty()
                    && !b.is_empty()
                    && a.bytes().all(|c| c.is_ascii_digit())
                    && b.bytes().all(|c| c.is_ascii_digit())
            });
            let (row, column, value) = (row, column.to_string(), cell.to_string());
            Err(if comma {
                DataError::CommaDecimal { row, column, value }
            } else {
                DataError::NonNumeric { row, column, value }
            })
        }
    }
}

/// Parses CSV bytes (header row required). Row numbers in errors count
/// data rows from 1.
pub fn parse_csv(bytes: &[u8], columns: &Columns, duplicates: Duplicates) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| DataError::Malformed(e.to_string()))?
        .clone();
    if headers.is_empty() {
        return Err(DataError::Empty);
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let ti = find(&columns.t)?;
    let xi = find(&columns.x)?;
    let ui = columns.unit.as_deref().map(find).transpose()?;

    let mut units: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    let mut rows = 0;
    for (k, record) in reader.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| DataError::Malformed(e.to_string()))?;
        let t = parse_number(&record[ti], row, &columns.t)?;
        let x = parse_number(&record[xi], row, &columns.x)?;
        let id = ui.map_or(SINGLE_UNIT, |i| &record[i]);
        match units.iter_mut().find(|(u, _)| u == id) {
            Some((_, obs)) => obs.push((t, x)),
            None => units.push((id.to_string(), vec![(t, x)])),
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(DataError::Empty);
    }
    let mut out = Vec::with_capacity(units.len());
    for (id, mut obs) in units {
        obs.sort_by(|a, b| a.0.total_cmp(&b.0));
        if duplicates == Duplicates::Reject {
            if let Some(w) = obs.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(DataError::DuplicateTime {
                    unit: id,
                    time: w[0].0,
                });
            }
        }
        let (t, x) = obs.into_iter().unzip();
        out.push(UnitData::new(id, t, x));
    }
    Ok(Dataset {
        units: out,
        rows,
        fingerprint: fingerprint(bytes),
    })
}

pub fn load_csv(path: &Path, columns: &Columns, duplicates: Duplicates) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(parse_csv(&bytes, columns, duplicates)?)
}
