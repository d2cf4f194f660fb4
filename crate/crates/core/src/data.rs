//! Loading, normalizing, splitting and windowing univariate labeled series.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A univariate series with strictly increasing timestamps and optional
/// point labels (`true` = anomaly).
///
/// `offset` is the position of the first point in the series it was cut
/// from, so windows built on a split can report indices into the original.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSeries {
    timestamps: Vec<i64>,
    values: Vec<f64>,
    labels: Option<Vec<bool>>,
    offset: usize,
}

impl LabeledSeries {
    pub fn new(timestamps: Vec<i64>, values: Vec<f64>, labels: Option<Vec<bool>>) -> Result<Self> {
        if timestamps.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} timestamps for {} values",
                timestamps.len(),
                values.len()
            )));
        }
        if let Some(row) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::NonMonotonicTimestamps { row: row + 1 });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        if let Some(l) = &labels {
            if l.len() != values.len() {
                return Err(Error::LabelLength {
                    labels: l.len(),
                    values: values.len(),
                });
            }
        }
        Ok(Self {
            timestamps,
            values,
            labels,
            offset: 0,
        })
    }

    /// Series indexed 0, 1, 2, ... with the given values.
    pub fn from_values(values: Vec<f64>, labels: Option<Vec<bool>>) -> Result<Self> {
        let ts = (0..values.len() as i64).collect();
        Self::new(ts, values, labels)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> Option<&[bool]> {
        self.labels.as_deref()
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn with_labels(mut self, labels: Vec<bool>) -> Result<Self> {
        if labels.len() != self.values.len() {
            return Err(Error::LabelLength {
                labels: labels.len(),
                values: self.values.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            timestamps: self.timestamps[start..end].to_vec(),
            values: self.values[start..end].to_vec(),
            labels: self.labels.as_ref().map(|l| l[start..end].to_vec()),
            offset: self.offset + start,
        }
    }

    fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }
}

/// Column mapping for CSV input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    /// Timestamp column; row numbers are used when absent.
    #[serde(default)]
    pub timestamp: Option<String>,
    pub value: String,
    /// 0/1 label column.
    #[serde(default)]
    pub label: Option<String>,
    /// When set, consecutive timestamps must differ by exactly this step.
    #[serde(default)]
    pub sampling_period: Option<i64>,
}

impl CsvSchema {
    pub fn new(timestamp: Option<&str>, value: &str, label: Option<&str>) -> Self {
        Self {
            timestamp: timestamp.map(str::to_owned),
            value: value.to_owned(),
            label: label.map(str::to_owned),
            sampling_period: None,
        }
    }
}

/// Parses integers as-is and common datetime layouts as UTC epoch seconds.
pub fn parse_timestamp(cell: &str) -> Option<i64> {
    let cell = cell.trim();
    if let Ok(v) = cell.parse::<i64>() {
        return Some(v);
    }
    for fmt in [
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(cell, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(cell, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
}

pub fn load_series(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<LabeledSeries> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    };
    let value_col = column(&schema.value)?;
    let ts_col = schema.timestamp.as_deref().map(column).transpose()?;
    let label_col = schema.label.as_deref().map(column).transpose()?;

    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut labels = label_col.map(|_| Vec::new());

    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let cell = |col: usize| record.get(col).unwrap_or("").trim().to_owned();
        let parse_err = |col: usize, name: &str| Error::Parse {
            row: row + 1,
            column: name.to_owned(),
            cell: cell(col),
        };

        let v: f64 = cell(value_col)
            .parse()
            .map_err(|_| parse_err(value_col, &schema.value))?;
        if !v.is_finite() {
            return Err(parse_err(value_col, &schema.value));
        }
        values.push(v);

        let t = match (ts_col, schema.timestamp.as_deref()) {
            (Some(c), Some(name)) => parse_timestamp(&cell(c)).ok_or_else(|| parse_err(c, name))?,
            _ => row as i64,
        };
        if let Some(&prev) = timestamps.last() {
            if t <= prev {
                return Err(Error::NonMonotonicTimestamps { row: row + 1 });
            }
            if let Some(step) = schema.sampling_period {
                if t - prev != step {
                    return Err(Error::Gap {
                        row: row + 1,
                        expected: step,
                        found: t - prev,
                    });
                }
            }
        }
        timestamps.push(t);

        if let (Some(c), Some(out), Some(name)) = (label_col, labels.as_mut(), schema.label.as_deref()) {
            let flag = match cell(c).as_str() {
                "0" | "0.0" | "false" => false,
                "1" | "1.0" | "true" => true,
                _ => return Err(parse_err(c, name)),
            };
            out.push(flag);
        }
    }
    LabeledSeries::new(timestamps, values, labels)
}

/// Label-file entry in the Numenta Anomaly Benchmark layout: either point
/// timestamps or `[start, end]` windows, keyed by data file.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum NabEntry {
    Windows(Vec<[String; 2]>),
    Points(Vec<String>),
}

/// Attaches labels from an NAB-style JSON label file (`combined_labels.json`
/// or `combined_windows.json`) to `series`.
pub fn apply_nab_labels(series: LabeledSeries, label_path: impl AsRef<Path>, key: &str) -> Result<LabeledSeries> {
    let path = label_path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let all: HashMap<String, NabEntry> = serde_json::from_reader(file)?;
    let entry = all
        .get(key)
        .ok_or_else(|| Error::Config(format!("key `{key}` not present in {}", path.display())))?;
    let stamp = |s: &String| {
        parse_timestamp(s).ok_or_else(|| Error::Parse {
            row: 0,
            column: key.to_owned(),
            cell: s.clone(),
        })
    };
    let labels = match entry {
        NabEntry::Points(points) => {
            let points = points.iter().map(stamp).collect::<Result<Vec<_>>>()?;
            series.timestamps().iter().map(|t| points.contains(t)).collect()
        }
        NabEntry::Windows(windows) => {
            let windows = windows
                .iter()
                .map(|[a, b]| Ok((stamp(a)?, stamp(b)?)))
                .collect::<Result<Vec<_>>>()?;
            series
                .timestamps()
                .iter()
                .map(|t| windows.iter().any(|&(a, b)| (a..=b).contains(t)))
                .collect()
        }
    };
    series.with_labels(labels)
}

/// Min-max scaling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub min: f64,
    pub max: f64,
}

impl NormParams {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(max > min) {
            return Err(Error::DegenerateRange(min));
        }
        Ok(Self { min, max })
    }

    /// Fits on the observed range of `series`.
    pub fn fit(series: &LabeledSeries) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::Empty("cannot fit normalization on an empty series"));
        }
        let min = series.values().iter().copied().fold(f64::INFINITY, f64::min);
        let max = series.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::new(min, max)
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * (self.max - self.min) + self.min
    }
}

pub fn normalize(series: &LabeledSeries, params: &NormParams) -> Result<LabeledSeries> {
    let params = NormParams::new(params.min, params.max)?;
    Ok(series.map_values(|v| params.apply(v)))
}

pub fn denormalize(series: &LabeledSeries, params: &NormParams) -> Result<LabeledSeries> {
    let params = NormParams::new(params.min, params.max)?;
    Ok(series.map_values(|v| params.invert(v)))
}

/// Fractions for a contiguous train / validation / test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let spec = Self { train, val, test };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("train", self.train), ("val", self.val), ("test", self.test)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::InvalidSplit(format!("{name} fraction {f} not in (0, 1)")));
            }
        }
        let total = self.train + self.val + self.test;
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSplit(format!("fractions sum to {total}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitWarning {
    /// The training split holds `count` labeled anomalies; it is assumed clean.
    AnomalyInTrain { count: usize },
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: LabeledSeries,
    pub val: LabeledSeries,
    pub test: LabeledSeries,
    pub warnings: Vec<SplitWarning>,
}

/// Contiguous split. `min_len` is the smallest admissible split, usually
/// `look_back + look_ahead`.
pub fn split(series: &LabeledSeries, spec: &SplitSpec, min_len: usize) -> Result<Splits> {
    spec.validate()?;
    let n = series.len();
    let n_train = (n as f64 * spec.train).round() as usize;
    let n_val = ((n as f64 * spec.val).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let n_test = n - n_train - n_val;
    for (name, len) in [("train", n_train), ("val", n_val), ("test", n_test)] {
        if len < min_len.max(1) {
            return Err(Error::SplitTooSmall {
                name,
                len,
                need: min_len.max(1),
            });
        }
    }
    let train = series.slice(0, n_train);
    let val = series.slice(n_train, n_train + n_val);
    let test = series.slice(n_train + n_val, n);

    let mut warnings = Vec::new();
    if let Some(labels) = train.labels() {
        let count = labels.iter().filter(|&&l| l).count();
        if count > 0 {
            log::warn!("training split contains {count} labeled anomalies");
            warnings.push(SplitWarning::AnomalyInTrain { count });
        }
    }
    Ok(Splits {
        train,
        val,
        test,
        warnings,
    })
}

/// Supervised forecasting windows.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    /// Index (into the original, unsplit series) of each window's first target.
    pub target_indices: Vec<usize>,
    /// Timestamp of each window's first target.
    pub target_timestamps: Vec<i64>,
    /// Label of each window's first target, when the series is labeled.
    pub target_labels: Option<Vec<bool>>,
    pub look_back: usize,
    pub look_ahead: usize,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

pub fn window(series: &LabeledSeries, look_back: usize, look_ahead: usize) -> Result<WindowedDataset> {
    if look_back == 0 || look_ahead == 0 {
        return Err(Error::Config("look-back and look-ahead must be positive".into()));
    }
    let len = series.len();
    if len < look_back + look_ahead {
        return Err(Error::SeriesTooShort {
            len,
            look_back,
            look_ahead,
        });
    }
    let count = len - look_back - look_ahead + 1;
    let v = series.values();
    let inputs = (0..count).map(|i| v[i..i + look_back].to_vec()).collect();
    let targets = (0..count)
        .map(|i| v[i + look_back..i + look_back + look_ahead].to_vec())
        .collect();
    let first = |i: usize| i + look_back;
    Ok(WindowedDataset {
        inputs,
        targets,
        target_indices: (0..count).map(|i| series.offset() + first(i)).collect(),
        target_timestamps: (0..count).map(|i| series.timestamps()[first(i)]).collect(),
        target_labels: series
            .labels()
            .map(|l| (0..count).map(|i| l[first(i)]).collect()),
        look_back,
        look_ahead,
    })
}
