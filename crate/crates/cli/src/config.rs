//! Run configuration: a JSON document layered over defaults and an optional
//! named preset, then patched with `--set key.path=value` overrides.

use std::path::{Path, PathBuf};

use evtlstm::benchmark::{BenchmarkConfig, RuleKind};
use evtlstm::data::{CsvSchema, SplitSpec};
use evtlstm::detectors::DEFAULT_Q_GRID;
use evtlstm::presets::{preset, preset_names};
use evtlstm::synthetic::SpikeSeriesConfig;
use evtlstm::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::CliError;

pub const OUT_DIR_ENV: &str = "EVTLSTM_OUT_DIR";
const FALLBACK_OUT_DIR: &str = "evtlstm-out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NabLabels {
    pub path: PathBuf,
    /// Key of the series in the label file, e.g. `realTraffic/speed_7578.csv`.
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Csv {
        path: PathBuf,
        schema: CsvSchema,
        #[serde(default)]
        nab_labels: Option<NabLabels>,
    },
    Synthetic(SpikeSeriesConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Forecaster,
    EvtLstm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default = "one")]
    pub look_back: usize,
    #[serde(default = "one")]
    pub look_ahead: usize,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_model")]
    pub model: ModelKind,
    #[serde(default = "default_rule")]
    pub rule: RuleKind,
    #[serde(default = "default_q_grid")]
    pub q_grid: Vec<f64>,
    /// Pick `q` from `q_grid` on the labeled train + val errors instead of
    /// using `train.q`.
    #[serde(default)]
    pub calibrate_q: bool,
    #[serde(default)]
    pub warm_start: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn one() -> usize {
    1
}

fn default_model() -> ModelKind {
    ModelKind::Forecaster
}

fn default_rule() -> RuleKind {
    RuleKind::Evt
}

fn default_q_grid() -> Vec<f64> {
    DEFAULT_Q_GRID.to_vec()
}

impl RunConfig {
    pub fn benchmark_config(&self) -> BenchmarkConfig {
        BenchmarkConfig {
            split: self.split,
            look_back: self.look_back,
            look_ahead: self.look_ahead,
            train: self.train.clone(),
            q_grid: self.q_grid.clone(),
            warm_start: self.warm_start,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.benchmark_config().validate().map_err(CliError::from)?;
        if (self.model == ModelKind::EvtLstm) != (self.rule == RuleKind::EvtLstm) {
            return Err(CliError::config(format!(
                "rule {:?} does not match model {:?}: the evt_lstm rule needs an evt_lstm model and vice versa",
                self.rule, self.model
            )));
        }
        if let DatasetConfig::Synthetic(s) = &self.dataset {
            if s.len < 3 * (self.look_back + self.look_ahead) {
                return Err(CliError::config("synthetic series too short for the look-back"));
            }
        }
        Ok(())
    }

    /// Paths in the config are relative to the config file's directory.
    fn resolve_paths(&mut self, base: &Path) {
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DatasetConfig::Csv { path, nab_labels, .. } = &mut self.dataset {
            rebase(path);
            if let Some(l) = nab_labels {
                rebase(&mut l.path);
            }
        }
        if let Some(out) = &mut self.output_dir {
            rebase(out);
        }
    }

    /// `--output-dir`, then the config, then the environment, then a fixed default.
    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(FALLBACK_OUT_DIR))
    }
}

fn preset_layer(name: &str) -> Result<Value, CliError> {
    let p = preset(name).ok_or_else(|| {
        CliError::config(format!("unknown preset `{name}` (known: {})", preset_names().join(", ")))
    })?;
    Ok(json!({
        "look_back": p.look_back,
        "look_ahead": p.look_ahead,
        "train": {
            "hidden": p.hidden,
            "dropout": p.dropout,
            "learning_rate": p.learning_rate,
            "q": p.q,
        }
    }))
}

/// Recursive object merge; `top` wins on conflicts.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, t) => *b = t,
    }
}

/// Applies `key.path=value`; the value is parsed as JSON, else taken as a string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override `{assignment}` is not key.path=value")))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::config(format!("override `{assignment}` has an empty key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let mut node = doc;
    for key in &keys[..keys.len() - 1] {
        if !node.is_object() {
            *node = Value::Object(Map::new());
        }
        node = node
            .as_object_mut()
            .expect("just made an object")
            .entry(*key)
            .or_insert_with(|| Value::Object(Map::new()));
    }
    if !node.is_object() {
        *node = Value::Object(Map::new());
    }
    node.as_object_mut()
        .expect("just made an object")
        .insert(keys[keys.len() - 1].to_owned(), value);
    Ok(())
}

/// A synthetic series places its spikes by split, so it must use the run's
/// split. Whichever of the two is given fills in the other.
fn align_synthetic_split(doc: &mut Value) -> Result<(), CliError> {
    let Some(synth) = doc.pointer("/dataset/synthetic").filter(|v| v.is_object()) else {
        return Ok(());
    };
    let inner = synth.get("split").cloned();
    let outer = doc.get("split").cloned();
    let split = match (inner, outer) {
        (Some(a), Some(b)) if a != b => {
            return Err(CliError::config("dataset.synthetic.split differs from split"));
        }
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => serde_json::to_value(SpikeSeriesConfig::default().split).expect("plain struct"),
    };
    doc["split"] = split.clone();
    doc["dataset"]["synthetic"]["split"] = split;
    Ok(())
}

/// Layers defaults, preset, the user document and overrides, then validates.
pub fn resolve(user: Value, overrides: &[String], base_dir: &Path) -> Result<RunConfig, CliError> {
    let mut user = user;
    if !user.is_object() {
        return Err(CliError::config("config must be a JSON object"));
    }
    for o in overrides {
        apply_override(&mut user, o)?;
    }
    let mut doc = json!({});
    if let Some(name) = user.get("preset") {
        let name = name
            .as_str()
            .ok_or_else(|| CliError::config("preset must be a string"))?;
        merge(&mut doc, preset_layer(name)?);
    }
    merge(&mut doc, user);
    align_synthetic_split(&mut doc)?;
    let mut cfg: RunConfig = serde_json::from_value(doc).map_err(|e| CliError::config(e.to_string()))?;
    cfg.resolve_paths(base_dir);
    cfg.validate()?;
    Ok(cfg)
}

pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    let user: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("config {} is not valid JSON: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    resolve(user, overrides, base)
}
