//! End-to-end comparison of the four detection rules on one labeled series.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{normalize, split, window, LabeledSeries, NormParams, SplitSpec, SplitWarning, WindowedDataset};
use crate::detectors::{
    calibrate_gaussian_threshold, calibrate_q, detect, fit_gaussian, gaussian_logpd, prediction_errors,
    tukey_threshold, DetectorModel, EvtRule, PredictionErrors, DEFAULT_Q_GRID,
};
use crate::error::{Error, Result};
use crate::evaluation::{score, Metrics};
use crate::trainer::{scores_from_errors, train_evt_lstm, train_evt_lstm_from, train_forecaster, TrainConfig, TrainedModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub split: SplitSpec,
    pub look_back: usize,
    pub look_ahead: usize,
    pub train: TrainConfig,
    pub q_grid: Vec<f64>,
    /// Start the EVT objective from the trained forecaster's weights.
    pub warm_start: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            split: SplitSpec::default(),
            look_back: 1,
            look_ahead: 1,
            train: TrainConfig::default(),
            q_grid: DEFAULT_Q_GRID.to_vec(),
            warm_start: false,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        if self.look_back == 0 || self.look_ahead == 0 {
            return Err(Error::Config("look_back and look_ahead must be positive".into()));
        }
        if self.q_grid.is_empty() || self.q_grid.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
            return Err(Error::Config("q_grid must hold probabilities in (0, 1)".into()));
        }
        self.train.validate()
    }
}

/// Normalized, split and windowed series.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub norm: NormParams,
    pub train: WindowedDataset,
    pub val: WindowedDataset,
    pub test: WindowedDataset,
    pub warnings: Vec<SplitWarning>,
}

/// Split, fit min-max scaling on the training part, and window every part.
pub fn prepare(series: &LabeledSeries, spec: &SplitSpec, look_back: usize, look_ahead: usize) -> Result<PreparedData> {
    prepare_with(series, spec, look_back, look_ahead, None)
}

/// As [`prepare`], but with fixed scaling parameters when `norm` is given.
pub fn prepare_with(
    series: &LabeledSeries,
    spec: &SplitSpec,
    look_back: usize,
    look_ahead: usize,
    norm: Option<NormParams>,
) -> Result<PreparedData> {
    let parts = split(series, spec, look_back + look_ahead)?;
    let norm = match norm {
        Some(n) => n,
        None => NormParams::fit(&parts.train)?,
    };
    let win = |s: &LabeledSeries| window(&normalize(s, &norm)?, look_back, look_ahead);
    Ok(PreparedData {
        train: win(&parts.train)?,
        val: win(&parts.val)?,
        test: win(&parts.test)?,
        norm,
        warnings: parts.warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleParams {
    Hybrid(DetectorModel),
    EvtLstm { q: f64, tau_e: f64, epochs_run: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleReport {
    pub metrics: Metrics,
    pub params: RuleParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub seed: u64,
    pub test_points: usize,
    pub test_anomalies: usize,
    pub rules: BTreeMap<String, RuleReport>,
}

pub const RULE_ORDER: [&str; 4] = ["gaussian", "tukey", "evt", "evt_lstm"];

impl BenchmarkReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>5} {:>5} {:>5} {:>9} {:>7} {:>7}",
            "rule", "tp", "fp", "fn", "precision", "recall", "f1"
        );
        for name in RULE_ORDER {
            if let Some(r) = self.rules.get(name) {
                let m = &r.metrics;
                let _ = writeln!(
                    out,
                    "{:<10} {:>5} {:>5} {:>5} {:>9.4} {:>7.4} {:>7.4}",
                    name, m.counts.tp, m.counts.fp, m.counts.fn_, m.precision, m.recall, m.f1
                );
            }
        }
        out
    }
}

/// Everything a benchmark run produced, for callers that need more than the report.
#[derive(Debug, Clone)]
pub struct BenchmarkRun {
    pub report: BenchmarkReport,
    pub data: PreparedData,
    pub forecaster: TrainedModel,
    pub evt_lstm: TrainedModel,
    pub test_errors: PredictionErrors,
    pub q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Gaussian,
    Tukey,
    Evt,
    EvtLstm,
}

impl RuleKind {
    pub fn is_hybrid(self) -> bool {
        self != RuleKind::EvtLstm
    }
}

/// Fits a hybrid rule on forecaster errors given as `[train, val, test]`.
///
/// Gaussian: density on train, `tau_g` on labeled val. Tukey: fences over all
/// three parts. EVT: POT fit on train + val with risk `q`.
pub fn calibrate_hybrid(kind: RuleKind, parts: [&PredictionErrors; 3], q: f64, init_level: f64) -> Result<DetectorModel> {
    let [train_e, val_e, test_e] = parts;
    match kind {
        RuleKind::Gaussian => {
            let mut gauss = fit_gaussian(&train_e.errors)?;
            let val_scores: Vec<f64> = val_e.errors.iter().map(|&e| gaussian_logpd(e, &gauss)).collect();
            gauss.tau_g = Some(calibrate_gaussian_threshold(&val_scores, val_e.labels_or_err()?)?);
            Ok(DetectorModel::Gaussian(gauss))
        }
        RuleKind::Tukey => {
            let all = PredictionErrors::concat(&[train_e, val_e, test_e]);
            Ok(DetectorModel::Tukey(tukey_threshold(&all.errors)?))
        }
        RuleKind::Evt => {
            let init = PredictionErrors::concat(&[train_e, val_e]);
            Ok(DetectorModel::Evt(EvtRule::calibrate(&init.errors, init_level, q)?))
        }
        RuleKind::EvtLstm => Err(Error::Config("evt_lstm is not a hybrid rule".into())),
    }
}

pub fn benchmark(series: &LabeledSeries, cfg: &BenchmarkConfig) -> Result<BenchmarkRun> {
    cfg.validate()?;
    if series.labels().is_none() {
        return Err(Error::LabelsRequired);
    }
    let data = prepare(series, &cfg.split, cfg.look_back, cfg.look_ahead)?;
    let forecaster = train_forecaster(&cfg.train, &data.train, &data.val)?;
    let net = &forecaster.network;
    let train_e = prediction_errors(net, &data.train)?;
    let val_e = prediction_errors(net, &data.val)?;
    let test_e = prediction_errors(net, &data.test)?;
    let test_labels = test_e.labels_or_err()?.to_vec();
    let mut rules = BTreeMap::new();

    let init = PredictionErrors::concat(&[&train_e, &val_e]);
    let q = calibrate_q(&init.errors, init.labels_or_err()?, &cfg.q_grid, cfg.train.init_level)?;
    for kind in [RuleKind::Gaussian, RuleKind::Tukey, RuleKind::Evt] {
        let rule = calibrate_hybrid(kind, [&train_e, &val_e, &test_e], q, cfg.train.init_level)?;
        let r = detect(&test_e.errors, &rule)?;
        rules.insert(
            rule.name().to_owned(),
            RuleReport {
                metrics: score(&r.flags, &test_labels)?,
                params: RuleParams::Hybrid(rule),
            },
        );
    }

    let evt_cfg = TrainConfig { q, ..cfg.train.clone() };
    let evt_lstm = if cfg.warm_start {
        train_evt_lstm_from(forecaster.network.clone(), &evt_cfg, &data.train, &data.val)?
    } else {
        train_evt_lstm(&evt_cfg, &data.train, &data.val)?
    };
    let tau_e = evt_lstm.tau_e.ok_or(Error::MissingThreshold)?;
    let evt_errors = prediction_errors(&evt_lstm.network, &data.test)?;
    let r = scores_from_errors(&evt_errors.errors, tau_e);
    rules.insert(
        "evt_lstm".to_owned(),
        RuleReport {
            metrics: score(&r.flags, &test_labels)?,
            params: RuleParams::EvtLstm {
                q,
                tau_e,
                epochs_run: evt_lstm.history.len(),
            },
        },
    );

    let report = BenchmarkReport {
        seed: cfg.train.seed,
        test_points: test_labels.len(),
        test_anomalies: test_labels.iter().filter(|&&l| l).count(),
        rules,
    };
    Ok(BenchmarkRun {
        report,
        data,
        forecaster,
        evt_lstm,
        test_errors: test_e,
        q,
    })
}
