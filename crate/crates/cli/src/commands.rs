use std::path::{Path, PathBuf};
use std::time::Instant;

use evtlstm::benchmark::{benchmark, calibrate_hybrid, prepare_with, PreparedData, RuleKind, RuleParams};
use evtlstm::data::{apply_nab_labels, load_series, LabeledSeries, NormParams};
use evtlstm::detectors::{calibrate_q, detect, prediction_errors, PredictionErrors};
use evtlstm::evaluation::{score, Metrics};
use evtlstm::evt::{anderson_darling, pot_threshold, AdResult, GpdFit, TailKind};
use evtlstm::nn::{ModelFile, Network};
use evtlstm::synthetic::spike_series;
use evtlstm::trainer::{
    scores_from_errors, train_evt_lstm, train_evt_lstm_from, train_forecaster, EpochRecord, StopReason,
    ThresholdUpdate, TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::config::{DatasetConfig, ModelKind, RunConfig};
use crate::output::{to_json, OutputDir};
use crate::CliError;

pub const SAVED_MODEL_FORMAT: &str = "evtlstm-model";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SavedModel {
    pub format: String,
    pub kind: ModelKind,
    pub look_back: usize,
    pub look_ahead: usize,
    pub norm: NormParams,
    /// Set for EVT-LSTM models.
    pub tau_e: Option<f64>,
    pub q: Option<f64>,
    pub epochs_run: usize,
    pub model: ModelFile,
}

#[derive(Debug, Serialize)]
struct TrainManifest<'a> {
    command: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    series_len: usize,
    windows: [usize; 3],
    stop: StopReason,
    epochs_run: usize,
    q: Option<f64>,
    tau_e: Option<f64>,
    history: &'a [EpochRecord],
    thresholds: &'a [ThresholdUpdate],
    warnings: Vec<String>,
}

pub fn load_dataset(cfg: &RunConfig) -> Result<LabeledSeries, CliError> {
    let series = match &cfg.dataset {
        DatasetConfig::Csv { path, schema, nab_labels } => {
            let s = load_series(path, schema)?;
            match nab_labels {
                Some(l) => apply_nab_labels(s, &l.path, &l.key)?,
                None => s,
            }
        }
        DatasetConfig::Synthetic(s) => spike_series(s)?,
    };
    Ok(series)
}

fn errors_by_split(net: &Network, data: &PreparedData) -> Result<[PredictionErrors; 3], CliError> {
    Ok([
        prediction_errors(net, &data.train)?,
        prediction_errors(net, &data.val)?,
        prediction_errors(net, &data.test)?,
    ])
}

/// `train.q`, or the grid value picked on the labeled train + val errors.
fn risk_q(cfg: &RunConfig, train_e: &PredictionErrors, val_e: &PredictionErrors) -> Result<f64, CliError> {
    if !cfg.calibrate_q {
        return Ok(cfg.train.q);
    }
    let init = PredictionErrors::concat(&[train_e, val_e]);
    Ok(calibrate_q(&init.errors, init.labels_or_err()?, &cfg.q_grid, cfg.train.init_level)?)
}

pub fn train(cfg: &RunConfig, out: &OutputDir) -> Result<(), CliError> {
    let series = load_dataset(cfg)?;
    let data = prepare_with(&series, &cfg.split, cfg.look_back, cfg.look_ahead, None)?;
    let start = Instant::now();
    let (model, q) = match cfg.model {
        ModelKind::Forecaster => (train_forecaster(&cfg.train, &data.train, &data.val)?, None),
        ModelKind::EvtLstm => {
            let needs_forecaster = cfg.warm_start || cfg.calibrate_q;
            let forecaster = if needs_forecaster {
                Some(train_forecaster(&cfg.train, &data.train, &data.val)?)
            } else {
                None
            };
            let q = match &forecaster {
                Some(f) if cfg.calibrate_q => {
                    let [train_e, val_e, _] = errors_by_split(&f.network, &data)?;
                    risk_q(cfg, &train_e, &val_e)?
                }
                _ => cfg.train.q,
            };
            let evt_cfg = TrainConfig { q, ..cfg.train.clone() };
            let model = match forecaster {
                Some(f) if cfg.warm_start => train_evt_lstm_from(f.network, &evt_cfg, &data.train, &data.val)?,
                _ => train_evt_lstm(&evt_cfg, &data.train, &data.val)?,
            };
            (model, Some(q))
        }
    };
    log::info!(
        "trained {:?} for {} epochs in {:.1?}",
        cfg.model,
        model.history.len(),
        start.elapsed()
    );
    let saved = SavedModel {
        format: SAVED_MODEL_FORMAT.to_owned(),
        kind: cfg.model,
        look_back: cfg.look_back,
        look_ahead: cfg.look_ahead,
        norm: data.norm,
        tau_e: model.tau_e,
        q,
        epochs_run: model.history.len(),
        model: ModelFile::new(model.network.clone(), model.loss.clone()),
    };
    let manifest = TrainManifest {
        command: "train",
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        series_len: series.len(),
        windows: [data.train.len(), data.val.len(), data.test.len()],
        stop: model.stop,
        epochs_run: model.history.len(),
        q,
        tau_e: model.tau_e,
        history: &model.history,
        thresholds: &model.thresholds,
        warnings: data.warnings.iter().map(|w| format!("{w:?}")).collect(),
    };
    out.write_json("model.json", &saved)?;
    out.write_json("manifest.json", &manifest)?;
    Ok(())
}

pub fn load_model(path: &Path, cfg: &RunConfig) -> Result<SavedModel, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read model {}: {e}", path.display())))?;
    let saved: SavedModel = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("model {} is malformed: {e}", path.display())))?;
    if saved.format != SAVED_MODEL_FORMAT {
        return Err(CliError::config(format!("unsupported model format `{}`", saved.format)));
    }
    saved.model.network.validate()?;
    if (saved.look_back, saved.look_ahead) != (cfg.look_back, cfg.look_ahead) {
        return Err(CliError::config(format!(
            "model was trained with look_back {} / look_ahead {}, config has {} / {}",
            saved.look_back, saved.look_ahead, cfg.look_back, cfg.look_ahead
        )));
    }
    if saved.kind != cfg.model {
        return Err(CliError::config(format!(
            "model file holds a {:?} model, config selects {:?}",
            saved.kind, cfg.model
        )));
    }
    Ok(saved)
}

#[derive(Debug, Serialize)]
struct DetectionSummary {
    rule: RuleKind,
    params: RuleParams,
    split: &'static str,
    points: usize,
    flagged: usize,
    flagged_indices: Vec<usize>,
}

pub fn detect_cmd(cfg: &RunConfig, model_path: &Path, out: &OutputDir) -> Result<(), CliError> {
    let saved = load_model(model_path, cfg)?;
    let series = load_dataset(cfg)?;
    let data = prepare_with(&series, &cfg.split, cfg.look_back, cfg.look_ahead, Some(saved.norm))?;
    let net = &saved.model.network;
    let [train_e, val_e, test_e] = errors_by_split(net, &data)?;
    let (result, params) = if cfg.rule.is_hybrid() {
        let q = risk_q(cfg, &train_e, &val_e)?;
        let rule = calibrate_hybrid(cfg.rule, [&train_e, &val_e, &test_e], q, cfg.train.init_level)?;
        (detect(&test_e.errors, &rule)?, RuleParams::Hybrid(rule))
    } else {
        let tau_e = saved
            .tau_e
            .ok_or_else(|| CliError::config("model has no EVT threshold"))?;
        let params = RuleParams::EvtLstm {
            q: saved.q.unwrap_or(cfg.train.q),
            tau_e,
            epochs_run: saved.epochs_run,
        };
        (scores_from_errors(&test_e.errors, tau_e), params)
    };

    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["index", "timestamp", "error", "score", "flag"])
        .map_err(|e| CliError::runtime(e.to_string()))?;
    for i in 0..test_e.len() {
        csv.write_record([
            test_e.indices[i].to_string(),
            test_e.timestamps[i].to_string(),
            test_e.errors[i].to_string(),
            result.scores[i].to_string(),
            u8::from(result.flags[i]).to_string(),
        ])
        .map_err(|e| CliError::runtime(e.to_string()))?;
    }
    let bytes = csv.into_inner().map_err(|e| CliError::runtime(e.to_string()))?;
    let summary = DetectionSummary {
        rule: cfg.rule,
        params,
        split: "test",
        points: test_e.len(),
        flagged: result.flagged(),
        flagged_indices: (0..test_e.len())
            .filter(|&i| result.flags[i])
            .map(|i| test_e.indices[i])
            .collect(),
    };
    out.write_bytes("detections.csv", &bytes)?;
    out.write_json("detections.json", &summary)?;
    log::info!("{} of {} test points flagged", summary.flagged, summary.points);
    Ok(())
}

#[derive(Debug, Deserialize)]
struct DetectionRow {
    index: usize,
    #[allow(dead_code)]
    timestamp: i64,
    #[allow(dead_code)]
    error: f64,
    #[allow(dead_code)]
    score: f64,
    flag: u8,
}

#[derive(Debug, Serialize)]
struct EvaluationReport {
    detections: PathBuf,
    points: usize,
    metrics: Metrics,
}

pub fn evaluate(cfg: &RunConfig, detections: &Path, out: &OutputDir) -> Result<(), CliError> {
    let series = load_dataset(cfg)?;
    let labels = series.labels().ok_or_else(|| CliError::from(evtlstm::Error::LabelsRequired))?;
    let mut reader = csv::Reader::from_path(detections)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", detections.display())))?;
    let mut flags = Vec::new();
    let mut truth = Vec::new();
    for row in reader.deserialize::<DetectionRow>() {
        let row = row.map_err(|e| CliError::config(format!("{}: {e}", detections.display())))?;
        let label = row.index.checked_sub(series.offset()).and_then(|i| labels.get(i)).ok_or_else(|| {
            CliError::config(format!("detection index {} outside the series", row.index))
        })?;
        flags.push(row.flag == 1);
        truth.push(*label);
    }
    let report = EvaluationReport {
        detections: detections.to_path_buf(),
        points: flags.len(),
        metrics: score(&flags, &truth)?,
    };
    out.write_json("metrics.json", &report)?;
    print!("{}", to_json(&report)?);
    Ok(())
}

pub fn benchmark_cmd(cfg: &RunConfig, out: &OutputDir) -> Result<(), CliError> {
    let series = load_dataset(cfg)?;
    let start = Instant::now();
    let run = benchmark(&series, &cfg.benchmark_config())?;
    log::info!("benchmark finished in {:.1?}", start.elapsed());
    let table = run.report.to_table();
    out.write_bytes("report.json", run.report.to_json()?.as_bytes())?;
    out.write_bytes("report.txt", table.as_bytes())?;
    print!("{table}");
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct GpdReport {
    pub n: usize,
    pub level: f64,
    pub threshold: f64,
    pub n_peaks: usize,
    pub gamma: f64,
    pub sigma: f64,
    pub tail: TailKind,
    pub q: f64,
    pub tau_e: f64,
    pub anderson_darling: Option<AdResult>,
}

/// First column of a numeric file; a non-numeric first row is taken as a header.
pub fn read_numbers(path: &Path) -> Result<Vec<f64>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let mut values = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let cell = rec.get(0).unwrap_or("").trim();
        match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            Err(_) if row == 0 => {}
            _ => {
                return Err(CliError::config(format!(
                    "{} row {}: `{cell}` is not a finite number",
                    path.display(),
                    row + 1
                )))
            }
        }
    }
    Ok(values)
}

pub fn fit_gpd_cmd(
    input: &Path,
    q: f64,
    level: f64,
    ad_reps: Option<usize>,
    seed: u64,
) -> Result<GpdReport, CliError> {
    if !(q > 0.0 && q < 1.0) || !(level > 0.0 && level < 1.0) {
        return Err(CliError::config("q and level must lie in (0, 1)"));
    }
    let values = read_numbers(input)?;
    let fit = GpdFit::from_observations(&values, level)?;
    let tau_e = pot_threshold(&fit, q)?;
    let anderson_darling = match ad_reps {
        Some(reps) => {
            let peaks = evtlstm::evt::excesses(&values, fit.threshold);
            Some(anderson_darling(&peaks, &fit.params(), reps, seed)?)
        }
        None => None,
    };
    Ok(GpdReport {
        n: fit.n,
        level,
        threshold: fit.threshold,
        n_peaks: fit.n_peaks,
        gamma: fit.gamma,
        sigma: fit.sigma,
        tail: fit.tail_kind(),
        q,
        tau_e,
        anderson_darling,
    })
}
