//! Training loops: a mean-squared-error forecaster, the EVT objective with a
//! POT threshold re-estimated every `k` epochs, and the one-class hypersphere
//! objective.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::WindowedDataset;
use crate::detectors::{prediction_errors, DetectionResult};
use crate::error::{Error, Result};
use crate::evt::{pot_threshold, GpdFit, DEFAULT_INIT_LEVEL};
use crate::nn::{AdamState, LossKind, LossSpec, Network};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// LSTM layer sizes, first layer nearest the input.
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Threshold update period in epochs.
    pub k: usize,
    pub learning_rate: f64,
    /// Weight decay for the EVT and hypersphere objectives.
    pub lambda: f64,
    pub q: f64,
    pub init_level: f64,
    pub patience: usize,
    /// Relative change of the epoch objective counted as "no change".
    pub tolerance: f64,
    /// Consecutive unchanged epochs that count as converged.
    pub convergence_epochs: usize,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![20],
            dropout: 0.2,
            epochs: 100,
            batch_size: 64,
            k: 20,
            learning_rate: 1e-3,
            lambda: 1e-6,
            q: 1e-3,
            init_level: DEFAULT_INIT_LEVEL,
            patience: 10,
            tolerance: 1e-5,
            convergence_epochs: 5,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer sizes must be non-empty and positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must be in [0, 1)", self.dropout));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.k == 0 {
            return bad("epochs, batch_size and k must be positive".into());
        }
        if self.k > self.epochs {
            return bad(format!("k = {} exceeds epochs = {}", self.k, self.epochs));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be >= 0", self.lambda));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return bad(format!("q {} must be in (0, 1)", self.q));
        }
        if !(self.init_level > 0.0 && self.init_level < 1.0) {
            return bad(format!("init_level {} must be in (0, 1)", self.init_level));
        }
        if !(self.tolerance > 0.0) || self.convergence_epochs == 0 {
            return bad("tolerance and convergence_epochs must be positive".into());
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm {} must be positive", self.clip_norm));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Full training-set objective at the end of the epoch, inference mode.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Threshold the epoch was optimized against (EVT objective only).
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdUpdate {
    pub epoch: usize,
    /// Threshold in effect after this step.
    pub tau_e: f64,
    pub fit: Option<GpdFit>,
    /// Why the previous threshold was kept, if it was.
    pub retained: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStopping,
    Converged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub network: Network,
    /// Objective at the end of training (carries the final threshold).
    pub loss: LossSpec,
    pub tau_e: Option<f64>,
    pub history: Vec<EpochRecord>,
    pub thresholds: Vec<ThresholdUpdate>,
    pub stop: StopReason,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    Forecast,
    Evt,
    /// Hypersphere objective around a fixed center, biases frozen at zero.
    Svdd { center: Vec<f64> },
}

pub fn train_forecaster(cfg: &TrainConfig, train: &WindowedDataset, val: &WindowedDataset) -> Result<TrainedModel> {
    train_with(Objective::Forecast, None, cfg, train, val, &mut |_, _| {})
}

/// EVT objective from a fresh network; the threshold starts at 0.
pub fn train_evt_lstm(cfg: &TrainConfig, train: &WindowedDataset, val: &WindowedDataset) -> Result<TrainedModel> {
    train_with(Objective::Evt, None, cfg, train, val, &mut |_, _| {})
}

/// EVT objective continuing from existing weights (e.g. a trained forecaster).
pub fn train_evt_lstm_from(
    network: Network,
    cfg: &TrainConfig,
    train: &WindowedDataset,
    val: &WindowedDataset,
) -> Result<TrainedModel> {
    train_with(Objective::Evt, Some(network), cfg, train, val, &mut |_, _| {})
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvddSummary {
    pub center: Vec<f64>,
    pub initial_mean_abs_prediction: f64,
    pub final_mean_abs_prediction: f64,
}

/// Bias-free network whose hypersphere center is the mean initial prediction
/// on the training windows.
pub fn svdd_initial_network(cfg: &TrainConfig, train: &WindowedDataset) -> Result<(Network, Vec<f64>)> {
    let mut net = Network::new(&cfg.hidden, train.look_ahead, cfg.dropout, cfg.seed)?;
    for layer in &mut net.layers {
        layer.b.iter_mut().for_each(|b| *b = 0.0);
    }
    net.dense.biases.iter_mut().for_each(|b| *b = 0.0);
    let preds = net.predict_batch(&train.inputs)?;
    let mut center = vec![0.0; train.look_ahead];
    for p in &preds {
        center.iter_mut().zip(p).for_each(|(c, v)| *c += v);
    }
    center.iter_mut().for_each(|c| *c /= preds.len().max(1) as f64);
    Ok((net, center))
}

pub fn train_svdd(cfg: &TrainConfig, train: &WindowedDataset, val: &WindowedDataset) -> Result<(TrainedModel, SvddSummary)> {
    let (net, center) = svdd_initial_network(cfg, train)?;
    let initial = mean_abs_prediction(&net, train)?;
    let model = train_with(
        Objective::Svdd { center: center.clone() },
        Some(net),
        cfg,
        train,
        val,
        &mut |_, _| {},
    )?;
    let summary = SvddSummary {
        center,
        initial_mean_abs_prediction: initial,
        final_mean_abs_prediction: mean_abs_prediction(&model.network, train)?,
    };
    Ok((model, summary))
}

pub fn mean_abs_prediction(net: &Network, data: &WindowedDataset) -> Result<f64> {
    let preds = net.predict_batch(&data.inputs)?;
    let count = preds.iter().map(Vec::len).sum::<usize>();
    if count == 0 {
        return Err(Error::Empty("no predictions"));
    }
    Ok(preds.iter().flatten().map(|p| p.abs()).sum::<f64>() / count as f64)
}

fn check_dataset(name: &'static str, data: &WindowedDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty(name));
    }
    Ok(())
}

fn spec_for(objective: &Objective, lambda: f64, tau: f64) -> LossSpec {
    match objective {
        Objective::Forecast => LossSpec::mse(),
        Objective::Evt => LossSpec::evt(tau, lambda),
        Objective::Svdd { center } => LossSpec::svdd(center.clone(), lambda),
    }
}

/// Objective of `net` over a whole dataset, with dropout off.
pub fn dataset_loss(net: &Network, spec: &LossSpec, data: &WindowedDataset) -> Result<f64> {
    let preds = net.predict_batch(&data.inputs)?;
    spec.value(&preds, &data.targets, &net.weight_matrices())
}

/// POT threshold from the training-set errors of `net`.
fn refresh_threshold(net: &Network, cfg: &TrainConfig, train: &WindowedDataset) -> Result<(f64, GpdFit)> {
    let errors = prediction_errors(net, train)?;
    let fit = GpdFit::from_observations(&errors.errors, cfg.init_level)?;
    let tau = pot_threshold(&fit, cfg.q)?;
    Ok((tau, fit))
}

/// Shared loop. `observe` sees the network and record at the end of every epoch.
pub fn train_with(
    objective: Objective,
    init: Option<Network>,
    cfg: &TrainConfig,
    train: &WindowedDataset,
    val: &WindowedDataset,
    observe: &mut dyn FnMut(&Network, &EpochRecord),
) -> Result<TrainedModel> {
    cfg.validate()?;
    check_dataset("training windows", train)?;
    let mut net = match init {
        Some(n) => {
            n.validate()?;
            n
        }
        None => Network::new(&cfg.hidden, train.look_ahead, cfg.dropout, cfg.seed)?,
    };
    if net.output_size() != train.look_ahead {
        return Err(Error::Shape(format!(
            "network predicts {} steps, data has look-ahead {}",
            net.output_size(),
            train.look_ahead
        )));
    }
    let freeze_biases = matches!(objective, Objective::Svdd { .. });
    let is_evt = matches!(objective, Objective::Evt);
    let weight_mask = net.weight_mask();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = AdamState::new(&net);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut tau = 0.0;
    let mut history = Vec::new();
    let mut thresholds = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut wait = 0;
    let mut prev_loss: Option<f64> = None;
    let mut flat = 0;
    let mut stop = StopReason::MaxEpochs;
    let mut last_update = 0;

    for epoch in 1..=cfg.epochs {
        let spec = spec_for(&objective, cfg.lambda, tau);
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let windows: Vec<Vec<f64>> = batch.iter().map(|&i| train.inputs[i].clone()).collect();
            let targets: Vec<Vec<f64>> = batch.iter().map(|&i| train.targets[i].clone()).collect();
            let mut preds = Vec::with_capacity(batch.len());
            let mut caches = Vec::with_capacity(batch.len());
            for w in &windows {
                let (p, c) = net.forward_train(w, rng.random())?;
                preds.push(p);
                caches.push(c);
            }
            let mut grads = net.backward(&windows, &targets, &spec, &preds, &caches)?;
            if freeze_biases {
                for (g, &is_w) in grads.tensors.iter_mut().zip(&weight_mask) {
                    if !is_w {
                        g.iter_mut().for_each(|v| *v = 0.0);
                    }
                }
            }
            grads.clip_global_norm(cfg.clip_norm);
            net.adam_update(&grads, &mut adam, cfg.learning_rate)?;
        }

        let train_loss = dataset_loss(&net, &spec, train)?;
        if !train_loss.is_finite() {
            return Err(Error::Degenerate("training objective diverged"));
        }
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(dataset_loss(&net, &spec, val)?)
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            tau: is_evt.then_some(tau),
        };
        observe(&net, &record);
        history.push(record);

        if let Some(v) = val_loss {
            if v < best_val {
                best_val = v;
                wait = 0;
            } else {
                wait += 1;
            }
        }
        if let Some(p) = prev_loss {
            let rel = (train_loss - p).abs() / p.abs().max(f64::MIN_POSITIVE);
            flat = if rel < cfg.tolerance { flat + 1 } else { 0 };
        }
        prev_loss = Some(train_loss);

        if is_evt && epoch % cfg.k == 0 {
            tau = update_threshold(&net, cfg, train, epoch, tau, &mut thresholds)?;
            last_update = epoch;
            best_val = f64::INFINITY;
            wait = 0;
            flat = 0;
            prev_loss = None;
        }
        if val_loss.is_some() && wait >= cfg.patience {
            stop = StopReason::EarlyStopping;
            break;
        }
        if flat >= cfg.convergence_epochs {
            stop = StopReason::Converged;
            break;
        }
    }

    let final_epoch = history.len();
    if is_evt && last_update != final_epoch {
        tau = update_threshold(&net, cfg, train, final_epoch, tau, &mut thresholds)?;
    }
    Ok(TrainedModel {
        loss: spec_for(&objective, cfg.lambda, tau),
        tau_e: is_evt.then_some(tau),
        network: net,
        history,
        thresholds,
        stop,
    })
}

fn update_threshold(
    net: &Network,
    cfg: &TrainConfig,
    train: &WindowedDataset,
    epoch: usize,
    current: f64,
    trace: &mut Vec<ThresholdUpdate>,
) -> Result<f64> {
    let entry = match refresh_threshold(net, cfg, train) {
        Ok((tau_e, fit)) => ThresholdUpdate {
            epoch,
            tau_e,
            fit: Some(fit),
            retained: None,
        },
        Err(e) if e.is_validation() => {
            log::warn!("epoch {epoch}: keeping threshold {current}: {e}");
            ThresholdUpdate {
                epoch,
                tau_e: current,
                fit: None,
                retained: Some(e.to_string()),
            }
        }
        Err(e) => return Err(e),
    };
    let tau = entry.tau_e;
    trace.push(entry);
    Ok(tau)
}

/// Decision scores `|y_hat - y| - tau_e` on the one-step errors; a point is
/// anomalous when its score is non-negative.
pub fn decision_scores(model: &TrainedModel, data: &WindowedDataset) -> Result<DetectionResult> {
    let tau = model.tau_e.ok_or(Error::MissingThreshold)?;
    let errors = prediction_errors(&model.network, data)?;
    Ok(scores_from_errors(&errors.errors, tau))
}

pub fn scores_from_errors(errors: &[f64], tau: f64) -> DetectionResult {
    let scores: Vec<f64> = errors.iter().map(|&e| e - tau).collect();
    DetectionResult {
        flags: scores.iter().map(|&s| s >= 0.0).collect(),
        scores,
    }
}

impl TrainedModel {
    pub fn threshold_epochs(&self) -> Vec<usize> {
        self.thresholds.iter().map(|t| t.epoch).collect()
    }

    pub fn evt_tau(&self) -> Option<f64> {
        match self.loss.kind {
            LossKind::Evt { tau } => Some(tau),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{window, LabeledSeries};

    fn series(values: Vec<f64>) -> LabeledSeries {
        LabeledSeries::from_values(values, None).unwrap()
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            hidden: vec![6],
            dropout: 0.0,
            epochs: 12,
            batch_size: 16,
            k: 4,
            learning_rate: 1e-2,
            init_level: 0.9,
            q: 1e-3,
            ..TrainConfig::default()
        }
    }

    fn noisy_sine(n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        (0..n)
            .map(|i| 0.5 + 0.4 * (i as f64 * 0.3).sin() + 0.02 * (rng.random::<f64>() - 0.5))
            .collect()
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { k: 200, ..TrainConfig::default() },
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { dropout: 1.0, ..TrainConfig::default() },
            TrainConfig { hidden: vec![], ..TrainConfig::default() },
            TrainConfig { q: 0.0, ..TrainConfig::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let d = window(&series(vec![0.1, 0.2, 0.3]), 2, 1).unwrap();
        let empty = WindowedDataset {
            inputs: vec![],
            targets: vec![],
            target_indices: vec![],
            target_timestamps: vec![],
            target_labels: None,
            ..d.clone()
        };
        assert!(matches!(train_forecaster(&quick_cfg(), &empty, &d), Err(Error::Empty(_))));
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let s = series(noisy_sine(120));
        let d = window(&s, 5, 1).unwrap();
        let cfg = TrainConfig { dropout: 0.2, ..quick_cfg() };
        let a = train_evt_lstm(&cfg, &d, &d).unwrap();
        let b = train_evt_lstm(&cfg, &d, &d).unwrap();
        assert_eq!(a, b);
        let bits = |m: &TrainedModel| m.history.iter().map(|h| h.train_loss.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn evt_thresholds_follow_the_period_and_exceed_initial_threshold() {
        let s = series(noisy_sine(400));
        let d = window(&s, 5, 1).unwrap();
        let cfg = TrainConfig {
            patience: 1000,
            tolerance: 1e-300,
            ..quick_cfg()
        };
        let m = train_evt_lstm(&cfg, &d, &d).unwrap();
        assert_eq!(m.stop, StopReason::MaxEpochs);
        assert_eq!(m.threshold_epochs(), [4, 8, 12]);
        for rec in &m.history[..4] {
            assert_eq!(rec.tau, Some(0.0));
        }
        for t in &m.thresholds {
            let fit = t.fit.as_ref().expect("fit succeeds on 390 errors");
            assert!(t.tau_e.is_finite() && t.tau_e > fit.threshold);
        }
        assert_eq!(m.tau_e, Some(m.thresholds.last().unwrap().tau_e));
        assert_eq!(m.evt_tau(), m.tau_e);
    }

    #[test]
    fn recorded_losses_match_recomputation() {
        let s = series(noisy_sine(200));
        let d = window(&s, 5, 1).unwrap();
        let cfg = TrainConfig { dropout: 0.3, lambda: 1e-3, ..quick_cfg() };
        let mut mismatch = 0.0f64;
        let mut seen = 0;
        train_with(Objective::Evt, None, &cfg, &d, &d, &mut |net, rec| {
            let spec = LossSpec::evt(rec.tau.unwrap(), cfg.lambda);
            let again = dataset_loss(net, &spec, &d).unwrap();
            mismatch = mismatch.max((again - rec.train_loss).abs());
            seen += 1;
        })
        .unwrap();
        assert!(seen > 0);
        assert!(mismatch <= 1e-10, "{mismatch}");
    }

    #[test]
    fn short_series_keeps_previous_threshold() {
        // 40 windows at the 0.9 level give 4 excesses, far below the minimum.
        let s = series(noisy_sine(45));
        let d = window(&s, 5, 1).unwrap();
        let m = train_evt_lstm(&TrainConfig { epochs: 8, ..quick_cfg() }, &d, &d).unwrap();
        assert!(m.thresholds.iter().all(|t| t.retained.is_some() && t.fit.is_none()));
        assert_eq!(m.tau_e, Some(0.0));
    }

    #[test]
    fn early_stopping_triggers_final_threshold_refresh() {
        let s = series(noisy_sine(300));
        let d = window(&s, 5, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 40,
            k: 20,
            patience: 0,
            ..quick_cfg()
        };
        let m = train_evt_lstm(&cfg, &d, &d).unwrap();
        assert_eq!(m.stop, StopReason::EarlyStopping);
        assert!(m.history.len() < 20);
        assert_eq!(m.threshold_epochs(), [m.history.len()]);
        assert!(m.tau_e.unwrap() > 0.0);
    }

    #[test]
    fn decision_score_examples() {
        let r = scores_from_errors(&[0.1, 0.9], 0.5);
        assert_eq!(r.flags, [false, true]);
        assert!((r.scores[0] + 0.4).abs() < 1e-15 && (r.scores[1] - 0.4).abs() < 1e-15);
        assert_eq!(scores_from_errors(&[0.5], 0.5).flags, [true]);
        assert_eq!(scores_from_errors(&[0.0, 0.0], 0.2).flags, [false, false]);
    }

    #[test]
    fn decision_scores_need_a_threshold() {
        let s = series(noisy_sine(60));
        let d = window(&s, 5, 1).unwrap();
        let m = train_forecaster(&TrainConfig { epochs: 4, ..quick_cfg() }, &d, &d).unwrap();
        assert!(m.tau_e.is_none());
        assert!(matches!(decision_scores(&m, &d), Err(Error::MissingThreshold)));
    }

    #[test]
    fn svdd_keeps_biases_at_zero() {
        let s = series(noisy_sine(120));
        let d = window(&s, 5, 1).unwrap();
        let cfg = TrainConfig { lambda: 1e-3, ..quick_cfg() };
        let (m, summary) = train_svdd(&cfg, &d, &d).unwrap();
        assert!(m.network.layers.iter().all(|l| l.b.iter().all(|&b| b == 0.0)));
        assert!(m.network.dense.biases.iter().all(|&b| b == 0.0));
        assert_eq!(summary.center.len(), 1);
        assert!(summary.final_mean_abs_prediction < summary.initial_mean_abs_prediction);
    }

    #[test]
    fn constant_series_is_learned() {
        let s = series(vec![0.5; 300]);
        let d = window(&s, 4, 1).unwrap();
        let cfg = TrainConfig {
            hidden: vec![4],
            dropout: 0.0,
            epochs: 100,
            learning_rate: 1e-2,
            patience: 100,
            ..TrainConfig::default()
        };
        let m = train_forecaster(&cfg, &d, &d).unwrap();
        let v = m.history.last().unwrap().val_loss.unwrap();
        assert!(v < 1e-4, "{v}");
    }
}
