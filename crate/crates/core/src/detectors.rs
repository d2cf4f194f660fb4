//! Detection rules applied to forecaster prediction errors: Gaussian log
//! density, Tukey fences and the peaks-over-threshold rule, with calibration
//! of each rule's sensitivity parameter.

use serde::{Deserialize, Serialize};

use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::evaluation::{confusion, Counts};
use crate::evt::{pot_threshold, GpdFit};
use crate::nn::Network;
use crate::stats::{mean, quantile_sorted};

pub const DEFAULT_Q_GRID: [f64; 3] = [1e-3, 1e-4, 1e-5];

/// Absolute one-step-ahead errors, aligned with the windows they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionErrors {
    pub errors: Vec<f64>,
    /// Index into the original series of the point each error belongs to.
    pub indices: Vec<usize>,
    pub timestamps: Vec<i64>,
    pub labels: Option<Vec<bool>>,
}

impl PredictionErrors {
    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn labels_or_err(&self) -> Result<&[bool]> {
        self.labels.as_deref().ok_or(Error::LabelsRequired)
    }

    /// Concatenation in the given order; labels survive only if every part has them.
    pub fn concat(parts: &[&PredictionErrors]) -> Self {
        let mut out = PredictionErrors {
            errors: Vec::new(),
            indices: Vec::new(),
            timestamps: Vec::new(),
            labels: Some(Vec::new()),
        };
        for p in parts {
            out.errors.extend_from_slice(&p.errors);
            out.indices.extend_from_slice(&p.indices);
            out.timestamps.extend_from_slice(&p.timestamps);
            match (&mut out.labels, &p.labels) {
                (Some(acc), Some(l)) => acc.extend_from_slice(l),
                (labels, _) => *labels = None,
            }
        }
        out
    }
}

/// Errors of `network` on every window of `data`, using the first forecast
/// component so that each point is scored by the most recent window.
pub fn prediction_errors(network: &Network, data: &WindowedDataset) -> Result<PredictionErrors> {
    errors_from_predictions(&network.predict_batch(&data.inputs)?, data)
}

pub fn errors_from_predictions(preds: &[Vec<f64>], data: &WindowedDataset) -> Result<PredictionErrors> {
    if preds.len() != data.len() || preds.iter().any(|p| p.len() != data.look_ahead) {
        return Err(Error::Shape(format!(
            "network output does not match look-ahead {}",
            data.look_ahead
        )));
    }
    Ok(PredictionErrors {
        errors: preds
            .iter()
            .zip(&data.targets)
            .map(|(p, t)| (p[0] - t[0]).abs())
            .collect(),
        indices: data.target_indices.clone(),
        timestamps: data.target_timestamps.clone(),
        labels: data.target_labels.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub mu: f64,
    pub sigma2: f64,
    /// Log-density threshold; unset until calibrated.
    pub tau_g: Option<f64>,
}

/// Maximum-likelihood mean and (biased) variance.
pub fn fit_gaussian(errors: &[f64]) -> Result<GaussianFit> {
    if errors.len() < 2 {
        return Err(Error::Degenerate("Gaussian fit needs at least two errors"));
    }
    let mu = mean(errors);
    let sigma2 = errors.iter().map(|e| (e - mu).powi(2)).sum::<f64>() / errors.len() as f64;
    if !(sigma2 > 0.0) {
        return Err(Error::Degenerate("all errors are equal"));
    }
    Ok(GaussianFit { mu, sigma2, tau_g: None })
}

pub fn gaussian_logpd(e: f64, fit: &GaussianFit) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * fit.sigma2).ln() - (e - fit.mu).powi(2) / (2.0 * fit.sigma2)
}

/// Threshold on log-density maximizing F1 of `score < tau` on labeled scores.
///
/// Candidates are midpoints between adjacent distinct scores. Among equal F1
/// values the lowest threshold wins.
pub fn calibrate_gaussian_threshold(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape("scores and labels differ in length".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::NoAnomalies);
    }
    if positives == labels.len() {
        return Err(Error::Degenerate("calibration data has no normal points"));
    }
    let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut best: Option<(f64, (u128, u128))> = None;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < pairs.len() {
        let s = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == s {
            if pairs[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let Some(&(next, _)) = pairs.get(i) else { break };
        let counts = Counts {
            tp,
            fp,
            fn_: positives - tp,
            tn: 0,
        };
        let f1 = counts.f1_fraction();
        let better = match best {
            None => true,
            Some((_, (bn, bd))) => f1.0 * bd > bn * f1.1,
        };
        if better {
            best = Some((0.5 * (s + next), f1));
        }
    }
    best.map(|(tau, _)| tau)
        .ok_or(Error::Degenerate("all calibration scores are equal"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TukeyFit {
    pub q1: f64,
    pub q3: f64,
    pub tau_t: f64,
}

/// Outer fence `Q3 + 3 IQR` with type-7 quartiles.
pub fn tukey_threshold(errors: &[f64]) -> Result<TukeyFit> {
    if errors.is_empty() {
        return Err(Error::Empty("Tukey fence of no errors"));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    Ok(TukeyFit {
        q1,
        q3,
        tau_t: q3 + 3.0 * (q3 - q1),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvtRule {
    pub fit: GpdFit,
    pub q: f64,
    pub tau_e: f64,
}

impl EvtRule {
    pub fn new(fit: GpdFit, q: f64) -> Result<Self> {
        let tau_e = pot_threshold(&fit, q)?;
        Ok(Self { fit, q, tau_e })
    }

    pub fn calibrate(errors: &[f64], init_level: f64, q: f64) -> Result<Self> {
        Self::new(GpdFit::from_observations(errors, init_level)?, q)
    }
}

/// Smallest grid probability whose POT threshold flags every labeled anomaly
/// of the initialization stream; failing that, the one with the best F1.
pub fn calibrate_q(init_errors: &[f64], init_labels: &[bool], grid: &[f64], init_level: f64) -> Result<f64> {
    if init_errors.len() != init_labels.len() {
        return Err(Error::Shape("errors and labels differ in length".into()));
    }
    let fit = GpdFit::from_observations(init_errors, init_level)?;
    let mut evaluated = Vec::new();
    for &q in grid {
        let Ok(rule) = EvtRule::new(fit, q) else { continue };
        let flags: Vec<bool> = init_errors.iter().map(|&e| e > rule.tau_e).collect();
        evaluated.push((q, confusion(&flags, init_labels)?));
    }
    if evaluated.is_empty() {
        return Err(Error::Config("no q in the grid is below the peak ratio".into()));
    }
    let smallest_q = |a: f64, b: f64| if a <= b { a } else { b };
    if let Some(q) = evaluated
        .iter()
        .filter(|(_, c)| c.fn_ == 0)
        .map(|(q, _)| *q)
        .reduce(smallest_q)
    {
        return Ok(q);
    }
    let mut best = evaluated[0];
    for &(q, c) in &evaluated[1..] {
        let (n, d) = c.f1_fraction();
        let (bn, bd) = best.1.f1_fraction();
        if n * bd > bn * d || (n * bd == bn * d && q < best.0) {
            best = (q, c);
        }
    }
    Ok(best.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum DetectorModel {
    Gaussian(GaussianFit),
    Tukey(TukeyFit),
    Evt(EvtRule),
}

impl DetectorModel {
    pub fn name(&self) -> &'static str {
        match self {
            DetectorModel::Gaussian(_) => "gaussian",
            DetectorModel::Tukey(_) => "tukey",
            DetectorModel::Evt(_) => "evt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub flags: Vec<bool>,
    pub scores: Vec<f64>,
}

impl DetectionResult {
    pub fn flagged(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

/// Gaussian flags `logpd < tau_g` (score = log density); Tukey and EVT flag
/// errors strictly above their fence (score = raw error).
pub fn detect(errors: &[f64], rule: &DetectorModel) -> Result<DetectionResult> {
    let (flags, scores) = match rule {
        DetectorModel::Gaussian(g) => {
            let tau = g.tau_g.ok_or(Error::MissingThreshold)?;
            let scores: Vec<f64> = errors.iter().map(|&e| gaussian_logpd(e, g)).collect();
            (scores.iter().map(|&s| s < tau).collect(), scores)
        }
        DetectorModel::Tukey(t) => (errors.iter().map(|&e| e > t.tau_t).collect(), errors.to_vec()),
        DetectorModel::Evt(r) => (errors.iter().map(|&e| e > r.tau_e).collect(), errors.to_vec()),
    };
    Ok(DetectionResult { flags, scores })
}
