//! Training objectives: mean squared error, the one-class hypersphere
//! objective, and the EVT objective that pulls every absolute prediction error
//! toward a threshold. All three add `(lambda / 2) * sum ||W||_F^2` over the
//! weight matrices (biases excluded).
//!
//! Data terms are averaged over every output component, so for one-step
//! forecasts they reduce to the usual per-sample means.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Svdd { center: Vec<f64> },
    Evt { tau: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    #[serde(flatten)]
    pub kind: LossKind,
    pub lambda: f64,
}

impl LossSpec {
    pub fn mse() -> Self {
        Self {
            kind: LossKind::Mse,
            lambda: 0.0,
        }
    }

    pub fn evt(tau: f64, lambda: f64) -> Self {
        Self {
            kind: LossKind::Evt { tau },
            lambda,
        }
    }

    pub fn svdd(center: Vec<f64>, lambda: f64) -> Self {
        Self {
            kind: LossKind::Svdd { center },
            lambda,
        }
    }

    fn check(&self, preds: &[Vec<f64>], targets: Option<&[Vec<f64>]>) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("weight decay {} must be >= 0", self.lambda)));
        }
        if preds.is_empty() {
            return Err(Error::Empty("loss over an empty batch"));
        }
        let dim = preds[0].len();
        if preds.iter().any(|p| p.len() != dim) {
            return Err(Error::Shape("ragged prediction batch".into()));
        }
        if let Some(t) = targets {
            if t.len() != preds.len() || t.iter().any(|t| t.len() != dim) {
                return Err(Error::Shape("predictions and targets differ in shape".into()));
            }
        }
        if let LossKind::Svdd { center } = &self.kind {
            if center.len() != dim {
                return Err(Error::Shape(format!(
                    "center has dimension {}, predictions {dim}",
                    center.len()
                )));
            }
        }
        Ok(())
    }

    fn needs_targets(&self) -> bool {
        !matches!(self.kind, LossKind::Svdd { .. })
    }

    /// Data term of the objective (no weight decay).
    pub fn data_term(&self, preds: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
        self.check(preds, self.needs_targets().then_some(targets))?;
        let n = preds.len() as f64;
        let dim = preds[0].len() as f64;
        let value = match &self.kind {
            LossKind::Mse => {
                pairs(preds, targets).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / (n * dim)
            }
            LossKind::Evt { tau } => {
                pairs(preds, targets).map(|(p, y)| ((p - y).abs() - tau).powi(2)).sum::<f64>() / (n * dim)
            }
            LossKind::Svdd { center } => {
                preds
                    .iter()
                    .map(|p| p.iter().zip(center).map(|(p, c)| (p - c).powi(2)).sum::<f64>())
                    .sum::<f64>()
                    / n
            }
        };
        Ok(value)
    }

    /// Full objective: data term plus weight decay on `weights`.
    pub fn value(&self, preds: &[Vec<f64>], targets: &[Vec<f64>], weights: &[&[f64]]) -> Result<f64> {
        Ok(self.data_term(preds, targets)? + self.decay(weights))
    }

    pub fn decay(&self, weights: &[&[f64]]) -> f64 {
        0.5 * self.lambda * weights.iter().flat_map(|w| w.iter()).map(|w| w * w).sum::<f64>()
    }

    /// Gradient of the data term with respect to each prediction.
    ///
    /// At `|y_hat - y| = 0` the EVT term uses the subgradient `sign(0) = 0`.
    pub fn pred_gradient(&self, preds: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.check(preds, self.needs_targets().then_some(targets))?;
        let n = preds.len() as f64;
        let dim = preds[0].len() as f64;
        let grads = match &self.kind {
            LossKind::Mse => zip_map(preds, targets, |p, y| 2.0 * (p - y) / (n * dim)),
            LossKind::Evt { tau } => zip_map(preds, targets, |p, y| {
                let e = p - y;
                2.0 * (e.abs() - tau) * sign(e) / (n * dim)
            }),
            LossKind::Svdd { center } => preds
                .iter()
                .map(|p| p.iter().zip(center).map(|(p, c)| 2.0 * (p - c) / n).collect())
                .collect(),
        };
        Ok(grads)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn pairs<'a>(preds: &'a [Vec<f64>], targets: &'a [Vec<f64>]) -> impl Iterator<Item = (f64, f64)> + 'a {
    preds
        .iter()
        .zip(targets)
        .flat_map(|(p, t)| p.iter().copied().zip(t.iter().copied()))
}

fn zip_map(preds: &[Vec<f64>], targets: &[Vec<f64>], f: impl Fn(f64, f64) -> f64) -> Vec<Vec<f64>> {
    preds
        .iter()
        .zip(targets)
        .map(|(p, t)| p.iter().zip(t).map(|(&p, &y)| f(p, y)).collect())
        .collect()
}

/// Mean of squared component differences.
pub fn mse_loss(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::Shape(format!("{} predictions, {} targets", preds.len(), targets.len())));
    }
    if preds.is_empty() {
        return Err(Error::Empty("mse of empty vectors"));
    }
    Ok(preds.iter().zip(targets).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / preds.len() as f64)
}

/// `(1/N) sum (|y_hat - y| - tau)^2 + (lambda/2) sum ||W||_F^2`.
pub fn evt_loss(preds: &[Vec<f64>], targets: &[Vec<f64>], spec: &LossSpec, weights: &[&[f64]]) -> Result<f64> {
    if !matches!(spec.kind, LossKind::Evt { .. }) {
        return Err(Error::Config("evt_loss needs an EVT loss spec".into()));
    }
    spec.value(preds, targets, weights)
}

/// `(1/N) sum ||phi(x) - c||^2 + (lambda/2) sum ||W||_F^2`.
pub fn svdd_loss(preds: &[Vec<f64>], spec: &LossSpec, weights: &[&[f64]]) -> Result<f64> {
    if !matches!(spec.kind, LossKind::Svdd { .. }) {
        return Err(Error::Config("svdd_loss needs an SVDD loss spec".into()));
    }
    spec.value(preds, &[], weights)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn col(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(mse_loss(&[1.0, 3.0], &[0.0, 0.0]).unwrap(), 5.0);
        assert!(matches!(mse_loss(&[1.0], &[]), Err(Error::Shape(_))));
    }

    #[test]
    fn evt_examples() {
        let spec = LossSpec::evt(2.0, 0.0);
        assert_eq!(evt_loss(&col(&[2.0, -2.0]), &col(&[0.0, 0.0]), &spec, &[]).unwrap(), 0.0);
        assert_eq!(evt_loss(&col(&[1.0, 3.0]), &col(&[0.0, 0.0]), &spec, &[]).unwrap(), 1.0);
        let spec = LossSpec::evt(0.0, 2.0);
        let w = [3.0];
        assert_eq!(evt_loss(&col(&[0.0]), &col(&[0.0]), &spec, &[&w]).unwrap(), 9.0);
    }

    #[test]
    fn svdd_examples() {
        let spec = LossSpec::svdd(vec![1.0], 0.0);
        assert_eq!(svdd_loss(&col(&[1.0, 1.0]), &spec, &[]).unwrap(), 0.0);
        assert_eq!(svdd_loss(&col(&[0.0, 2.0]), &spec, &[]).unwrap(), 1.0);
        let spec = LossSpec::svdd(vec![1.0], 0.5);
        let w = [1.0, -2.0];
        assert_eq!(svdd_loss(&col(&[1.0]), &spec, &[&w]).unwrap(), 0.25 * 5.0);
        let bad = LossSpec::svdd(vec![1.0, 2.0], 0.0);
        assert!(matches!(svdd_loss(&col(&[1.0]), &bad, &[]), Err(Error::Shape(_))));
    }

    #[test]
    fn evt_subgradient_at_zero_error() {
        let g = LossSpec::evt(0.5, 0.0).pred_gradient(&col(&[1.0]), &col(&[1.0])).unwrap();
        assert_eq!(g, vec![vec![0.0]]);
    }

    proptest! {
        #[test]
        fn losses_non_negative(ps in prop::collection::vec(-5f64..5.0, 1..20), tau in 0f64..3.0, lambda in 0f64..2.0) {
            let ys: Vec<f64> = ps.iter().map(|p| p * 0.5 - 0.1).collect();
            let w = [0.3, -0.7];
            for spec in [LossSpec { kind: LossKind::Mse, lambda }, LossSpec::evt(tau, lambda), LossSpec::svdd(vec![0.2], lambda)] {
                prop_assert!(spec.value(&col(&ps), &col(&ys), &[&w]).unwrap() >= 0.0);
            }
        }

        #[test]
        fn evt_with_zero_tau_is_mse(ps in prop::collection::vec(-5f64..5.0, 1..20)) {
            let ys: Vec<f64> = ps.iter().map(|p| (p * 1.7).sin()).collect();
            let evt = evt_loss(&col(&ps), &col(&ys), &LossSpec::evt(0.0, 0.0), &[]).unwrap();
            let mse = mse_loss(&ps, &ys).unwrap();
            prop_assert!((evt - mse).abs() <= 1e-12 * mse.max(1.0));
        }
    }
}
