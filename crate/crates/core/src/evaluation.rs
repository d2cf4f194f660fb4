//! Point-wise confusion counts and precision / recall / F1.
//!
//! Ratios with a zero denominator are reported as 0 and flagged as undefined.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Counts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// F1 as the exact fraction `2tp / (2tp + fp + fn)`, for tie-free comparisons.
    pub(crate) fn f1_fraction(&self) -> (u128, u128) {
        let num = 2 * self.tp as u128;
        (num, num + self.fp as u128 + self.fn_ as u128)
    }
}

/// Exact-index matching of flags against labels.
pub fn confusion(flags: &[bool], labels: &[bool]) -> Result<Counts> {
    if flags.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} flags against {} labels",
            flags.len(),
            labels.len()
        )));
    }
    let mut c = Counts::default();
    for (&f, &l) in flags.iter().zip(labels) {
        match (f, l) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(flatten)]
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

pub fn metrics(counts: Counts) -> Metrics {
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            (0.0, true)
        } else {
            (num as f64 / den as f64, false)
        }
    };
    let (precision, precision_undefined) = ratio(counts.tp, counts.tp + counts.fp);
    let (recall, recall_undefined) = ratio(counts.tp, counts.tp + counts.fn_);
    let (f1, f1_undefined) = if precision + recall > 0.0 {
        (2.0 * precision * recall / (precision + recall), false)
    } else {
        (0.0, true)
    };
    Metrics {
        counts,
        precision,
        recall,
        f1,
        precision_undefined,
        recall_undefined,
        f1_undefined,
    }
}

/// Confusion plus metrics in one call.
pub fn score(flags: &[bool], labels: &[bool]) -> Result<Metrics> {
    Ok(metrics(confusion(flags, labels)?))
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "tp={} fp={} fn={} tn={} P={:.4} R={:.4} F1={:.4}",
            self.counts.tp, self.counts.fp, self.counts.fn_, self.counts.tn, self.precision, self.recall, self.f1
        )
    }
}
