//! Labeled sine-plus-noise series with injected point spikes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{LabeledSeries, SplitSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpikeSeriesConfig {
    pub len: usize,
    pub period: f64,
    pub amplitude: f64,
    /// Noise standard deviation, in the same units as the amplitude.
    pub noise_sd: f64,
    /// Spike height in noise standard deviations.
    pub spike_sd: f64,
    pub test_spikes: usize,
    /// Alternate spike signs instead of spiking upward only.
    pub alternate_signs: bool,
    pub val_spikes: usize,
    /// Used only to place spikes inside the right split.
    pub split: SplitSpec,
    /// Points left clean at the start of each split (at least the look-back).
    pub lead: usize,
    /// Minimum distance between consecutive spikes.
    pub min_gap: usize,
    pub seed: u64,
}

impl Default for SpikeSeriesConfig {
    fn default() -> Self {
        Self {
            len: 2000,
            period: 50.0,
            amplitude: 1.0,
            noise_sd: 0.05,
            spike_sd: 10.0,
            test_spikes: 10,
            alternate_signs: false,
            val_spikes: 4,
            split: SplitSpec {
                train: 0.8,
                val: 0.1,
                test: 0.1,
            },
            lead: 20,
            min_gap: 8,
            seed: 7,
        }
    }
}

/// One position per equal slot of `[start + lead, end)`, jittered by the rng
/// while keeping at least `min_gap` between neighbours.
fn positions(start: usize, end: usize, count: usize, lead: usize, min_gap: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let lo = start + lead;
    let span = end.saturating_sub(lo);
    let slot = span / count;
    if slot <= min_gap {
        return Err(Error::Config(format!(
            "cannot fit {count} spikes {min_gap} apart into {span} points"
        )));
    }
    Ok((0..count)
        .map(|i| lo + i * slot + rng.random_range(0..=slot - min_gap))
        .collect())
}

pub fn spike_series(cfg: &SpikeSeriesConfig) -> Result<LabeledSeries> {
    cfg.split.validate()?;
    if !(cfg.period > 0.0 && cfg.noise_sd > 0.0) {
        return Err(Error::Config("period and noise_sd must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    let mut values: Vec<f64> = (0..cfg.len)
        .map(|i| cfg.amplitude * (std::f64::consts::TAU * i as f64 / cfg.period).sin() + noise.sample(&mut rng))
        .collect();
    let n_train = (cfg.len as f64 * cfg.split.train).round() as usize;
    let n_val = (cfg.len as f64 * cfg.split.val).round() as usize;
    let mut spikes = positions(n_train, n_train + n_val, cfg.val_spikes, cfg.lead, cfg.min_gap, &mut rng)?;
    spikes.extend(positions(n_train + n_val, cfg.len, cfg.test_spikes, cfg.lead, cfg.min_gap, &mut rng)?);
    let mut labels = vec![false; cfg.len];
    for (k, &i) in spikes.iter().enumerate() {
        let sign = if cfg.alternate_signs && k % 2 == 1 { -1.0 } else { 1.0 };
        values[i] += sign * cfg.spike_sd * cfg.noise_sd;
        labels[i] = true;
    }
    LabeledSeries::from_values(values, Some(labels))
}
