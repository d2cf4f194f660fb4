//! Peaks-over-threshold machinery.
//!
//! Excesses `x = e - T` above an initial threshold `T` are modelled by a
//! generalized Pareto distribution with tail
//!
//! ```text
//! P(X - T > x | X > T) = (1 + gamma x / sigma)^(-1/gamma)    gamma != 0
//!                      = exp(-x / sigma)                     gamma  = 0
//! ```
//!
//! The maximum-likelihood fit uses Grimshaw's reduction: with
//! `theta = gamma / sigma`, stationary points of the log-likelihood are the
//! roots of `w(theta) = u(theta) v(theta) - 1`, where
//! `u = mean(1 / (1 + theta x))` and `v = 1 + mean(log(1 + theta x))`.
//! Each root gives `gamma = v - 1`, `sigma = gamma / theta`; `theta = 0` is
//! the exponential candidate. `w(0) = 0` identically, so the search skips a
//! small neighbourhood of zero and the exponential fit is always added, as is
//! the `gamma = -1` boundary fit. The candidate with the largest likelihood
//! wins; exact ties go to the smaller `|gamma|`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Minimum number of excesses accepted by [`fit_gpd`].
pub const MIN_EXCESSES: usize = 30;
/// Shape parameters with `|gamma|` below this use the exponential formulas.
pub const GAMMA_ZERO: f64 = 1e-8;
/// Default level of the initial threshold `T`.
pub const DEFAULT_INIT_LEVEL: f64 = 0.98;
/// p-values below this reject the GPD hypothesis.
pub const AD_REJECT_LEVEL: f64 = 0.001;
pub const DEFAULT_BOOTSTRAP_REPS: usize = 500;

const GRID_INTERVALS: usize = 1000;
/// Relative offset from the singular endpoint `-1/x_max`.
const ENDPOINT_OFFSET: f64 = 1e-8;
/// Relative half-width of the excluded neighbourhood of `theta = 0`.
const ZERO_EXCLUSION: f64 = 1e-8;
/// Upper end of the positive search, in units of `1/mean(x)`.
const THETA_MAX_SCALE: f64 = 1e4;
const BISECTION_RTOL: f64 = 1e-12;

/// Shape and scale of a generalized Pareto distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdParams {
    pub gamma: f64,
    pub sigma: f64,
}

/// Descriptive label of the extreme-value domain implied by `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TailKind {
    /// Heavy tail, `gamma > 0`.
    Frechet,
    /// Exponential tail, `gamma = 0`.
    Gumbel,
    /// Bounded tail, `gamma < 0`.
    Weibull,
}

impl GpdParams {
    pub fn new(gamma: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidScale(sigma));
        }
        if !gamma.is_finite() {
            return Err(Error::Shape(format!("non-finite shape {gamma}")));
        }
        Ok(Self { gamma, sigma })
    }

    fn is_exponential(&self) -> bool {
        self.gamma.abs() < GAMMA_ZERO
    }

    /// Upper end of the support, finite only for `gamma < 0`.
    pub fn support_bound(&self) -> f64 {
        if self.gamma < 0.0 && !self.is_exponential() {
            -self.sigma / self.gamma
        } else {
            f64::INFINITY
        }
    }

    /// `P(X > x)` for an excess `x >= 0`.
    pub fn survival(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        if self.is_exponential() {
            return (-x / self.sigma).exp();
        }
        let z = self.gamma * x / self.sigma;
        if z <= -1.0 {
            return 0.0;
        }
        (-z.ln_1p() / self.gamma).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if self.is_exponential() {
            return -(-x / self.sigma).exp_m1();
        }
        let z = self.gamma * x / self.sigma;
        if z <= -1.0 {
            return 1.0;
        }
        -(-z.ln_1p() / self.gamma).exp_m1()
    }

    /// Inverse CDF.
    pub fn quantile(&self, p: f64) -> f64 {
        if self.is_exponential() {
            -self.sigma * (-p).ln_1p()
        } else {
            self.sigma / self.gamma * (-self.gamma * (-p).ln_1p()).exp_m1()
        }
    }

    /// Draws `m` excesses by inverse-CDF sampling.
    pub fn sample(&self, m: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..m).map(|_| self.quantile(rng.random::<f64>())).collect()
    }

    pub fn tail_kind(&self) -> TailKind {
        if self.is_exponential() {
            TailKind::Gumbel
        } else if self.gamma > 0.0 {
            TailKind::Frechet
        } else {
            TailKind::Weibull
        }
    }
}

/// GPD parameters together with the peaks-over-threshold bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdFit {
    pub gamma: f64,
    pub sigma: f64,
    /// Initial threshold `T`.
    pub threshold: f64,
    /// Number of observations `n`.
    pub n: usize,
    /// Number of peaks `N_t` strictly above `T`.
    pub n_peaks: usize,
}

impl GpdFit {
    pub fn new(params: GpdParams, threshold: f64, n: usize, n_peaks: usize) -> Result<Self> {
        let params = GpdParams::new(params.gamma, params.sigma)?;
        if n_peaks == 0 || n_peaks > n {
            return Err(Error::Config(format!("need 0 < N_t <= n, got N_t = {n_peaks}, n = {n}")));
        }
        Ok(Self {
            gamma: params.gamma,
            sigma: params.sigma,
            threshold,
            n,
            n_peaks,
        })
    }

    /// Full pipeline on raw observations: `T` at `level`, excesses above it,
    /// and a maximum-likelihood GPD fit.
    pub fn from_observations(values: &[f64], level: f64) -> Result<Self> {
        let threshold = init_threshold(values, level)?;
        let peaks = excesses(values, threshold);
        let params = fit_gpd(&peaks)?;
        Self::new(params, threshold, values.len(), peaks.len())
    }

    pub fn params(&self) -> GpdParams {
        GpdParams {
            gamma: self.gamma,
            sigma: self.sigma,
        }
    }

    /// Fraction `N_t / n` of observations above `T`.
    pub fn peak_ratio(&self) -> f64 {
        self.n_peaks as f64 / self.n as f64
    }

    pub fn tail_kind(&self) -> TailKind {
        self.params().tail_kind()
    }
}

/// Empirical `level` quantile of `errors` (linear interpolation).
pub fn init_threshold(errors: &[f64], level: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::Empty("initial threshold of no errors"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidProbability(level));
    }
    stats::quantile(errors, level)
}

/// `e - T` for every `e` strictly above `T`.
pub fn excesses(errors: &[f64], threshold: f64) -> Vec<f64> {
    errors.iter().filter(|&&e| e > threshold).map(|e| e - threshold).collect()
}

/// GPD log-likelihood of `excesses`.
pub fn gpd_log_likelihood(excesses: &[f64], gamma: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidScale(sigma));
    }
    let m = excesses.len() as f64;
    if gamma.abs() < GAMMA_ZERO {
        return Ok(-m * sigma.ln() - excesses.iter().sum::<f64>() / sigma);
    }
    if gamma == -1.0 {
        // Uniform on [0, sigma]: the log terms carry a zero coefficient.
        if let Some(&x) = excesses.iter().find(|&&x| x > sigma) {
            return Err(Error::SupportViolation(x));
        }
        return Ok(-m * sigma.ln());
    }
    let mut acc = 0.0;
    for &x in excesses {
        let z = gamma * x / sigma;
        if !(z > -1.0) {
            return Err(Error::SupportViolation(x));
        }
        acc += z.ln_1p();
    }
    Ok(-m * sigma.ln() - (1.0 + 1.0 / gamma) * acc)
}

/// One stationary point examined by the Grimshaw search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Candidate {
    pub theta: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub log_likelihood: f64,
}

/// Every candidate examined, and the index of the selected one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrimshawFit {
    pub candidates: Vec<Candidate>,
    pub best: usize,
}

impl GrimshawFit {
    pub fn params(&self) -> GpdParams {
        let c = &self.candidates[self.best];
        GpdParams {
            gamma: c.gamma,
            sigma: c.sigma,
        }
    }
}

/// `ln(1 + z) - z / (1 + z)`, by its Taylor series where the two terms cancel.
fn log_minus_ratio(z: f64) -> f64 {
    if z.abs() < 1e-3 {
        // sum_{k>=2} (-1)^k (k - 1) / k * z^k
        let mut term = z * z;
        let mut acc = 0.0;
        for k in 2..10 {
            acc += (k - 1) as f64 / k as f64 * term;
            term *= -z;
        }
        acc
    } else {
        z.ln_1p() - z / (1.0 + z)
    }
}

/// Means of `z/(1+z)`, `ln(1+z)` and their difference, with `z = theta x`;
/// `u = 1 - a` and `v = 1 + b`.
fn grimshaw_terms(xs: &[f64], theta: f64) -> (f64, f64, f64) {
    let (mut a, mut b, mut d) = (0.0, 0.0, 0.0);
    for &x in xs {
        let z = theta * x;
        let r = z / (1.0 + z);
        let diff = log_minus_ratio(z);
        a += r;
        b += diff + r;
        d += diff;
    }
    let m = xs.len() as f64;
    (a / m, b / m, d / m)
}

fn grimshaw_v(xs: &[f64], theta: f64) -> f64 {
    1.0 + grimshaw_terms(xs, theta).1
}

/// Grimshaw root function `w(theta) = u(theta) v(theta) - 1`, evaluated as
/// `(b - a) - a b` so that it stays accurate as `theta` approaches zero.
pub fn grimshaw_w(xs: &[f64], theta: f64) -> f64 {
    let (a, b, d) = grimshaw_terms(xs, theta);
    d - a * b
}

fn log_grid(from: f64, to: f64, intervals: usize) -> impl Iterator<Item = f64> {
    let (a, b) = (from.ln(), to.ln());
    (0..=intervals).map(move |k| (a + (b - a) * k as f64 / intervals as f64).exp())
}

/// Search grid, ascending, on `(-1/x_max, 0)` and `(0, theta_max)`.
fn theta_grids(x_max: f64, mean: f64) -> (Vec<f64>, Vec<f64>) {
    let half = GRID_INTERVALS / 2;
    // Negative side: theta = -s / x_max with s log-spaced away from both
    // ends of (0, 1), so roots near zero and near the pole are resolved.
    let mut s: Vec<f64> = log_grid(ZERO_EXCLUSION, 0.5, half).collect();
    s.extend(log_grid(0.5, ENDPOINT_OFFSET, half).skip(1).map(|t| 1.0 - t));
    let mut neg: Vec<f64> = s.into_iter().map(|s| -s / x_max).collect();
    neg.reverse();
    let pos = log_grid(ZERO_EXCLUSION / mean, THETA_MAX_SCALE / mean, GRID_INTERVALS).collect();
    (neg, pos)
}

fn bisect(xs: &[f64], mut a: f64, mut b: f64, mut wa: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b || (b - a) <= BISECTION_RTOL * a.abs().max(b.abs()) {
            break;
        }
        let wm = grimshaw_w(xs, mid);
        if wm == 0.0 {
            return mid;
        }
        if (wm > 0.0) == (wa > 0.0) {
            a = mid;
            wa = wm;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

fn validate_excesses(xs: &[f64]) -> Result<()> {
    if xs.len() < MIN_EXCESSES {
        return Err(Error::TooFewExcesses {
            got: xs.len(),
            need: MIN_EXCESSES,
        });
    }
    if let Some(&bad) = xs.iter().find(|&&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::NonPositiveExcess(bad));
    }
    Ok(())
}

/// Grimshaw maximum-likelihood search, returning every candidate.
pub fn fit_gpd_candidates(xs: &[f64]) -> Result<GrimshawFit> {
    validate_excesses(xs)?;
    let mean = stats::mean(xs);
    let x_max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut candidates = vec![
        Candidate {
            theta: 0.0,
            gamma: 0.0,
            sigma: mean,
            log_likelihood: gpd_log_likelihood(xs, 0.0, mean)?,
        },
        // Beyond gamma = -1 the likelihood is unbounded near theta = -1/x_max;
        // Grimshaw takes the boundary estimate gamma = -1, sigma = x_max.
        Candidate {
            theta: -1.0 / x_max,
            gamma: -1.0,
            sigma: x_max,
            log_likelihood: gpd_log_likelihood(xs, -1.0, x_max)?,
        },
    ];

    let (neg, pos) = theta_grids(x_max, mean);
    for grid in [neg, pos] {
        let values: Vec<f64> = grid.iter().map(|&t| grimshaw_w(xs, t)).collect();
        for k in 0..grid.len() - 1 {
            let (wa, wb) = (values[k], values[k + 1]);
            if !wa.is_finite() || !wb.is_finite() {
                continue;
            }
            let root = if wa == 0.0 {
                grid[k]
            } else if (wa > 0.0) != (wb > 0.0) && wb != 0.0 {
                bisect(xs, grid[k], grid[k + 1], wa)
            } else {
                continue;
            };
            let gamma = grimshaw_v(xs, root) - 1.0;
            let sigma = gamma / root;
            if !(sigma > 0.0) || !sigma.is_finite() {
                continue;
            }
            if let Ok(ll) = gpd_log_likelihood(xs, gamma, sigma) {
                if ll.is_finite() {
                    candidates.push(Candidate {
                        theta: root,
                        gamma,
                        sigma,
                        log_likelihood: ll,
                    });
                }
            }
        }
    }

    let mut best = 0;
    for (i, c) in candidates.iter().enumerate().skip(1) {
        let b = &candidates[best];
        if c.log_likelihood > b.log_likelihood
            || (c.log_likelihood == b.log_likelihood && c.gamma.abs() < b.gamma.abs())
        {
            best = i;
        }
    }
    Ok(GrimshawFit { candidates, best })
}

/// Maximum-likelihood GPD parameters for strictly positive excesses.
pub fn fit_gpd(xs: &[f64]) -> Result<GpdParams> {
    Ok(fit_gpd_candidates(xs)?.params())
}

/// Threshold `tau` with `P(X > tau) = q` under the fitted tail:
/// `T + (sigma/gamma) ((q n / N_t)^(-gamma) - 1)`, or
/// `T + sigma log(N_t / (q n))` when `gamma` is zero.
pub fn pot_threshold(fit: &GpdFit, q: f64) -> Result<f64> {
    let ratio = fit.peak_ratio();
    if !(q > 0.0 && q < ratio) {
        return Err(Error::QOutOfRange { q, ratio });
    }
    let r = q / ratio;
    let excess = if fit.gamma.abs() < GAMMA_ZERO {
        -fit.sigma * r.ln()
    } else {
        fit.sigma / fit.gamma * (-fit.gamma * r.ln()).exp_m1()
    };
    Ok(fit.threshold + excess)
}

/// `P(X > x)` for `x >= T` under the fitted tail; zero beyond a bounded support.
pub fn tail_probability(x: f64, fit: &GpdFit) -> Result<f64> {
    if x < fit.threshold {
        return Err(Error::BelowThreshold {
            x,
            threshold: fit.threshold,
        });
    }
    Ok(fit.peak_ratio() * fit.params().survival(x - fit.threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdResult {
    /// Anderson-Darling statistic `A^2`.
    pub statistic: f64,
    pub p_value: f64,
    pub bootstrap_reps: usize,
}

impl AdResult {
    pub fn rejects_gpd(&self) -> bool {
        self.p_value < AD_REJECT_LEVEL
    }
}

/// `A^2` of `xs` against the GPD `params`.
pub fn ad_statistic(xs: &[f64], params: &GpdParams) -> f64 {
    let mut z: Vec<f64> = xs
        .iter()
        .map(|&x| params.cdf(x).clamp(1e-12, 1.0 - 1e-12))
        .collect();
    z.sort_by(f64::total_cmp);
    let m = z.len();
    let sum: f64 = (0..m)
        .map(|i| (2 * i + 1) as f64 * (z[i].ln() + (-z[m - 1 - i]).ln_1p()))
        .sum();
    -(m as f64) - sum / m as f64
}

/// Anderson-Darling goodness of fit of `xs` to the fitted GPD, with a
/// parametric-bootstrap p-value: `reps` samples of the same size are drawn
/// from `params`, refitted, and scored; the p-value is the fraction of
/// bootstrap statistics at least as large as the observed one.
pub fn anderson_darling(xs: &[f64], params: &GpdParams, reps: usize, seed: u64) -> Result<AdResult> {
    validate_excesses(xs)?;
    let params = GpdParams::new(params.gamma, params.sigma)?;
    if reps == 0 {
        return Err(Error::Config("bootstrap needs at least one replication".into()));
    }
    let observed = ad_statistic(xs, &params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut exceed = 0usize;
    let mut used = 0usize;
    for _ in 0..reps {
        let sample = params.sample(xs.len(), &mut rng);
        // A draw of exactly zero can only come from u = 0; it carries no
        // information about the fit and is dropped with its replication.
        let Ok(refit) = fit_gpd(&sample) else { continue };
        used += 1;
        if ad_statistic(&sample, &refit) >= observed {
            exceed += 1;
        }
    }
    if used == 0 {
        return Err(Error::Degenerate("no bootstrap replication could be refitted"));
    }
    Ok(AdResult {
        statistic: observed,
        p_value: exceed as f64 / used as f64,
        bootstrap_reps: used,
    })
}
