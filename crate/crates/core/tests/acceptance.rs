//! Acceptance suite. Every test writes one `PASS`/`FAIL` line to stderr
//! (unbuffered, so it shows up even when test output is captured) and then
//! asserts the same condition.

use std::io::Write as _;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use evtlstm::benchmark::{benchmark, prepare, BenchmarkConfig, BenchmarkRun};
use evtlstm::data::{apply_nab_labels, load_series, CsvSchema, SplitSpec};
use evtlstm::detectors::{detect, prediction_errors, DetectorModel, EvtRule, PredictionErrors};
use evtlstm::evaluation::{confusion, metrics, score, Counts};
use evtlstm::evt::{anderson_darling, fit_gpd, pot_threshold, tail_probability, GpdFit, GpdParams};
use evtlstm::nn::{LossSpec, Network};
use evtlstm::presets::preset;
use evtlstm::synthetic::{spike_series, SpikeSeriesConfig};
use evtlstm::trainer::{scores_from_errors, train_evt_lstm, train_forecaster, train_svdd, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn verdict(id: u32, title: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr().lock(), "{tag} criterion {id:>2} ({title}): {detail}");
    assert!(pass, "criterion {id} ({title}) failed: {detail}");
}

fn uniforms(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

// ---------------------------------------------------------------- 1

#[test]
fn c01_gpd_recovery() {
    let u = uniforms(10_000, 11);
    // Inverse CDFs written out here rather than taken from the library.
    let gpd: Vec<f64> = u.iter().map(|&u| ((1.0 - u).powf(-0.2) - 1.0) / 0.2).collect();
    let exp: Vec<f64> = u.iter().map(|&u| -(1.0 - u).ln()).collect();
    let unif: Vec<f64> = u.iter().map(|&u| if u > 0.0 { u } else { 0.5 }).collect();

    let mut pass = true;
    let mut detail = Vec::new();
    let timed = |xs: &[f64]| {
        let t = Instant::now();
        let p = fit_gpd(xs).expect("fit");
        (p, t.elapsed())
    };
    let limit = Duration::from_secs(5);

    let (p, dt) = timed(&gpd);
    pass &= (p.gamma - 0.2).abs() <= 0.05 && (p.sigma - 1.0).abs() <= 0.1 && dt < limit;
    detail.push(format!("GPD(0.2,1) -> gamma {:.4} sigma {:.4} in {dt:.2?}", p.gamma, p.sigma));
    let (p, dt) = timed(&exp);
    pass &= p.gamma.abs() <= 0.05 && dt < limit;
    detail.push(format!("Exp(1) -> gamma {:.4} in {dt:.2?}", p.gamma));
    let (p, dt) = timed(&unif);
    pass &= (p.gamma + 1.0).abs() <= 0.05 && dt < limit;
    detail.push(format!("U(0,1) -> gamma {:.4} in {dt:.2?}", p.gamma));
    verdict(1, "GPD recovery", pass, &detail.join("; "));
}

// ---------------------------------------------------------------- 2

#[test]
fn c02_pot_threshold_oracle() {
    let fit = GpdFit::new(GpdParams { gamma: 0.1, sigma: 1.0 }, 2.0, 10_000, 200).unwrap();
    let tau = pot_threshold(&fit, 1e-3).unwrap();
    // T + (sigma/gamma) * ((q n / N_t)^(-gamma) - 1) with q n / N_t = 0.05.
    let oracle = 2.0 + 10.0 * (0.05f64.powf(-0.1) - 1.0);
    let mut pass = (tau - oracle).abs() <= 1e-6;
    let mut detail = format!("tau {tau:.10} vs evaluated form {oracle:.10}");

    for gamma in [1e-8, -1e-8] {
        let fit = GpdFit::new(GpdParams { gamma, sigma: 1.0 }, 2.0, 10_000, 200).unwrap();
        let tau0 = pot_threshold(&fit, 1e-3).unwrap();
        let closed = 2.0 + (200.0f64 / (1e-3 * 10_000.0)).ln();
        pass &= (tau0 - closed).abs() <= 1e-6;
        detail += &format!("; gamma {gamma:e}: {tau0:.10} vs T + sigma ln(N_t/(qn)) = {closed:.10}");
    }
    verdict(2, "POT threshold", pass, &detail);
}

// ---------------------------------------------------------------- 3

#[test]
fn c03_tail_probability_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let gamma = rng.random_range(-0.9..0.9);
        let sigma = 10f64.powf(rng.random_range(-2.0..2.0));
        let threshold = rng.random_range(-10.0..10.0);
        let n = rng.random_range(100..1_000_000usize);
        let n_peaks = rng.random_range(1..=n);
        let q = n_peaks as f64 / n as f64 * rng.random_range(1e-6..0.999);
        let fit = GpdFit::new(GpdParams { gamma, sigma }, threshold, n, n_peaks).unwrap();
        let tau = pot_threshold(&fit, q).unwrap();
        let back = tail_probability(tau, &fit).unwrap();
        worst = worst.max((back - q).abs());
    }
    verdict(3, "tail-probability round trip", worst <= 1e-9, &format!("max |P(tau) - q| = {worst:.3e} over 100 fits"));
}

// ---------------------------------------------------------------- 4

/// Largest relative gap between the analytic gradient and central
/// differences over every parameter; windows whose error falls within
/// `mask` of zero are dropped first.
fn gradient_gap(net: &Network, spec: &LossSpec, windows: &[Vec<f64>], targets: &[Vec<f64>], mask: f64) -> (f64, usize) {
    let seeds: Vec<u64> = (0..windows.len() as u64).map(|i| 100 + i).collect();
    let keep: Vec<usize> = (0..windows.len())
        .filter(|&i| {
            let p = net.forward_train(&windows[i], seeds[i]).unwrap().0;
            p.iter().zip(&targets[i]).all(|(a, b)| (a - b).abs() > mask)
        })
        .collect();
    let w: Vec<Vec<f64>> = keep.iter().map(|&i| windows[i].clone()).collect();
    let t: Vec<Vec<f64>> = keep.iter().map(|&i| targets[i].clone()).collect();
    let s: Vec<u64> = keep.iter().map(|&i| seeds[i]).collect();
    let objective = |n: &Network| {
        let preds: Vec<Vec<f64>> = w.iter().zip(&s).map(|(x, &sd)| n.forward_train(x, sd).unwrap().0).collect();
        spec.value(&preds, &t, &n.weight_matrices()).unwrap()
    };
    let (preds, caches): (Vec<_>, Vec<_>) = w.iter().zip(&s).map(|(x, &sd)| net.forward_train(x, sd).unwrap()).unzip();
    let grads = net.backward(&w, &t, spec, &preds, &caches).unwrap();
    let eps = 1e-5;
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for (ti, tensor) in net.tensors().iter().enumerate() {
        for k in 0..tensor.len() {
            probe.tensors_mut()[ti][k] = tensor[k] + eps;
            let up = objective(&probe);
            probe.tensors_mut()[ti][k] = tensor[k] - eps;
            let down = objective(&probe);
            probe.tensors_mut()[ti][k] = tensor[k];
            let fd = (up - down) / (2.0 * eps);
            let a = grads.tensors[ti][k];
            // Floor keeps components that are zero up to round-off from dividing by ~0.
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-7));
        }
    }
    (worst, windows.len() - keep.len())
}

#[test]
fn c04_gradient_check() {
    let start = Instant::now();
    let net = Network::new(&[8, 6], 2, 0.25, 42).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut windows: Vec<Vec<f64>> = (0..6).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mut targets: Vec<Vec<f64>> = (0..6).map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    // One window whose error sits inside the EVT mask.
    windows.push(vec![0.3, -0.1, 0.2, 0.5, -0.4, 0.1]);
    let p = net.forward_train(&windows[6], 106).unwrap().0;
    targets.push(p.iter().map(|v| v + 5e-4).collect());

    let (mse, _) = gradient_gap(&net, &LossSpec { lambda: 0.01, ..LossSpec::mse() }, &windows, &targets, -1.0);
    let (svdd, _) = gradient_gap(&net, &LossSpec::svdd(vec![0.2, -0.1], 0.01), &windows, &targets, -1.0);
    let (evt, masked) = gradient_gap(&net, &LossSpec::evt(0.3, 0.01), &windows, &targets, 1e-3);
    let dt = start.elapsed();
    let pass = mse <= 1e-4 && svdd <= 1e-4 && evt <= 1e-4 && masked >= 1 && dt < Duration::from_secs(30);
    verdict(
        4,
        "gradient check",
        pass,
        &format!("max rel err MSE {mse:.2e}, SVDD {svdd:.2e}, EVT {evt:.2e} ({masked} masked), {dt:.2?}"),
    );
}

// ---------------------------------------------------------------- 5, 7, 10

fn synthetic_series() -> SpikeSeriesConfig {
    SpikeSeriesConfig {
        len: 2000,
        period: 50.0,
        noise_sd: 0.05,
        spike_sd: 15.0,
        test_spikes: 10,
        ..Default::default()
    }
}

fn synthetic_benchmark() -> BenchmarkConfig {
    BenchmarkConfig {
        split: synthetic_series().split,
        look_back: 20,
        look_ahead: 1,
        train: TrainConfig {
            hidden: vec![20],
            dropout: 0.3,
            epochs: 40,
            learning_rate: 1e-3,
            seed: 1,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn shared_run() -> &'static (BenchmarkRun, Duration) {
    static RUN: OnceLock<(BenchmarkRun, Duration)> = OnceLock::new();
    RUN.get_or_init(|| {
        let series = spike_series(&synthetic_series()).unwrap();
        let t = Instant::now();
        let run = benchmark(&series, &synthetic_benchmark()).unwrap();
        (run, t.elapsed())
    })
}

#[test]
fn c05_synthetic_benchmark() {
    let (run, dt) = shared_run();
    let r = &run.report.rules;
    let (lstm, evt, tukey) = (&r["evt_lstm"].metrics, &r["evt"].metrics, &r["tukey"].metrics);
    let pass = run.report.test_anomalies == 10
        && r.len() == 4
        && lstm.f1 >= 0.8
        && evt.f1 >= 0.8
        && tukey.recall == 1.0
        && tukey.counts.fp >= evt.counts.fp
        && *dt < Duration::from_secs(300);
    verdict(
        5,
        "synthetic benchmark",
        pass,
        &format!(
            "EVT-LSTM F1 {:.3}, EVT F1 {:.3}, Tukey recall {:.3} with {} FP vs EVT {} FP, {dt:.1?}",
            lstm.f1, evt.f1, tukey.recall, tukey.counts.fp, evt.counts.fp
        ),
    );
    eprint!("{}", run.report.to_table());
}

#[test]
fn c05b_evt_lstm_close_to_best_hybrid() {
    let (run, _) = shared_run();
    let r = &run.report.rules;
    let best = ["gaussian", "tukey", "evt"].iter().map(|k| r[*k].metrics.f1).fold(0.0, f64::max);
    let lstm = r["evt_lstm"].metrics.f1;
    verdict(
        5,
        "EVT-LSTM vs hybrid rules",
        lstm >= best || best - lstm <= 0.05,
        &format!("EVT-LSTM F1 {lstm:.3}, best hybrid F1 {best:.3}"),
    );
}

#[test]
fn c07_svdd_negative_result() {
    let (run, _) = shared_run();
    let cfg = TrainConfig { q: run.q, ..synthetic_benchmark().train };
    let (svdd, summary) = train_svdd(&cfg, &run.data.train, &run.data.val).unwrap();
    let tau_e = run.evt_lstm.tau_e.unwrap();
    let errors = prediction_errors(&svdd.network, &run.data.test).unwrap();
    let flags = scores_from_errors(&errors.errors, tau_e).flags;
    let svdd_fp = score(&flags, errors.labels_or_err().unwrap()).unwrap().counts.fp;
    let lstm_fp = run.report.rules["evt_lstm"].metrics.counts.fp;
    let shrinks = summary.final_mean_abs_prediction < summary.initial_mean_abs_prediction;
    verdict(
        7,
        "hypersphere objective",
        shrinks && svdd_fp > lstm_fp,
        &format!(
            "mean |prediction| {:.4} -> {:.4}; FP at tau_e {tau_e:.4}: SVDD {svdd_fp} vs EVT-LSTM {lstm_fp}",
            summary.initial_mean_abs_prediction, summary.final_mean_abs_prediction
        ),
    );
}

#[test]
fn c10_benchmark_determinism() {
    let (run, _) = shared_run();
    let series = spike_series(&synthetic_series()).unwrap();
    let again = benchmark(&series, &synthetic_benchmark()).unwrap();
    let (a, b) = (run.report.to_json().unwrap(), again.report.to_json().unwrap());
    verdict(10, "determinism", a.as_bytes() == b.as_bytes(), &format!("{} byte report, identical: {}", a.len(), a == b));
}

// ---------------------------------------------------------------- 6

const SPEED_CSV: &str = "EVTLSTM_NAB_SPEED_CSV";
const NAB_LABELS: &str = "EVTLSTM_NAB_LABELS";
const SPEED_KEY: &str = "EVTLSTM_NAB_SPEED_KEY";

#[test]
fn c06_nab_vehicular_speed() {
    let (Some(csv), Some(labels)) = (std::env::var_os(SPEED_CSV), std::env::var_os(NAB_LABELS)) else {
        verdict(
            6,
            "NAB vehicular speed",
            false,
            &format!("data not available; set {SPEED_CSV} to speed_7578.csv and {NAB_LABELS} to combined_labels.json"),
        );
        return;
    };
    let key = std::env::var(SPEED_KEY).unwrap_or_else(|_| "realTraffic/speed_7578.csv".to_owned());
    let schema = CsvSchema::new(Some("timestamp"), "value", None);
    let series = load_series(PathBuf::from(csv), &schema).unwrap();
    let series = apply_nab_labels(series, PathBuf::from(labels), &key).unwrap();
    let p = preset("vehicular-speed").unwrap();
    let data = prepare(&series, &SplitSpec::default(), p.look_back, p.look_ahead).unwrap();
    let (mut best_evt, mut best_lstm) = (0.0f64, 0.0f64);
    for seed in 1..=3 {
        let cfg = TrainConfig {
            hidden: p.hidden.to_vec(),
            dropout: p.dropout,
            learning_rate: p.learning_rate,
            q: p.q,
            seed,
            ..Default::default()
        };
        let fore = train_forecaster(&cfg, &data.train, &data.val).unwrap();
        let e: Vec<PredictionErrors> = [&data.train, &data.val, &data.test]
            .iter()
            .map(|d| prediction_errors(&fore.network, d).unwrap())
            .collect();
        let init = PredictionErrors::concat(&[&e[0], &e[1]]);
        let rule = DetectorModel::Evt(EvtRule::calibrate(&init.errors, cfg.init_level, p.q).unwrap());
        let flags = detect(&e[2].errors, &rule).unwrap().flags;
        let test_labels = e[2].labels_or_err().unwrap();
        best_evt = best_evt.max(score(&flags, test_labels).unwrap().f1);

        let model = train_evt_lstm(&cfg, &data.train, &data.val).unwrap();
        let errors = prediction_errors(&model.network, &data.test).unwrap();
        let flags = scores_from_errors(&errors.errors, model.tau_e.unwrap()).flags;
        best_lstm = best_lstm.max(score(&flags, test_labels).unwrap().f1);
    }
    let within = |f: f64| (f - 0.79).abs() <= 0.15;
    verdict(
        6,
        "NAB vehicular speed",
        within(best_evt) && within(best_lstm),
        &format!("best of 3 seeds: hybrid EVT F1 {best_evt:.3}, EVT-LSTM F1 {best_lstm:.3}, target 0.79 +- 0.15"),
    );
}

// ---------------------------------------------------------------- 8

#[test]
fn c08_anderson_darling() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let base = GpdParams { gamma: 0.15, sigma: 0.8 }.sample(5000, &mut rng);
    let fitted = fit_gpd(&base).unwrap();
    let mut accepted = 0;
    for trial in 0..50u64 {
        let xs = fitted.sample(1000, &mut rng);
        let refit = fit_gpd(&xs).unwrap();
        let ad = anderson_darling(&xs, &refit, 100, 1000 + trial).unwrap();
        if ad.p_value > 0.05 {
            accepted += 1;
        }
    }
    // Two well-separated modes: a GPD has a monotone density and cannot fit this.
    let bump = Normal::new(3.0, 0.1).unwrap();
    let mixture: Vec<f64> = (0..1000)
        .map(|i| {
            if i % 2 == 0 {
                rng.random_range(1e-3..0.2)
            } else {
                bump.sample(&mut rng)
            }
        })
        .collect();
    let mix_fit = fit_gpd(&mixture).unwrap();
    let ad = anderson_darling(&mixture, &mix_fit, 500, 9).unwrap();
    verdict(
        8,
        "Anderson-Darling",
        accepted >= 45 && ad.p_value < 0.001,
        &format!(
            "GPD draws: p > 0.05 in {accepted}/50 trials; mixture: A2 {:.2}, p {:.4} ({} reps), {:.1?}",
            ad.statistic,
            ad.p_value,
            ad.bootstrap_reps,
            start.elapsed()
        ),
    );
}

// ---------------------------------------------------------------- 9

fn table(c: Counts) -> (Vec<bool>, Vec<bool>) {
    let mut flags = Vec::new();
    let mut labels = Vec::new();
    for (n, f, l) in [(c.tp, true, true), (c.fp, true, false), (c.fn_, false, true), (c.tn, false, false)] {
        flags.extend(std::iter::repeat_n(f, n));
        labels.extend(std::iter::repeat_n(l, n));
    }
    (flags, labels)
}

#[test]
fn c09_metric_tables() {
    let mut checked = 0;
    let mut failures = Vec::new();
    for tp in 0..5 {
        for fp in 0..5 {
            for fn_ in 0..5 {
                for tn in 0..5 {
                    let c = Counts { tp, fp, fn_, tn };
                    let (flags, labels) = table(c);
                    let got = confusion(&flags, &labels).unwrap();
                    let m = metrics(got);
                    let p_den = tp + fp;
                    let r_den = tp + fn_;
                    let p = if p_den > 0 { tp as f64 / p_den as f64 } else { 0.0 };
                    let r = if r_den > 0 { tp as f64 / r_den as f64 } else { 0.0 };
                    // 2PR/(P+R) = 2tp / (2tp + fp + fn) whenever tp > 0.
                    let f1 = if tp > 0 { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 } else { 0.0 };
                    let ok = got == c
                        && m.precision == p
                        && m.recall == r
                        && (m.f1 - f1).abs() <= 1e-12
                        && m.precision_undefined == (p_den == 0)
                        && m.recall_undefined == (r_den == 0)
                        && m.f1_undefined == (tp == 0);
                    if !ok {
                        failures.push(format!("{c:?} -> {m}"));
                    }
                    checked += 1;
                }
            }
        }
    }
    let examples = [
        ([true, false, false].as_slice(), [true, false, false].as_slice(), (1, 0, 0, 1.0)),
        (&[true, true], &[false, false], (0, 2, 0, 0.0)),
        (&[false, true, true, false], &[true, true, false, false], (1, 1, 1, 0.5)),
        (&[true, true], &[true, false], (1, 1, 0, 2.0 / 3.0)),
    ];
    for (flags, labels, (tp, fp, fn_, f1)) in examples {
        let m = score(flags, labels).unwrap();
        if (m.counts.tp, m.counts.fp, m.counts.fn_) != (tp, fp, fn_) || (m.f1 - f1).abs() > 1e-12 {
            failures.push(format!("example {flags:?}/{labels:?} -> {m}"));
        }
    }
    let mismatch = confusion(&[true], &[true, false]).is_err();
    verdict(
        9,
        "metric tables",
        failures.is_empty() && mismatch,
        &format!("{checked} tables and 4 examples checked, {} mismatches {:?}", failures.len(), failures.first()),
    );
}
