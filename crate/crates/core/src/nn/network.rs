//! Stacked LSTM layers followed by one linear dense layer, with exact
//! backpropagation through time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::LossSpec;
use super::lstm::{LstmLayerParams, StepActivations, GATE_F, GATE_G, GATE_I, GATE_O};
use crate::error::{Error, Result};

/// Linear output layer: `O x H` weights and `O` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    pub input_size: usize,
    pub output_size: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl DenseParams {
    pub fn zeros(input_size: usize, output_size: usize) -> Self {
        Self {
            input_size,
            output_size,
            weights: vec![0.0; input_size * output_size],
            biases: vec![0.0; output_size],
        }
    }

    fn apply(&self, h: &[f64]) -> Vec<f64> {
        (0..self.output_size)
            .map(|o| {
                let row = &self.weights[o * self.input_size..(o + 1) * self.input_size];
                self.biases[o] + row.iter().zip(h).map(|(w, h)| w * h).sum::<f64>()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<LstmLayerParams>,
    pub dense: DenseParams,
    pub dropout_rate: f64,
}

/// Per-window activations recorded by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    window: Vec<f64>,
    layers: Vec<LayerCache>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    inputs: Vec<Vec<f64>>,
    steps: Vec<StepActivations>,
    /// Inverted-dropout multipliers applied to this layer's outputs.
    mask: Option<Vec<Vec<f64>>>,
}

impl LayerCache {
    fn output(&self, t: usize) -> Vec<f64> {
        match &self.mask {
            Some(m) => self.steps[t].h.iter().zip(&m[t]).map(|(h, m)| h * m).collect(),
            None => self.steps[t].h.clone(),
        }
    }
}

/// Gradients (or any other tensor set) laid out like [`Network::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn global_norm(&self) -> f64 {
        self.tensors.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            self.tensors.iter_mut().flatten().for_each(|g| *g *= s);
        }
        norm
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors.iter().flatten().fold(0.0, |m, g| m.max(g.abs()))
    }
}

impl Network {
    /// Seeded network for univariate windows: LSTM layers of the given sizes
    /// and a dense layer with `output_size` (= look-ahead) units.
    pub fn new(hidden: &[usize], output_size: usize, dropout_rate: f64, seed: u64) -> Result<Self> {
        if hidden.is_empty() || hidden.contains(&0) || output_size == 0 {
            return Err(Error::Config("need at least one non-empty LSTM layer and output".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(hidden.len());
        let mut input = 1;
        for &h in hidden {
            layers.push(LstmLayerParams::init(input, h, &mut rng));
            input = h;
        }
        let mut dense = DenseParams::zeros(input, output_size);
        let bound = 1.0 / (input as f64).sqrt();
        dense.weights.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
        let net = Self {
            layers,
            dense,
            dropout_rate,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} not in [0, 1)", self.dropout_rate)));
        }
        let first = self.layers.first().ok_or_else(|| Error::Shape("network without LSTM layers".into()))?;
        if first.input_size != 1 {
            return Err(Error::Shape("first LSTM layer must take univariate input".into()));
        }
        for l in &self.layers {
            l.validate()?;
        }
        for pair in self.layers.windows(2) {
            if pair[1].input_size != pair[0].hidden_size {
                return Err(Error::Shape("adjacent LSTM layers are incompatible".into()));
            }
        }
        let d = &self.dense;
        let last = self.layers.last().map_or(0, |l| l.hidden_size);
        if d.input_size != last || d.weights.len() != d.input_size * d.output_size || d.biases.len() != d.output_size {
            return Err(Error::Shape("dense layer does not match the last LSTM layer".into()));
        }
        if d.weights.iter().chain(&d.biases).any(|x| !x.is_finite()) {
            return Err(Error::Shape("non-finite dense parameter".into()));
        }
        Ok(())
    }

    pub fn output_size(&self) -> usize {
        self.dense.output_size
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.hidden_size).collect()
    }

    /// All parameter tensors in a fixed order: per layer `W, U, b`, then dense `W, b`.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(3 * self.layers.len() + 2);
        for l in &self.layers {
            out.extend([l.w.as_slice(), l.u.as_slice(), l.b.as_slice()]);
        }
        out.extend([self.dense.weights.as_slice(), self.dense.biases.as_slice()]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::with_capacity(3 * self.layers.len() + 2);
        for l in &mut self.layers {
            out.push(&mut l.w);
            out.push(&mut l.u);
            out.push(&mut l.b);
        }
        out.push(&mut self.dense.weights);
        out.push(&mut self.dense.biases);
        out
    }

    /// `true` for weight matrices (subject to weight decay), `false` for biases.
    pub fn weight_mask(&self) -> Vec<bool> {
        let mut out: Vec<bool> = self.layers.iter().flat_map(|_| [true, true, false]).collect();
        out.extend([true, false]);
        out
    }

    pub fn weight_matrices(&self) -> Vec<&[f64]> {
        self.tensors()
            .into_iter()
            .zip(self.weight_mask())
            .filter_map(|(t, w)| w.then_some(t))
            .collect()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            tensors: self.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn check_window(&self, window: &[f64]) -> Result<()> {
        if window.is_empty() {
            return Err(Error::Shape("empty input window".into()));
        }
        if window.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("non-finite input window".into()));
        }
        Ok(())
    }

    /// Prediction for one window. Dropout is active only in [`Mode::Train`],
    /// where the masks are drawn from `seed`.
    pub fn forward(&self, window: &[f64], mode: Mode, seed: u64) -> Result<Vec<f64>> {
        match mode {
            Mode::Infer => self.predict(window),
            Mode::Train => Ok(self.forward_train(window, seed)?.0),
        }
    }

    pub fn predict(&self, window: &[f64]) -> Result<Vec<f64>> {
        self.check_window(window)?;
        let mut seq: Vec<Vec<f64>> = window.iter().map(|&x| vec![x]).collect();
        for layer in &self.layers {
            let hs = layer.hidden_size;
            let (mut h, mut c) = (vec![0.0; hs], vec![0.0; hs]);
            let mut out = Vec::with_capacity(seq.len());
            for x in &seq {
                let act = layer.step_full(x, &h, &c);
                h = act.h;
                c = act.c;
                out.push(h.clone());
            }
            seq = out;
        }
        Ok(self.dense.apply(seq.last().expect("non-empty window")))
    }

    pub fn predict_batch(&self, windows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        windows.iter().map(|w| self.predict(w)).collect()
    }

    /// Training-mode forward pass that records activations for [`Network::backward`].
    pub fn forward_train(&self, window: &[f64], seed: u64) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_window(window)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 - self.dropout_rate;
        let mut seq: Vec<Vec<f64>> = window.iter().map(|&x| vec![x]).collect();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let hs = layer.hidden_size;
            let (mut h, mut c) = (vec![0.0; hs], vec![0.0; hs]);
            let mut steps = Vec::with_capacity(seq.len());
            for x in &seq {
                let act = layer.step_full(x, &h, &c);
                h.clone_from(&act.h);
                c.clone_from(&act.c);
                steps.push(act);
            }
            let mask = (self.dropout_rate > 0.0).then(|| {
                (0..seq.len())
                    .map(|_| {
                        (0..hs)
                            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect()
                    })
                    .collect()
            });
            let cache = LayerCache {
                inputs: seq,
                steps,
                mask,
            };
            seq = (0..cache.steps.len()).map(|t| cache.output(t)).collect();
            caches.push(cache);
        }
        let pred = self.dense.apply(seq.last().expect("non-empty window"));
        Ok((
            pred,
            ForwardCache {
                window: window.to_vec(),
                layers: caches,
            },
        ))
    }

    /// Gradient of `spec` (data term plus weight decay) over a batch.
    ///
    /// `caches` and `preds` must come from [`Network::forward_train`] on
    /// exactly `windows`, with the current parameters.
    pub fn backward(
        &self,
        windows: &[Vec<f64>],
        targets: &[Vec<f64>],
        spec: &LossSpec,
        preds: &[Vec<f64>],
        caches: &[ForwardCache],
    ) -> Result<Gradients> {
        if caches.len() != windows.len() || preds.len() != windows.len() {
            return Err(Error::StaleCache);
        }
        if caches
            .iter()
            .zip(windows)
            .any(|(c, w)| c.window != *w || c.layers.len() != self.layers.len())
        {
            return Err(Error::StaleCache);
        }
        let dpreds = spec.pred_gradient(preds, targets)?;
        let mut grads = self.zero_gradients();
        for (cache, dy) in caches.iter().zip(&dpreds) {
            self.accumulate(cache, dy, &mut grads);
        }
        if spec.lambda > 0.0 {
            for ((g, t), is_w) in grads.tensors.iter_mut().zip(self.tensors()).zip(self.weight_mask()) {
                if is_w {
                    g.iter_mut().zip(t).for_each(|(g, w)| *g += spec.lambda * w);
                }
            }
        }
        Ok(grads)
    }

    fn accumulate(&self, cache: &ForwardCache, dy: &[f64], grads: &mut Gradients) {
        let nl = self.layers.len();
        let d = &self.dense;
        let top = &cache.layers[nl - 1];
        let steps = top.steps.len();
        let h_last = top.output(steps - 1);

        let dense_w = 3 * nl;
        for o in 0..d.output_size {
            for j in 0..d.input_size {
                grads.tensors[dense_w][o * d.input_size + j] += dy[o] * h_last[j];
            }
            grads.tensors[dense_w + 1][o] += dy[o];
        }

        // Gradient w.r.t. each layer's (post-dropout) outputs, per time step.
        let mut d_out: Vec<Vec<f64>> = vec![vec![0.0; d.input_size]; steps];
        for j in 0..d.input_size {
            d_out[steps - 1][j] = (0..d.output_size)
                .map(|o| dy[o] * d.weights[o * d.input_size + j])
                .sum();
        }

        for l in (0..nl).rev() {
            let layer = &self.layers[l];
            let lc = &cache.layers[l];
            let (hs, din) = (layer.hidden_size, layer.input_size);
            let mut d_in = vec![vec![0.0; din]; steps];
            let mut dh_next = vec![0.0; hs];
            let mut dc_next = vec![0.0; hs];
            let mut da = vec![0.0; 4 * hs];
            for t in (0..steps).rev() {
                let act = &lc.steps[t];
                let gate = |k: usize, j: usize| act.gates[k * hs + j];
                for j in 0..hs {
                    let mut dh = d_out[t][j];
                    if let Some(m) = &lc.mask {
                        dh *= m[t][j];
                    }
                    dh += dh_next[j];
                    let c_prev = if t > 0 { lc.steps[t - 1].c[j] } else { 0.0 };
                    let tc = act.c[j].tanh();
                    let (i, f, o, g) = (gate(GATE_I, j), gate(GATE_F, j), gate(GATE_O, j), gate(GATE_G, j));
                    let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
                    da[GATE_I * hs + j] = dc * g * i * (1.0 - i);
                    da[GATE_F * hs + j] = dc * c_prev * f * (1.0 - f);
                    da[GATE_O * hs + j] = dh * tc * o * (1.0 - o);
                    da[GATE_G * hs + j] = dc * i * (1.0 - g * g);
                    dc_next[j] = dc * f;
                }
                let x = &lc.inputs[t];
                let h_prev: &[f64] = if t > 0 { &lc.steps[t - 1].h } else { &[] };
                let (gw, rest) = grads.tensors[3 * l..3 * l + 3].split_at_mut(1);
                let (gu, gb) = rest.split_at_mut(1);
                let (gw, gu, gb) = (&mut gw[0], &mut gu[0], &mut gb[0]);
                dh_next.iter_mut().for_each(|v| *v = 0.0);
                for (r, &a) in da.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    gb[r] += a;
                    for k in 0..din {
                        gw[r * din + k] += a * x[k];
                        d_in[t][k] += a * layer.w[r * din + k];
                    }
                    if !h_prev.is_empty() {
                        for k in 0..hs {
                            gu[r * hs + k] += a * h_prev[k];
                            dh_next[k] += a * layer.u[r * hs + k];
                        }
                    }
                }
            }
            d_out = d_in;
        }
    }
}
