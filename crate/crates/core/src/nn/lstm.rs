use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of one LSTM layer.
///
/// The four gates are stacked in the order input, forget, output, candidate:
/// `w` is `4H x D`, `u` is `4H x H` and `b` has `4H` entries, all row-major.
/// Gate `k` owns rows `k*H .. (k+1)*H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerParams {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub b: Vec<f64>,
}

/// Gate block indices into the stacked parameter rows.
pub const GATE_I: usize = 0;
pub const GATE_F: usize = 1;
pub const GATE_O: usize = 2;
pub const GATE_G: usize = 3;

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations of a single step, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct StepActivations {
    /// Post-nonlinearity gate values, stacked `[i, f, o, g]`.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmLayerParams {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        Self {
            input_size,
            hidden_size,
            w: vec![0.0; 4 * hidden_size * input_size],
            u: vec![0.0; 4 * hidden_size * hidden_size],
            b: vec![0.0; 4 * hidden_size],
        }
    }

    /// Uniform `±1/sqrt(fan_in)` weights, zero biases except the forget gate at 1.
    pub fn init(input_size: usize, hidden_size: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(input_size, hidden_size);
        let wb = 1.0 / (input_size as f64).sqrt();
        let ub = 1.0 / (hidden_size as f64).sqrt();
        p.w.iter_mut().for_each(|x| *x = rng.random_range(-wb..wb));
        p.u.iter_mut().for_each(|x| *x = rng.random_range(-ub..ub));
        p.b[GATE_F * hidden_size..(GATE_F + 1) * hidden_size].fill(1.0);
        p
    }

    pub fn validate(&self) -> Result<()> {
        let (h, d) = (self.hidden_size, self.input_size);
        if h == 0 || d == 0 {
            return Err(Error::Shape("LSTM layer with a zero dimension".into()));
        }
        if self.w.len() != 4 * h * d || self.u.len() != 4 * h * h || self.b.len() != 4 * h {
            return Err(Error::Shape(format!(
                "LSTM layer {d}->{h}: got |W|={}, |U|={}, |b|={}",
                self.w.len(),
                self.u.len(),
                self.b.len()
            )));
        }
        if self.w.iter().chain(&self.u).chain(&self.b).any(|x| !x.is_finite()) {
            return Err(Error::Shape("non-finite LSTM parameter".into()));
        }
        Ok(())
    }

    pub(crate) fn step_full(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> StepActivations {
        let (hs, d) = (self.hidden_size, self.input_size);
        let mut gates = self.b.clone();
        for (r, a) in gates.iter_mut().enumerate() {
            let wr = &self.w[r * d..(r + 1) * d];
            let ur = &self.u[r * hs..(r + 1) * hs];
            *a += wr.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
                + ur.iter().zip(h_prev).map(|(u, h)| u * h).sum::<f64>();
        }
        for (r, a) in gates.iter_mut().enumerate() {
            *a = if r / hs == GATE_G { a.tanh() } else { sigmoid(*a) };
        }
        let gate = |k: usize, j: usize| gates[k * hs + j];
        let c: Vec<f64> = (0..hs)
            .map(|j| gate(GATE_F, j) * c_prev[j] + gate(GATE_I, j) * gate(GATE_G, j))
            .collect();
        let h = (0..hs).map(|j| gate(GATE_O, j) * c[j].tanh()).collect();
        StepActivations { gates, c, h }
    }
}

/// One LSTM step: returns `(h_t, c_t)`.
pub fn lstm_cell_step(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    params: &LstmLayerParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    params.validate()?;
    if x.len() != params.input_size || h_prev.len() != params.hidden_size || c_prev.len() != params.hidden_size {
        return Err(Error::Shape(format!(
            "step expects x:{}, h:{}, c:{}; got {}, {}, {}",
            params.input_size,
            params.hidden_size,
            params.hidden_size,
            x.len(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    if x.iter().chain(h_prev).chain(c_prev).any(|v| !v.is_finite()) {
        return Err(Error::Shape("non-finite step input".into()));
    }
    let act = params.step_full(x, h_prev, c_prev);
    Ok((act.h, act.c))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn zero_params_zero_state() {
        let p = LstmLayerParams::zeros(1, 1);
        let (h, c) = lstm_cell_step(&[0.7], &[0.0], &[0.0], &p).unwrap();
        assert_eq!((h, c), (vec![0.0], vec![0.0]));
    }

    #[test]
    fn zero_params_carry_cell() {
        let p = LstmLayerParams::zeros(1, 1);
        let (h, c) = lstm_cell_step(&[0.0], &[0.0], &[1.0], &p).unwrap();
        assert_eq!(c, vec![0.5]);
        assert!((h[0] - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let p = LstmLayerParams::zeros(2, 3);
        assert!(matches!(
            lstm_cell_step(&[0.0], &[0.0; 3], &[0.0; 3], &p),
            Err(Error::Shape(_))
        ));
    }

    /// Scalar oracle: every gate written out by hand for D = H = 2.
    #[test]
    fn matches_scalar_gate_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = LstmLayerParams::init(2, 2, &mut rng);
        p.b.iter_mut().for_each(|b| *b += rng.random_range(-0.5..0.5));
        let x = [0.3, -1.2];
        let hp = [0.25, -0.4];
        let cp = [0.8, -0.1];

        let pre = |gate: usize, j: usize| {
            let r = gate * 2 + j;
            p.w[r * 2] * x[0] + p.w[r * 2 + 1] * x[1] + p.u[r * 2] * hp[0] + p.u[r * 2 + 1] * hp[1] + p.b[r]
        };
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let mut want_h = [0.0; 2];
        let mut want_c = [0.0; 2];
        for j in 0..2 {
            let i = sig(pre(0, j));
            let f = sig(pre(1, j));
            let o = sig(pre(2, j));
            let g = pre(3, j).tanh();
            want_c[j] = f * cp[j] + i * g;
            want_h[j] = o * want_c[j].tanh();
        }
        let (h, c) = lstm_cell_step(&x, &hp, &cp, &p).unwrap();
        for j in 0..2 {
            assert!((h[j] - want_h[j]).abs() < 1e-14);
            assert!((c[j] - want_c[j]).abs() < 1e-14);
        }
    }
}
