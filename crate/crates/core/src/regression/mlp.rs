use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Predictor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Start the output layer at zero so an untrained net predicts 0 everywhere.
    pub zero_output_init: bool,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 50,
            seed: 0,
            zero_output_init: false,
        }
    }
}

/// One hidden rectifier layer: `W2 relu(W1 x + b1) + b2`.
///
/// Parameters are stored flat as `[W1 (hidden x input), b1, W2 (output x hidden), b2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MlpModel<T: Scalar> {
    input_dim: usize,
    hidden: usize,
    output_dim: usize,
    params: Vec<T>,
}

impl<T: Scalar> MlpModel<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn init(input_dim: usize, hidden: usize, output_dim: usize, zero_output: bool, rng: &mut impl Rng) -> Self {
        let mut m = Self {
            input_dim,
            hidden,
            output_dim,
            params: vec![T::zero(); hidden * input_dim + hidden + output_dim * hidden + output_dim],
        };
        let lim1 = (6.0 / (input_dim + hidden) as f64).sqrt();
        for k in 0..hidden * input_dim {
            m.params[k] = T::of(rng.random_range(-lim1..=lim1));
        }
        if !zero_output {
            let lim2 = (6.0 / (hidden + output_dim) as f64).sqrt();
            let off = m.w2_offset();
            for k in 0..output_dim * hidden {
                m.params[off + k] = T::of(rng.random_range(-lim2..=lim2));
            }
        }
        m
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn n_parameters(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[T]) {
        assert_eq!(params.len(), self.params.len(), "parameter vector length");
        self.params.copy_from_slice(params);
    }

    fn b1_offset(&self) -> usize {
        self.hidden * self.input_dim
    }

    fn w2_offset(&self) -> usize {
        self.b1_offset() + self.hidden
    }

    fn b2_offset(&self) -> usize {
        self.w2_offset() + self.output_dim * self.hidden
    }

    fn hidden_activations(&self, x: &[T], h: &mut [T]) {
        let (ni, b1) = (self.input_dim, self.b1_offset());
        for (j, hj) in h.iter_mut().enumerate() {
            let row = &self.params[j * ni..(j + 1) * ni];
            let z = row.iter().zip(x).map(|(&w, &v)| w * v).sum::<T>() + self.params[b1 + j];
            *hj = z.max(T::zero());
        }
    }

    fn output_from_hidden(&self, h: &[T], k: usize) -> T {
        let off = self.w2_offset() + k * self.hidden;
        self.params[off..off + self.hidden]
            .iter()
            .zip(h)
            .map(|(&w, &v)| w * v)
            .sum::<T>()
            + self.params[self.b2_offset() + k]
    }

    pub fn predict_all(&self, x: &[T]) -> Vec<T> {
        let mut h = vec![T::zero(); self.hidden];
        self.hidden_activations(x, &mut h);
        (0..self.output_dim).map(|k| self.output_from_hidden(&h, k)).collect()
    }

    /// Mean squared error of the selected outputs over `rows`, and its gradient with respect to
    /// the flat parameter vector.
    pub fn loss_and_gradient(&self, inputs: &[T], outputs: &[usize], targets: &[T], rows: &[usize]) -> (T, Vec<T>) {
        let mut grad = vec![T::zero(); self.params.len()];
        let loss = self.accumulate_gradient(inputs, outputs, targets, rows, &mut grad);
        (loss, grad)
    }

    fn accumulate_gradient(&self, inputs: &[T], outputs: &[usize], targets: &[T], rows: &[usize], grad: &mut [T]) -> T {
        grad.iter_mut().for_each(|g| *g = T::zero());
        let (ni, nh) = (self.input_dim, self.hidden);
        let (b1, w2, b2) = (self.b1_offset(), self.w2_offset(), self.b2_offset());
        let scale = T::of(2.0) / T::of_usize(rows.len());
        let mut h = vec![T::zero(); nh];
        let mut loss = T::zero();
        for &r in rows {
            let x = &inputs[r * ni..(r + 1) * ni];
            let k = outputs[r];
            self.hidden_activations(x, &mut h);
            let err = self.output_from_hidden(&h, k) - targets[r];
            loss += err * err;
            let g_out = scale * err;
            grad[b2 + k] += g_out;
            let w2_row = w2 + k * nh;
            for j in 0..nh {
                if h[j] > T::zero() {
                    grad[w2_row + j] += g_out * h[j];
                    let g_h = g_out * self.params[w2_row + j];
                    grad[b1 + j] += g_h;
                    let g_row = &mut grad[j * ni..(j + 1) * ni];
                    for (g, &v) in g_row.iter_mut().zip(x) {
                        *g += g_h * v;
                    }
                }
            }
        }
        loss / T::of_usize(rows.len())
    }

    /// Mean squared error of the selected outputs over all rows.
    pub fn mse(&self, inputs: &[T], outputs: &[usize], targets: &[T]) -> T {
        let mut h = vec![T::zero(); self.hidden];
        let n = targets.len();
        (0..n)
            .map(|r| {
                self.hidden_activations(&inputs[r * self.input_dim..(r + 1) * self.input_dim], &mut h);
                let e = self.output_from_hidden(&h, outputs[r]) - targets[r];
                e * e
            })
            .sum::<T>()
            / T::of_usize(n.max(1))
    }
}

impl<T: Scalar> Predictor<T> for MlpModel<T> {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn n_outputs(&self) -> usize {
        self.output_dim
    }

    fn predict_one(&self, x: &[T], output: usize) -> T {
        let mut h = vec![T::zero(); self.hidden];
        self.hidden_activations(x, &mut h);
        self.output_from_hidden(&h, output)
    }

    fn parameters(&self) -> Vec<T> {
        self.params.clone()
    }
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    m: Vec<T>,
    v: Vec<T>,
    step: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Self {
            lr: T::of(learning_rate),
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [T], grad: &[T]) {
        self.step += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.step);
        let c2 = one - self.beta2.powi(self.step);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// A network together with its optimizer state and shuffling stream, so training can resume
/// across calls (used by fitted Q-iteration between target refreshes).
#[derive(Debug, Clone)]
pub struct MlpTrainer<T: Scalar> {
    model: MlpModel<T>,
    adam: Adam<T>,
    rng: ChaCha8Rng,
    batch_size: usize,
    epochs_done: usize,
    grad: Vec<T>,
}

impl<T: Scalar> MlpTrainer<T> {
    pub fn new(input_dim: usize, output_dim: usize, config: &MlpConfig) -> Result<Self> {
        if config.batch_size == 0 || config.hidden == 0 || input_dim == 0 || output_dim == 0 {
            return Err(Error::Domain("MLP needs nonzero batch size, width, input and output".into()));
        }
        if !(config.learning_rate > 0.0) {
            return Err(Error::Domain("learning rate must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = MlpModel::init(input_dim, config.hidden, output_dim, config.zero_output_init, &mut rng);
        let n = model.n_parameters();
        Ok(Self {
            model,
            adam: Adam::new(n, config.learning_rate),
            rng,
            batch_size: config.batch_size,
            epochs_done: 0,
            grad: vec![T::zero(); n],
        })
    }

    pub fn model(&self) -> &MlpModel<T> {
        &self.model
    }

    pub fn into_model(self) -> MlpModel<T> {
        self.model
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    /// Runs `epochs` passes of shuffled minibatch Adam over the rows; returns the mean minibatch
    /// loss of each epoch. Batches shrink to `n` when `n < batch_size`.
    pub fn train(&mut self, inputs: &[T], outputs: &[usize], targets: &[T], epochs: usize) -> Result<Vec<T>> {
        let n = targets.len();
        if n == 0 || inputs.len() != n * self.model.input_dim || outputs.len() != n {
            return Err(Error::Shape("training rows disagree in length or are empty".into()));
        }
        if let Some(&k) = outputs.iter().find(|&&k| k >= self.model.output_dim) {
            return Err(Error::Shape(format!("output index {k} outside network width {}", self.model.output_dim)));
        }
        if inputs.iter().chain(targets).any(|v| !v.is_finite()) {
            return Err(Error::Domain("training data must be finite".into()));
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut history = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            self.epochs_done += 1;
            order.shuffle(&mut self.rng);
            let mut total = T::zero();
            let mut batches = 0usize;
            for rows in order.chunks(self.batch_size) {
                let loss = self.model.accumulate_gradient(inputs, outputs, targets, rows, &mut self.grad);
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch: self.epochs_done });
                }
                self.adam.update(&mut self.model.params, &self.grad);
                total += loss;
                batches += 1;
            }
            let mean = total / T::of_usize(batches);
            log::trace!("epoch {} loss {}", self.epochs_done, mean);
            history.push(mean);
        }
        if self.model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence { epoch: self.epochs_done });
        }
        Ok(history)
    }
}

/// Trains a single-output network on `x` (row-major, `n x input_dim`) against `y`.
pub fn fit_mlp_regressor<T: Scalar>(x: &[T], input_dim: usize, y: &[T], config: &MlpConfig) -> Result<MlpModel<T>> {
    let mut trainer = MlpTrainer::new(input_dim, 1, config)?;
    let outputs = vec![0usize; y.len()];
    trainer.train(x, &outputs, y, config.epochs)?;
    Ok(trainer.into_model())
}
