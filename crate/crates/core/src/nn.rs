//! Fully-connected network core: dense layers, activations, backprop and
//! Adam with exponential learning-rate decay.
//!
//! Batches are row-major: a batch of `b` samples is a `b x width` matrix.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    LeakyRelu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if z >= 0.0 { z } else { LEAKY_SLOPE * z }
            }
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative at pre-activation `z`, given `a = apply(z)`.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if z >= 0.0 { 1.0 } else { LEAKY_SLOPE }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    /// Mean over samples and outputs of the squared error.
    MeanSquaredError,
    /// Mean binary cross-entropy; expects a sigmoid output layer.
    BinaryCrossEntropy,
}

impl Loss {
    pub fn value(self, pred: &DMatrix<f64>, target: &DMatrix<f64>) -> f64 {
        let count = pred.len() as f64;
        match self {
            Loss::MeanSquaredError => (pred - target).norm_squared() / count,
            Loss::BinaryCrossEntropy => {
                pred.iter()
                    .zip(target.iter())
                    .map(|(&p, &y)| {
                        let p = p.clamp(1e-12, 1.0 - 1e-12);
                        -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
                    })
                    .sum::<f64>()
                    / count
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `fan_in x fan_out`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

impl Dense {
    fn pre_activation(&self, input: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = input * &self.weights;
        for mut row in z.row_iter_mut() {
            row += self.bias.transpose();
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Dense>,
}

impl Network {
    /// Glorot-uniform weights, zero biases.
    pub fn new(widths: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 || activations.len() != widths.len() - 1 || widths.contains(&0) {
            return Err(Error::Config(format!(
                "invalid network: widths {widths:?}, {} activations",
                activations.len()
            )));
        }
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                Dense {
                    weights: DMatrix::from_fn(w[0], w[1], |_, _| rng.random_range(-limit..=limit)),
                    bias: DVector::zeros(w[1]),
                    activation,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty").weights.ncols()
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward_range(x, 0..self.layers.len())
    }

    /// Runs only `layers[range]`.
    pub fn forward_range(&self, x: &DMatrix<f64>, range: std::ops::Range<usize>) -> DMatrix<f64> {
        let mut a = x.clone();
        for layer in &self.layers[range] {
            let act = layer.activation;
            a = layer.pre_activation(&a).map(|z| act.apply(z));
        }
        a
    }

    pub fn loss(&self, x: &DMatrix<f64>, y: &DMatrix<f64>, loss: Loss) -> f64 {
        loss.value(&self.forward(x), y)
    }

    /// Loss and per-layer gradients for one batch.
    pub fn gradients(&self, x: &DMatrix<f64>, y: &DMatrix<f64>, loss: Loss) -> (f64, Vec<Gradient>) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for layer in &self.layers {
            let z = layer.pre_activation(&a);
            let next = z.map(|v| layer.activation.apply(v));
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        let value = loss.value(&a, y);
        let count = a.len() as f64;
        let last = self.layers.last().expect("non-empty");

        // dL/dz for the output layer.
        let mut delta = match (loss, last.activation) {
            (Loss::BinaryCrossEntropy, Activation::Sigmoid) => (&a - y) / count,
            (Loss::BinaryCrossEntropy, act) => DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| {
                let p = a[(i, j)].clamp(1e-12, 1.0 - 1e-12);
                let t = y[(i, j)];
                (p - t) / (p * (1.0 - p)) / count * act.derivative(pre.last().unwrap()[(i, j)], a[(i, j)])
            }),
            (Loss::MeanSquaredError, act) => DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| {
                2.0 * (a[(i, j)] - y[(i, j)]) / count * act.derivative(pre.last().unwrap()[(i, j)], a[(i, j)])
            }),
        };

        let mut grads = vec![None; self.layers.len()];
        for l in (0..self.layers.len()).rev() {
            let gw = inputs[l].transpose() * &delta;
            let gb = delta.row_sum().transpose();
            if l > 0 {
                let back = &delta * self.layers[l].weights.transpose();
                let prev = &self.layers[l - 1];
                delta = DMatrix::from_fn(back.nrows(), back.ncols(), |i, j| {
                    let z = pre[l - 1][(i, j)];
                    back[(i, j)] * prev.activation.derivative(z, inputs[l][(i, j)])
                });
            }
            grads[l] = Some(Gradient { weights: gw, bias: gb });
        }
        (value, grads.into_iter().map(|g| g.expect("filled")).collect())
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters as one vector: per layer, weights (column-major) then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params(), "parameter count mismatch");
        let mut k = 0;
        for l in &mut self.layers {
            for w in l.weights.iter_mut() {
                *w = flat[k];
                k += 1;
            }
            for b in l.bias.iter_mut() {
                *b = flat[k];
                k += 1;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }
}

pub fn flatten_gradients(grads: &[Gradient]) -> Vec<f64> {
    grads.iter().flat_map(|g| g.weights.iter().chain(g.bias.iter()).copied()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Per-epoch multiplicative learning-rate decay.
    pub decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay: 0.998,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be at least 1".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("decay must be in (0, 1], got {}", self.decay)));
        }
        if !(self.learning_rate > 0.0 && (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config("invalid Adam parameters".into()));
        }
        Ok(())
    }
}

struct Adam {
    m: Vec<Gradient>,
    v: Vec<Gradient>,
    t: i32,
}

impl Adam {
    fn new(net: &Network) -> Self {
        let zeros: Vec<Gradient> = net
            .layers
            .iter()
            .map(|l| Gradient {
                weights: DMatrix::zeros(l.weights.nrows(), l.weights.ncols()),
                bias: DVector::zeros(l.bias.len()),
            })
            .collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }

    fn step(&mut self, net: &mut Network, grads: &[Gradient], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for ((layer, g), (m, v)) in net.layers.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
            };
            for (((p, &gi), mi), vi) in
                layer.weights.iter_mut().zip(g.weights.iter()).zip(m.weights.iter_mut()).zip(v.weights.iter_mut())
            {
                update(p, gi, mi, vi);
            }
            for (((p, &gi), mi), vi) in
                layer.bias.iter_mut().zip(g.bias.iter()).zip(m.bias.iter_mut()).zip(v.bias.iter_mut())
            {
                update(p, gi, mi, vi);
            }
        }
    }
}

/// Loss on the full data before training, then after each epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub initial_loss: f64,
    pub epoch_loss: Vec<f64>,
}

impl TrainHistory {
    pub fn final_loss(&self) -> f64 {
        self.epoch_loss.last().copied().unwrap_or(self.initial_loss)
    }
}

/// Mini-batch Adam. The learning rate at epoch `e` (0-based) is
/// `learning_rate * decay^e`. Batch order is reshuffled from `rng` each epoch.
pub fn train(
    net: &mut Network,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    loss: Loss,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if x.nrows() != y.nrows() || x.ncols() != net.input_width() || y.ncols() != net.output_width() {
        return Err(Error::Shape(format!(
            "network {}->{} cannot train on {}x{} -> {}x{}",
            net.input_width(),
            net.output_width(),
            x.nrows(),
            x.ncols(),
            y.nrows(),
            y.ncols()
        )));
    }
    let n = x.nrows();
    let initial_loss = net.loss(x, y, loss);
    if !initial_loss.is_finite() {
        return Err(Error::Divergence { epoch: 0 });
    }
    let mut adam = Adam::new(net);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate * cfg.decay.powi(epoch as i32);
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let bx = crate::linalg::select_rows(x, chunk);
            let by = crate::linalg::select_rows(y, chunk);
            let (_, grads) = net.gradients(&bx, &by, loss);
            adam.step(net, &grads, lr, cfg);
        }
        let value = net.loss(x, y, loss);
        if !value.is_finite() || !net.all_finite() {
            return Err(Error::Divergence { epoch: epoch + 1 });
        }
        epoch_loss.push(value);
    }
    Ok(TrainHistory { initial_loss, epoch_loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn activation_spot_values() {
        assert_eq!(Activation::LeakyRelu.apply(2.5), 2.5);
        assert_eq!(Activation::LeakyRelu.apply(0.0), 0.0);
        assert_eq!(Activation::LeakyRelu.apply(-2.0), -0.02);
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert_eq!(Activation::Sigmoid.derivative(0.0, 0.5), 0.25);
        assert_eq!(Activation::LeakyRelu.derivative(-1.0, -0.01), LEAKY_SLOPE);
        assert!((sigmoid(-800.0)).is_finite());
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let mut rng = Rng::seed_from_u64(3);
        let mut net =
            Network::new(&[3, 4, 1], &[Activation::LeakyRelu, Activation::Sigmoid], &mut rng).unwrap();
        let mut p = net.params();
        for v in p.iter_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
        net.set_params(&p);
        let x = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(6, 1, |i, _| (i % 2) as f64);
        let (_, grads) = net.gradients(&x, &y, Loss::BinaryCrossEntropy);
        let analytic = flatten_gradients(&grads);
        let h = 1e-5;
        for k in 0..p.len() {
            let mut plus = p.clone();
            plus[k] += h;
            let mut minus = p.clone();
            minus[k] -= h;
            net.set_params(&plus);
            let lp = net.loss(&x, &y, Loss::BinaryCrossEntropy);
            net.set_params(&minus);
            let lm = net.loss(&x, &y, Loss::BinaryCrossEntropy);
            let numeric = (lp - lm) / (2.0 * h);
            assert!((numeric - analytic[k]).abs() <= 1e-6 * (1.0 + numeric.abs()), "param {k}");
        }
    }

    #[test]
    fn invalid_training_config_is_rejected() {
        let cfg = TrainConfig { decay: 0.0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let mut rng = Rng::seed_from_u64(1);
        let mut net = Network::new(&[1, 1], &[Activation::Identity], &mut rng).unwrap();
        let x = DMatrix::from_element(4, 1, 1e200);
        let y = DMatrix::from_element(4, 1, 0.0);
        let err = train(&mut net, &x, &y, Loss::MeanSquaredError, &TrainConfig { epochs: 3, ..Default::default() }, &mut rng);
        assert!(matches!(err, Err(Error::Divergence { .. })));
    }
}
