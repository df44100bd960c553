//! Mirrored fully-connected autoencoder.
//!
//! Every layer uses leaky-ReLU except the reconstruction layer, which is a
//! sigmoid; inputs are therefore expected in `[0, 1]` (see
//! [`MinMaxScaler`]). Training minimises mean squared reconstruction error
//! with Adam and exponential learning-rate decay for a fixed number of
//! epochs.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::nn::{self, flatten_gradients, Activation, Loss, Network, TrainConfig, TrainHistory};
use crate::rng::{self, streams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input: usize,
    /// Encoder hidden widths, outermost first; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub code: usize,
}

impl NetSpec {
    /// `input -> 712 -> 250 -> 712 -> input`.
    pub fn standard(input: usize) -> Self {
        Self { input, hidden: vec![712], code: 250 }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input];
        w.extend(&self.hidden);
        w.push(self.code);
        w.extend(self.hidden.iter().rev());
        w.push(self.input);
        w
    }

    pub fn activations(&self) -> Vec<Activation> {
        let layers = self.widths().len() - 1;
        (0..layers)
            .map(|l| if l + 1 == layers { Activation::Sigmoid } else { Activation::LeakyRelu })
            .collect()
    }

    pub fn encoder_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths().contains(&0) {
            return Err(Error::Config(format!("layer widths must be positive: {:?}", self.widths())));
        }
        Ok(())
    }

    pub fn build(&self, rng: &mut rng::Rng) -> Result<Network> {
        self.validate()?;
        Network::new(&self.widths(), &self.activations(), rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeModel {
    pub spec: NetSpec,
    pub net: Network,
    pub history: TrainHistory,
}

impl AeModel {
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path.as_ref())?)?)
    }

    /// `epoch,loss` with epoch 0 the untrained loss.
    pub fn write_history_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path.as_ref())?;
        wtr.write_record(["epoch", "loss"])?;
        wtr.write_record(["0".to_string(), format!("{}", self.history.initial_loss)])?;
        for (e, l) in self.history.epoch_loss.iter().enumerate() {
            wtr.write_record([(e + 1).to_string(), format!("{l}")])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub fn ae_train(x: &DMatrix<f64>, spec: &NetSpec, cfg: &TrainConfig) -> Result<AeModel> {
    spec.validate()?;
    cfg.validate()?;
    if x.ncols() != spec.input {
        return Err(Error::Shape(format!("autoencoder expects {} columns, got {}", spec.input, x.ncols())));
    }
    if x.nrows() < cfg.batch_size {
        return Err(Error::Config(format!(
            "need at least batch_size={} rows, got {}",
            cfg.batch_size,
            x.nrows()
        )));
    }
    if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Config("autoencoder inputs must lie in [0, 1]".into()));
    }
    let mut rng = rng::stream(cfg.seed, streams::AUTOENC);
    let mut net = spec.build(&mut rng)?;
    let history = nn::train(&mut net, x, x, Loss::MeanSquaredError, cfg, &mut rng)?;
    Ok(AeModel { spec: spec.clone(), net, history })
}

pub fn ae_encode(m: &AeModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != m.spec.input {
        return Err(Error::Shape(format!("autoencoder expects {} columns, got {}", m.spec.input, x.ncols())));
    }
    Ok(m.net.forward_range(x, 0..m.spec.encoder_layers()))
}

pub fn ae_decode(m: &AeModel, code: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if code.ncols() != m.spec.code {
        return Err(Error::Shape(format!("decoder expects {} columns, got {}", m.spec.code, code.ncols())));
    }
    Ok(m.net.forward_range(code, m.spec.encoder_layers()..m.net.layers.len()))
}

/// Per-column min-max scaling to `[0, 1]` using training statistics.
/// Constant columns map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: DVector<f64>,
    pub max: DVector<f64>,
}

impl MinMaxScaler {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let min = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.min()));
        let max = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.max()));
        Self { min, max }
    }

    /// Values outside the training range fall outside `[0, 1]`.
    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.min.len() {
            return Err(Error::Shape(format!("scaler expects {} columns, got {}", self.min.len(), x.ncols())));
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            let range = self.max[j] - self.min[j];
            if range > 0.0 { (x[(i, j)] - self.min[j]) / range } else { 0.0 }
        }))
    }
}

/// Largest relative error between backprop gradients and central finite
/// differences (`h = 1e-5`) on a random batch, for the autoencoder loss.
pub fn grad_check(spec: &NetSpec, seed: u64) -> Result<f64> {
    let mut rng = rng::stream(seed, streams::GRAD_CHECK);
    let mut net = spec.build(&mut rng)?;
    let mut params = net.params();
    // Non-zero biases so every parameter has a non-trivial gradient.
    for p in params.iter_mut() {
        *p += rng.random_range(-0.1..0.1);
    }
    net.set_params(&params);
    let x = DMatrix::from_fn(5, spec.input, |_, _| rng.random::<f64>());
    let errors = gradient_errors(&mut net, &x, &x, Loss::MeanSquaredError);
    Ok(errors.into_iter().fold(0.0, f64::max))
}

/// Relative error per parameter, `|a - n| / max(|a|, |n|, 1e-7)`.
pub fn gradient_errors(net: &mut Network, x: &DMatrix<f64>, y: &DMatrix<f64>, loss: Loss) -> Vec<f64> {
    const H: f64 = 1e-5;
    let params = net.params();
    let (_, grads) = net.gradients(x, y, loss);
    let analytic = flatten_gradients(&grads);
    let mut errors = Vec::with_capacity(params.len());
    let mut probe = params.clone();
    for k in 0..params.len() {
        probe[k] = params[k] + H;
        net.set_params(&probe);
        let plus = net.loss(x, y, loss);
        probe[k] = params[k] - H;
        net.set_params(&probe);
        let minus = net.loss(x, y, loss);
        probe[k] = params[k];
        let numeric = (plus - minus) / (2.0 * H);
        let scale = analytic[k].abs().max(numeric.abs()).max(1e-7);
        errors.push((analytic[k] - numeric).abs() / scale);
    }
    net.set_params(&params);
    errors
}
