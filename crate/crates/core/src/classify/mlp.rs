use nalgebra::DMatrix;

use super::{check_width, Standardizer};
use crate::nn::{self, Activation, Loss, Network, TrainConfig};
use crate::rng::{self, streams};
use crate::Result;

/// One hidden LeakyReLU layer and a sigmoid output, trained on binary
/// cross-entropy over standardised inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    scaler: Standardizer,
    pub net: Network,
}

impl MlpModel {
    pub fn scores(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        check_width(self.net.input_width(), x)?;
        Ok(self.net.forward(&self.scaler.apply(x)).iter().copied().collect())
    }
}

pub(super) fn fit(x: &DMatrix<f64>, y: &[u8], hidden: usize, epochs: usize, seed: u64) -> Result<MlpModel> {
    let scaler = Standardizer::fit(x);
    let xs = scaler.apply(x);
    let target = DMatrix::from_iterator(y.len(), 1, y.iter().map(|&l| f64::from(l)));
    let mut rng = rng::stream(seed, streams::CLASSIFIER);
    let mut net = Network::new(&[x.ncols(), hidden, 1], &[Activation::LeakyRelu, Activation::Sigmoid], &mut rng)?;
    let cfg = TrainConfig {
        epochs,
        batch_size: y.len().min(32),
        learning_rate: 5e-3,
        decay: 1.0,
        seed,
        ..TrainConfig::default()
    };
    nn::train(&mut net, &xs, &target, Loss::BinaryCrossEntropy, &cfg, &mut rng)?;
    Ok(MlpModel { scaler, net })
}
