//! L2-regularised logistic regression fitted by gradient descent with
//! backtracking line search on standardised features.

use nalgebra::{DMatrix, DVector};

use super::{check_width, Standardizer};
use crate::nn::sigmoid;
use crate::Result;

const GRAD_TOL: f64 = 1e-6;
const MAX_ITER: usize = 20_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    scaler: Standardizer,
    pub weights: DVector<f64>,
    pub intercept: f64,
    pub iterations: usize,
}

impl LogisticModel {
    pub fn decision(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        check_width(self.weights.len(), x)?;
        Ok((self.scaler.apply(x) * &self.weights).add_scalar(self.intercept))
    }

    pub fn scores(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(self.decision(x)?.iter().map(|&z| sigmoid(z)).collect())
    }
}

/// Mean log-loss plus `lambda / 2 * |w|^2`; the intercept is not penalised.
fn objective(x: &DMatrix<f64>, y: &[f64], w: &DVector<f64>, b: f64, lambda: f64) -> f64 {
    let z = (x * w).add_scalar(b);
    let n = y.len() as f64;
    let loss: f64 = z
        .iter()
        .zip(y)
        // log(1 + e^z) - y z, computed stably.
        .map(|(&zi, &yi)| zi.max(0.0) + (-zi.abs()).exp().ln_1p() - yi * zi)
        .sum();
    loss / n + 0.5 * lambda * w.norm_squared()
}

fn gradient(x: &DMatrix<f64>, y: &[f64], w: &DVector<f64>, b: f64, lambda: f64) -> (DVector<f64>, f64) {
    let n = y.len() as f64;
    let z = (x * w).add_scalar(b);
    let resid = DVector::from_iterator(y.len(), z.iter().zip(y).map(|(&zi, &yi)| sigmoid(zi) - yi));
    let gw = x.transpose() * &resid / n + w * lambda;
    (gw, resid.sum() / n)
}

pub(super) fn fit(x: &DMatrix<f64>, y: &[u8], lambda: f64) -> Result<LogisticModel> {
    let scaler = Standardizer::fit(x);
    let xs = scaler.apply(x);
    let yf: Vec<f64> = y.iter().map(|&l| f64::from(l)).collect();
    let mut w = DVector::zeros(x.ncols());
    let mut b = 0.0;
    let mut step = 1.0;
    let mut f = objective(&xs, &yf, &w, b, lambda);
    let mut iterations = 0;
    while iterations < MAX_ITER {
        let (gw, gb) = gradient(&xs, &yf, &w, b, lambda);
        let gnorm2 = gw.norm_squared() + gb * gb;
        if gnorm2.sqrt() < GRAD_TOL {
            break;
        }
        // Armijo backtracking, then let the step grow again.
        step *= 2.0;
        loop {
            let w_new = &w - &gw * step;
            let b_new = b - gb * step;
            let f_new = objective(&xs, &yf, &w_new, b_new, lambda);
            if f_new <= f - 0.5 * step * gnorm2 || step < 1e-12 {
                w = w_new;
                b = b_new;
                f = f_new;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
    }
    Ok(LogisticModel { scaler, weights: w, intercept: b, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scores_increase_with_distance_from_boundary() {
        let x = DMatrix::from_fn(20, 1, |i, _| i as f64 - 9.5);
        let y: Vec<u8> = (0..20).map(|i| u8::from(i >= 10)).collect();
        let m = fit(&x, &y, 0.1).unwrap();
        let probe = DMatrix::from_fn(7, 1, |i, _| i as f64 - 3.0);
        let s = m.scores(&probe).unwrap();
        assert!(s.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn converges_to_stationary_point() {
        let x = DMatrix::from_row_slice(6, 2, &[0.0, 1.0, 1.0, 0.5, 2.0, 0.0, 0.5, 2.0, 1.5, 1.5, 3.0, 0.2]);
        let y = [0, 0, 1, 0, 1, 1];
        let m = fit(&x, &y, 0.1).unwrap();
        let xs = m.scaler.apply(&x);
        let yf: Vec<f64> = y.iter().map(|&l| f64::from(l)).collect();
        let (gw, gb) = gradient(&xs, &yf, &m.weights, m.intercept, 0.1);
        assert!((gw.norm_squared() + gb * gb).sqrt() < GRAD_TOL);
    }
}
