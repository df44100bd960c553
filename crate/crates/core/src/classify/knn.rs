use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{check_width, Samples};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KnnMetric {
    Euclidean,
    /// `d^2 = k(x, x) + k(x', x') - 2 k(x, x')` from precomputed kernel columns.
    Kernel,
}

/// Score is the fraction of positive labels among the `k` nearest training
/// samples; distance ties go to the lower training index.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    k: usize,
    metric: KnnMetric,
    x: DMatrix<f64>,
    y: Vec<u8>,
    ref_cols: Vec<usize>,
    diag: Vec<f64>,
}

pub(super) fn fit(samples: &Samples, y: &[u8], k: usize, metric: KnnMetric) -> Result<KnnModel> {
    let (ref_cols, diag) = match metric {
        KnnMetric::Euclidean => (Vec::new(), Vec::new()),
        KnnMetric::Kernel => (samples.reference_columns()?, samples.require_kernel()?.diag.clone()),
    };
    Ok(KnnModel { k: k.min(y.len()), metric, x: samples.x.clone(), y: y.to_vec(), ref_cols, diag })
}

impl KnnModel {
    pub fn scores(&self, samples: &Samples) -> Result<Vec<f64>> {
        let n_train = self.y.len();
        let kernel = match self.metric {
            KnnMetric::Euclidean => {
                check_width(self.x.ncols(), &samples.x)?;
                None
            }
            KnnMetric::Kernel => {
                let kc = samples.require_kernel()?;
                if let Some(&max) = self.ref_cols.iter().max() {
                    if max >= kc.rows.ncols() {
                        return Err(Error::Shape("kernel columns do not cover the training set".into()));
                    }
                }
                Some(kc)
            }
        };
        let mut out = Vec::with_capacity(samples.n());
        let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n_train);
        for r in 0..samples.n() {
            dist.clear();
            for j in 0..n_train {
                let d = match kernel {
                    None => (0..self.x.ncols()).map(|c| (samples.x[(r, c)] - self.x[(j, c)]).powi(2)).sum(),
                    Some(kc) => kc.diag[r] + self.diag[j] - 2.0 * kc.rows[(r, self.ref_cols[j])],
                };
                dist.push((d, j));
            }
            dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let votes = dist[..self.k].iter().filter(|(_, j)| self.y[*j] == 1).count();
            out.push(votes as f64 / self.k as f64);
        }
        Ok(out)
    }
}
