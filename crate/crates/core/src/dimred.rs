//! PCA and kernel PCA.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{check_symmetric, sym_eigen_desc};
use crate::{Error, Result};

/// Eigenvalues below this fraction of the trace are treated as zero.
const EIGEN_ZERO_REL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PcaTarget {
    /// Smallest component count whose cumulative variance share reaches this.
    VarianceFraction(f64),
    Components(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// All covariance eigenvalues, non-increasing.
    pub eigenvalues: Vec<f64>,
    /// `p x k`, orthonormal columns.
    pub components: DMatrix<f64>,
    pub captured_variance_fraction: f64,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.ncols()
    }
}

pub fn pca_fit(x: &DMatrix<f64>, target: PcaTarget) -> Result<PcaModel> {
    let (n, p) = x.shape();
    if n < 2 {
        return Err(Error::DegenerateInput(format!("PCA needs at least 2 rows, got {n}")));
    }
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let (mut values, vectors) = sym_eigen_desc(&cov);
    let trace: f64 = values.iter().filter(|v| **v > 0.0).sum();
    if trace <= 0.0 {
        return Err(Error::DegenerateInput("all rows are identical".into()));
    }
    for v in &mut values {
        if *v < EIGEN_ZERO_REL * trace {
            *v = 0.0;
        }
    }
    let total: f64 = values.iter().sum();
    let k = match target {
        PcaTarget::Components(k) => {
            if k == 0 || k > n.min(p) {
                return Err(Error::Config(format!("component count must be in [1, {}], got {k}", n.min(p))));
            }
            k
        }
        PcaTarget::VarianceFraction(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("variance fraction must be in (0, 1], got {f}")));
            }
            let mut acc = 0.0;
            let mut k = values.len();
            for (i, v) in values.iter().enumerate() {
                acc += v;
                // Relative slack absorbs round-off when f = 1.
                if acc >= f * total * (1.0 - 1e-12) {
                    k = i + 1;
                    break;
                }
            }
            k
        }
    };
    let captured = values[..k].iter().sum::<f64>() / total;
    Ok(PcaModel {
        mean,
        eigenvalues: values,
        components: vectors.columns(0, k).into_owned(),
        captured_variance_fraction: captured,
    })
}

pub fn pca_transform(m: &PcaModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != m.mean.len() {
        return Err(Error::Shape(format!("PCA expects {} columns, got {}", m.mean.len(), x.ncols())));
    }
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= m.mean.transpose();
    }
    Ok(centered * &m.components)
}

pub fn pca_inverse_transform(m: &PcaModel, scores: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if scores.ncols() != m.k() {
        return Err(Error::Shape(format!("expected {} score columns, got {}", m.k(), scores.ncols())));
    }
    let mut x = scores * m.components.transpose();
    for mut row in x.row_iter_mut() {
        row += m.mean.transpose();
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolynomialKernel {
    pub gamma: f64,
    pub degree: u32,
    pub coef0: f64,
}

impl Default for PolynomialKernel {
    fn default() -> Self {
        Self { gamma: 0.002083, degree: 3, coef0: 1.0 }
    }
}

impl PolynomialKernel {
    /// `(gamma <a, b> + coef0)^degree` for every row pair.
    pub fn gram(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        (a * b.transpose()).map(|dot| (self.gamma * dot + self.coef0).powi(self.degree as i32))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KpcaKernel {
    Precomputed,
    Polynomial(PolynomialKernel),
}

pub enum KpcaInput<'a> {
    /// Symmetric `n x n` training kernel.
    Precomputed(&'a DMatrix<f64>),
    Features { x: &'a DMatrix<f64>, kernel: PolynomialKernel },
}

pub enum KpcaRows<'a> {
    /// Kernel values against the training rows, `m x n`.
    Kernel(&'a DMatrix<f64>),
    Features(&'a DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpcaModel {
    pub kernel: KpcaKernel,
    /// Retained eigenvalues of the centred kernel, strictly positive.
    pub eigenvalues: Vec<f64>,
    /// `n x k` eigenvectors scaled by `1 / sqrt(eigenvalue)`.
    pub alphas: DMatrix<f64>,
    /// Training features, kept for polynomial-mode transforms.
    pub train_features: Option<DMatrix<f64>>,
    col_means: DVector<f64>,
    grand_mean: f64,
}

impl KpcaModel {
    pub fn k(&self) -> usize {
        self.alphas.ncols()
    }

    pub fn n_train(&self) -> usize {
        self.alphas.nrows()
    }
}

/// `H K H` with `H = I - 11^T / n`.
pub fn double_center(k: &DMatrix<f64>) -> DMatrix<f64> {
    let col_means = k.row_mean();
    let row_means = k.column_mean();
    let grand = k.mean();
    DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| k[(i, j)] - row_means[i] - col_means[j] + grand)
}

pub fn kpca_fit(input: KpcaInput<'_>, k: usize) -> Result<KpcaModel> {
    let (gram, kind, features) = match input {
        KpcaInput::Precomputed(m) => {
            check_symmetric(m, 1e-8)?;
            (m.clone(), KpcaKernel::Precomputed, None)
        }
        KpcaInput::Features { x, kernel } => (kernel.gram(x, x), KpcaKernel::Polynomial(kernel), Some(x.clone())),
    };
    let n = gram.nrows();
    if n < 2 {
        return Err(Error::DegenerateInput("kernel PCA needs at least 2 samples".into()));
    }
    if k == 0 || k > n - 1 {
        return Err(Error::Config(format!("component count must be in [1, {}], got {k}", n - 1)));
    }
    let centered = double_center(&gram);
    let (values, vectors) = sym_eigen_desc(&centered);
    let trace: f64 = values.iter().filter(|v| **v > 0.0).sum();
    let positive = values.iter().take_while(|&&v| v > EIGEN_ZERO_REL * trace && trace > 0.0).count();
    if positive == 0 {
        return Err(Error::DegenerateInput("centred kernel has no positive eigenvalue".into()));
    }
    let kept = if positive < k {
        warn!("kernel PCA: only {positive} positive eigenvalues, reducing k from {k}");
        positive
    } else {
        k
    };
    let mut alphas = vectors.columns(0, kept).into_owned();
    for (j, mut col) in alphas.column_iter_mut().enumerate() {
        col /= values[j].sqrt();
    }
    Ok(KpcaModel {
        kernel: kind,
        eigenvalues: values[..kept].to_vec(),
        alphas,
        train_features: features,
        col_means: gram.row_mean().transpose(),
        grand_mean: gram.mean(),
    })
}

pub fn kpca_transform(m: &KpcaModel, rows: KpcaRows<'_>) -> Result<DMatrix<f64>> {
    let kernel_rows = match (rows, &m.kernel) {
        (KpcaRows::Kernel(r), KpcaKernel::Precomputed) => r.clone(),
        (KpcaRows::Features(x), KpcaKernel::Polynomial(p)) => {
            let train = m.train_features.as_ref().expect("polynomial models keep features");
            if x.ncols() != train.ncols() {
                return Err(Error::Shape(format!(
                    "expected {} feature columns, got {}",
                    train.ncols(),
                    x.ncols()
                )));
            }
            p.gram(x, train)
        }
        (KpcaRows::Kernel(_), _) => {
            return Err(Error::Config("model expects raw features, got kernel rows".into()))
        }
        (KpcaRows::Features(_), _) => {
            return Err(Error::Config("model expects kernel rows, got raw features".into()))
        }
    };
    if kernel_rows.ncols() != m.n_train() {
        return Err(Error::Shape(format!(
            "kernel rows must have {} columns, got {}",
            m.n_train(),
            kernel_rows.ncols()
        )));
    }
    let row_means = kernel_rows.column_mean();
    let centered = DMatrix::from_fn(kernel_rows.nrows(), kernel_rows.ncols(), |i, j| {
        kernel_rows[(i, j)] - row_means[i] - m.col_means[j] + m.grand_mean
    });
    Ok(centered * &m.alphas)
}
