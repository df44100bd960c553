//! Binary classifiers over learned representations, metrics,
//! cross-validated model selection and report tables.
//!
//! Every model produces a continuous score in `[0, 1]` (a probability, a
//! vote fraction, or a sigmoid-squashed margin) and labels with threshold
//! 0.5 on that score.

mod cv;
mod knn;
mod logistic;
mod metrics;
mod mlp;
mod report;
mod svm;
mod tree;

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use cv::{cross_validate, stratified_folds, CvResult};
pub use knn::{KnnMetric, KnnModel};
pub use logistic::LogisticModel;
pub use metrics::{auc, compute_metrics, Metrics};
pub use mlp::MlpModel;
pub use report::{EvalReport, ReportRow};
pub use svm::{SvmKernel, SvmModel};
pub use tree::{ForestModel, TreeModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierKind {
    LogisticRegression,
    Knn,
    DecisionTree,
    RandomForest,
    NuSvm,
    Svm,
    Mlp,
}

impl ClassifierKind {
    /// Table order.
    pub const ALL: [ClassifierKind; 7] = [
        ClassifierKind::LogisticRegression,
        ClassifierKind::Knn,
        ClassifierKind::DecisionTree,
        ClassifierKind::RandomForest,
        ClassifierKind::NuSvm,
        ClassifierKind::Svm,
        ClassifierKind::Mlp,
    ];

    pub fn display_name(self) -> &'static str {
        match self {
            ClassifierKind::LogisticRegression => "LR",
            ClassifierKind::Knn => "k-NN",
            ClassifierKind::DecisionTree => "Tree",
            ClassifierKind::RandomForest => "Random forest",
            ClassifierKind::NuSvm => "nu-SVM",
            ClassifierKind::Svm => "SVM",
            ClassifierKind::Mlp => "MLP",
        }
    }

    pub fn from_display_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.display_name() == s)
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

/// A classifier with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ClassifierSpec {
    LogisticRegression { lambda: f64 },
    Knn { k: usize, metric: KnnMetric },
    DecisionTree { max_depth: Option<usize> },
    RandomForest { n_trees: usize, max_depth: Option<usize> },
    Svm { c: f64, kernel: SvmKernel },
    NuSvm { nu: f64, kernel: SvmKernel },
    Mlp { hidden: usize, epochs: usize },
}

impl ClassifierSpec {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            ClassifierSpec::LogisticRegression { .. } => ClassifierKind::LogisticRegression,
            ClassifierSpec::Knn { .. } => ClassifierKind::Knn,
            ClassifierSpec::DecisionTree { .. } => ClassifierKind::DecisionTree,
            ClassifierSpec::RandomForest { .. } => ClassifierKind::RandomForest,
            ClassifierSpec::Svm { .. } => ClassifierKind::Svm,
            ClassifierSpec::NuSvm { .. } => ClassifierKind::NuSvm,
            ClassifierSpec::Mlp { .. } => ClassifierKind::Mlp,
        }
    }

    pub fn hyperparams_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("specs serialise")
    }

    pub fn uses_kernel(&self) -> bool {
        matches!(
            self,
            ClassifierSpec::Svm { kernel: SvmKernel::Precomputed, .. }
                | ClassifierSpec::NuSvm { kernel: SvmKernel::Precomputed, .. }
                | ClassifierSpec::Knn { metric: KnnMetric::Kernel, .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ClassifierSpec::LogisticRegression { lambda } => lambda >= 0.0 && lambda.is_finite(),
            ClassifierSpec::Knn { k, .. } => k >= 1,
            ClassifierSpec::DecisionTree { max_depth } => max_depth != Some(0),
            ClassifierSpec::RandomForest { n_trees, max_depth } => n_trees >= 1 && max_depth != Some(0),
            ClassifierSpec::Svm { c, kernel } => c > 0.0 && kernel.validate(),
            ClassifierSpec::NuSvm { nu, kernel } => nu > 0.0 && nu <= 1.0 && kernel.validate(),
            ClassifierSpec::Mlp { hidden, epochs } => hidden >= 1 && epochs >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("hyperparameters out of range: {self:?}")))
        }
    }
}

/// Default grid for `kind`. Kernel-based entries are included only when a
/// precomputed kernel accompanies the samples.
pub fn default_grid(kind: ClassifierKind, with_kernel: bool) -> Vec<ClassifierSpec> {
    let mut kernels = vec![SvmKernel::Linear, SvmKernel::Rbf { gamma: 0.01 }, SvmKernel::Rbf { gamma: 0.1 }];
    if with_kernel {
        kernels.push(SvmKernel::Precomputed);
    }
    match kind {
        ClassifierKind::LogisticRegression => {
            [0.01, 0.1, 1.0].into_iter().map(|lambda| ClassifierSpec::LogisticRegression { lambda }).collect()
        }
        ClassifierKind::Knn => [1, 3, 5, 11]
            .into_iter()
            .map(|k| ClassifierSpec::Knn { k, metric: KnnMetric::Euclidean })
            .collect(),
        ClassifierKind::DecisionTree => [Some(3), Some(5), Some(10), None]
            .into_iter()
            .map(|max_depth| ClassifierSpec::DecisionTree { max_depth })
            .collect(),
        ClassifierKind::RandomForest => [50, 200]
            .into_iter()
            .flat_map(|n_trees| [Some(5), None].map(|max_depth| ClassifierSpec::RandomForest { n_trees, max_depth }))
            .collect(),
        ClassifierKind::Svm => [0.1, 1.0, 10.0]
            .into_iter()
            .flat_map(|c| kernels.iter().map(move |&kernel| ClassifierSpec::Svm { c, kernel }))
            .collect(),
        ClassifierKind::NuSvm => [0.25, 0.5, 0.75]
            .into_iter()
            .flat_map(|nu| kernels.iter().map(move |&kernel| ClassifierSpec::NuSvm { nu, kernel }))
            .collect(),
        ClassifierKind::Mlp => {
            [32, 128].into_iter().map(|hidden| ClassifierSpec::Mlp { hidden, epochs: 300 }).collect()
        }
    }
}

/// Kernel values of each sample against a fixed reference set (for the
/// pipeline, the TCK training records).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelColumns {
    /// `n x m`.
    pub rows: DMatrix<f64>,
    /// Column of `rows` that is the sample itself, for reference samples.
    pub self_col: Vec<Option<usize>>,
    /// `k(x, x)` per sample.
    pub diag: Vec<f64>,
}

/// Feature rows plus optional precomputed kernel columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub x: DMatrix<f64>,
    pub kernel: Option<KernelColumns>,
}

impl Samples {
    pub fn features(x: DMatrix<f64>) -> Self {
        Self { x, kernel: None }
    }

    pub fn with_kernel(x: DMatrix<f64>, kernel: KernelColumns) -> Result<Self> {
        if kernel.rows.nrows() != x.nrows() || kernel.self_col.len() != x.nrows() || kernel.diag.len() != x.nrows() {
            return Err(Error::Shape("kernel columns must have one row per sample".into()));
        }
        if kernel.self_col.iter().flatten().any(|&c| c >= kernel.rows.ncols()) {
            return Err(Error::Shape("self column out of range".into()));
        }
        Ok(Self { x, kernel: Some(kernel) })
    }

    /// Samples of a square training kernel: sample `i` is reference column `i`.
    pub fn from_square_kernel(x: DMatrix<f64>, k: DMatrix<f64>) -> Result<Self> {
        let n = k.nrows();
        let diag = (0..n).map(|i| k[(i, i)]).collect();
        Self::with_kernel(x, KernelColumns { rows: k, self_col: (0..n).map(Some).collect(), diag })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: crate::linalg::select_rows(&self.x, idx),
            kernel: self.kernel.as_ref().map(|k| KernelColumns {
                rows: crate::linalg::select_rows(&k.rows, idx),
                self_col: idx.iter().map(|&i| k.self_col[i]).collect(),
                diag: idx.iter().map(|&i| k.diag[i]).collect(),
            }),
        }
    }

    fn require_kernel(&self) -> Result<&KernelColumns> {
        self.kernel.as_ref().ok_or_else(|| Error::Config("classifier needs precomputed kernel columns".into()))
    }

    /// Reference columns of training samples; all must be reference samples.
    fn reference_columns(&self) -> Result<Vec<usize>> {
        self.require_kernel()?
            .self_col
            .iter()
            .map(|c| c.ok_or_else(|| Error::Config("training sample is not in the kernel reference set".into())))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<u8>,
    pub scores: Vec<f64>,
}

impl Prediction {
    fn from_scores(scores: Vec<f64>) -> Self {
        Self { labels: scores.iter().map(|&s| u8::from(s >= 0.5)).collect(), scores }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Logistic(LogisticModel),
    Knn(KnnModel),
    Tree(TreeModel),
    Forest(ForestModel),
    Svm(SvmModel),
    Mlp(MlpModel),
}

pub fn fit(spec: &ClassifierSpec, samples: &Samples, y: &[u8], seed: u64) -> Result<Model> {
    spec.validate()?;
    if y.len() != samples.n() {
        return Err(Error::Shape(format!("{} labels for {} samples", y.len(), samples.n())));
    }
    if let Some(&bad) = y.iter().find(|&&l| l > 1) {
        return Err(Error::Config(format!("labels must be 0 or 1, got {bad}")));
    }
    let positives = y.iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::DegenerateLabels(y.first().copied().unwrap_or(0)));
    }
    Ok(match *spec {
        ClassifierSpec::LogisticRegression { lambda } => Model::Logistic(logistic::fit(&samples.x, y, lambda)?),
        ClassifierSpec::Knn { k, metric } => Model::Knn(knn::fit(samples, y, k, metric)?),
        ClassifierSpec::DecisionTree { max_depth } => Model::Tree(tree::fit_tree(&samples.x, y, max_depth)),
        ClassifierSpec::RandomForest { n_trees, max_depth } => {
            Model::Forest(tree::fit_forest(&samples.x, y, n_trees, max_depth, seed))
        }
        ClassifierSpec::Svm { c, kernel } => Model::Svm(svm::fit_c_svc(samples, y, c, kernel)?),
        ClassifierSpec::NuSvm { nu, kernel } => Model::Svm(svm::fit_nu_svc(samples, y, nu, kernel)?),
        ClassifierSpec::Mlp { hidden, epochs } => Model::Mlp(mlp::fit(&samples.x, y, hidden, epochs, seed)?),
    })
}

pub fn predict(model: &Model, samples: &Samples) -> Result<Prediction> {
    let scores = match model {
        Model::Logistic(m) => m.scores(&samples.x)?,
        Model::Knn(m) => m.scores(samples)?,
        Model::Tree(m) => m.scores(&samples.x)?,
        Model::Forest(m) => m.scores(&samples.x)?,
        Model::Svm(m) => m.scores(samples)?,
        Model::Mlp(m) => m.scores(&samples.x)?,
    };
    Ok(Prediction::from_scores(scores))
}

fn check_width(expected: usize, x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != expected {
        return Err(Error::Shape(format!("model expects {expected} features, got {}", x.ncols())));
    }
    Ok(())
}

/// Per-column mean and standard deviation (constant columns get 1).
#[derive(Debug, Clone, PartialEq)]
struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Standardizer {
    fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let mean: Vec<f64> = x.column_iter().map(|c| c.sum() / n).collect();
        let std = x
            .column_iter()
            .zip(&mean)
            .map(|(c, m)| {
                let s = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
                if s > 1e-12 { s } else { 1.0 }
            })
            .collect();
        Self { mean, std }
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.mean[j]) / self.std[j])
    }
}
