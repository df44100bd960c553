use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use tckit::classify::{ClassifierKind, ClassifierSpec};
use tckit::data::MissingPolicy;
use tckit::embed::TsneConfig;
use tckit::tck::TckSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DrMethod {
    Pca,
    Kpca,
    Ae,
}

impl DrMethod {
    pub const ALL: [DrMethod; 3] = [DrMethod::Pca, DrMethod::Kpca, DrMethod::Ae];

    pub fn name(self) -> &'static str {
        match self {
            DrMethod::Pca => "pca",
            DrMethod::Kpca => "kpca",
            DrMethod::Ae => "ae",
        }
    }
}

impl fmt::Display for DrMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DrMethod {
    type Err = tckit::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| tckit::Error::Config(format!("unknown DR method {s:?}, expected pca, kpca, ae or all")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_per_cluster: usize,
    pub missing_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { n_per_cluster: 100, missing_rate: 0.0 }
    }
}

/// What the reductions are fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DrInput {
    /// TCK kernel rows against the training records.
    #[default]
    Tck,
    /// Flattened `D x T` values after the missing-data policy.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KpcaMode {
    /// Kernel PCA of the TCK matrix itself.
    #[default]
    Precomputed,
    /// Polynomial kernel over the input rows.
    Polynomial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DimredConfig {
    pub methods: Vec<DrMethod>,
    pub input: DrInput,
    pub kpca_kernel: KpcaMode,
    pub pca_variance: f64,
    pub kpca_k: usize,
    pub kpca_gamma: f64,
    pub kpca_degree: u32,
    pub kpca_coef0: f64,
    pub ae_hidden: usize,
    pub ae_code: usize,
    pub ae_epochs: usize,
    pub ae_batch_size: usize,
    pub ae_learning_rate: f64,
    pub ae_decay: f64,
}

impl Default for DimredConfig {
    fn default() -> Self {
        Self {
            methods: DrMethod::ALL.to_vec(),
            input: DrInput::Tck,
            kpca_kernel: KpcaMode::Precomputed,
            pca_variance: 0.99,
            kpca_k: 50,
            kpca_gamma: 0.002083,
            kpca_degree: 3,
            kpca_coef0: 1.0,
            ae_hidden: 712,
            ae_code: 250,
            ae_epochs: 1000,
            ae_batch_size: 32,
            ae_learning_rate: 1e-3,
            ae_decay: 0.998,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    pub folds: usize,
    pub classifiers: Vec<ClassifierKind>,
    /// Offer the TCK kernel itself to SVM and nu-SVM grids.
    pub use_tck_kernel: bool,
    /// Grid overrides per classifier kind.
    pub grids: BTreeMap<ClassifierKind, Vec<ClassifierSpec>>,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self { folds: 5, classifiers: ClassifierKind::ALL.to_vec(), use_tck_kernel: true, grids: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed for every stochastic step.
    pub seed: u64,
    /// Raw CSV for `ingest`; defaults to `data.csv` in the run directory.
    pub input: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub window_len: usize,
    pub train_frac: f64,
    pub balance: bool,
    pub missing_policy: MissingPolicy,
    pub synth: SynthConfig,
    pub tck: TckSettings,
    pub dimred: DimredConfig,
    pub tsne: TsneConfig,
    pub classify: ClassifyConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            input: None,
            output_dir: PathBuf::from("run"),
            window_len: 7,
            train_frac: 0.7,
            balance: true,
            missing_policy: MissingPolicy::default(),
            synth: SynthConfig::default(),
            tck: TckSettings::default(),
            dimred: DimredConfig::default(),
            tsne: TsneConfig::default(),
            classify: ClassifyConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.window_len == 0 {
            bail!("window_len must be at least 1");
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            bail!("train_frac must be in (0, 1), got {}", self.train_frac);
        }
        if self.tck.max_components < 2 || self.tck.randomizations < 1 {
            bail!("tck needs max_components >= 2 and randomizations >= 1");
        }
        self.tck.em.validate()?;
        let d = &self.dimred;
        if !(d.pca_variance > 0.0 && d.pca_variance <= 1.0) {
            bail!("pca_variance must be in (0, 1], got {}", d.pca_variance);
        }
        if d.input == DrInput::Raw && d.kpca_kernel == KpcaMode::Precomputed && d.methods.contains(&DrMethod::Kpca) {
            bail!("dimred.kpca_kernel = \"precomputed\" needs dimred.input = \"tck\"; use \"polynomial\" for raw input");
        }
        if d.kpca_k == 0 || d.kpca_gamma <= 0.0 {
            bail!("kpca_k must be >= 1 and kpca_gamma > 0");
        }
        if d.ae_hidden == 0 || d.ae_code == 0 || d.ae_epochs == 0 || d.ae_batch_size == 0 {
            bail!("autoencoder widths, epochs and batch size must be >= 1");
        }
        if self.classify.folds < 2 {
            bail!("classify.folds must be >= 2");
        }
        for (kind, grid) in &self.classify.grids {
            for spec in grid {
                if spec.kind() != *kind {
                    bail!("grid for {kind} contains a {} spec", spec.kind());
                }
                spec.validate()?;
            }
        }
        Ok(())
    }
}
