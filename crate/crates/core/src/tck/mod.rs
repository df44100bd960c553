//! Time-series cluster kernel.
//!
//! An ensemble of Gaussian mixtures is fitted, one per
//! `(components, randomization)` pair, each on a random subset of records,
//! attributes and a contiguous time segment. The kernel between two
//! records is the sum over members of the inner products of their
//! posterior membership vectors, optionally normalised to unit diagonal.

mod gmm;

use std::path::Path;

use log::{info, warn};
use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng as _, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::MtsDataset;
use crate::rng;
use crate::{Error, Result};

pub use gmm::{fit_map_em, posterior, posterior_matrix, EmSettings, GmmPartition};

/// Sampling rule for the member subsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubsetSettings {
    pub record_frac: f64,
    /// Lower bound on the attribute subset size as a fraction of `D`.
    pub attribute_min_frac: f64,
    pub attribute_min: usize,
    pub segment_min: usize,
}

impl Default for SubsetSettings {
    fn default() -> Self {
        Self { record_frac: 0.8, attribute_min_frac: 0.2, attribute_min: 2, segment_min: 6 }
    }
}

/// What one ensemble member is fitted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub components: usize,
    /// 1-based randomization index.
    pub randomization: usize,
    /// Sorted indices into the training records.
    pub records: Vec<usize>,
    /// Sorted attribute indices.
    pub attributes: Vec<usize>,
    /// Inclusive, 0-based time segment.
    pub t_start: usize,
    pub t_end: usize,
    pub init_seed: u64,
}

impl PartitionConfig {
    pub fn segment_len(&self) -> usize {
        self.t_end + 1 - self.t_start
    }

    pub fn validate(&self, n: usize, d: usize, t: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("partition config: {msg}")));
        if self.components == 0 {
            return bad("components must be positive".into());
        }
        if self.records.is_empty() || self.attributes.is_empty() {
            return bad("record and attribute subsets must be non-empty".into());
        }
        if self.records.iter().any(|&i| i >= n) {
            return bad(format!("record index out of range for {n} records"));
        }
        if self.attributes.iter().any(|&a| a >= d) {
            return bad(format!("attribute index out of range for D={d}"));
        }
        if self.t_start > self.t_end || self.t_end >= t {
            return bad(format!("segment [{}, {}] outside [0, {t})", self.t_start, self.t_end));
        }
        Ok(())
    }
}

/// Draws the `(c_max - 1) * randomizations` member configurations, ordered by
/// components then randomization.
pub fn sample_partition_configs(
    n: usize,
    d: usize,
    t: usize,
    c_max: usize,
    randomizations: usize,
    master_seed: u64,
    subset: &SubsetSettings,
) -> Result<Vec<PartitionConfig>> {
    if c_max < 2 || randomizations < 1 {
        return Err(Error::Config(format!(
            "need C >= 2 and R >= 1, got C={c_max}, R={randomizations}"
        )));
    }
    if n < c_max {
        return Err(Error::EnsembleSize { records: n, components: c_max });
    }
    if d == 0 || t == 0 {
        return Err(Error::Config("D and T must be positive".into()));
    }
    if !(subset.record_frac > 0.0 && subset.record_frac <= 1.0) {
        return Err(Error::Config(format!("record_frac must be in (0, 1], got {}", subset.record_frac)));
    }
    let n_sub = ((subset.record_frac * n as f64).ceil() as usize).clamp(1, n);
    let attr_lo = subset
        .attribute_min
        .max((subset.attribute_min_frac * d as f64).ceil() as usize)
        .clamp(1, d);
    let seg_lo = subset.segment_min.clamp(1, t);

    let mut out = Vec::with_capacity((c_max - 1) * randomizations);
    for c in 2..=c_max {
        for r in 1..=randomizations {
            let mut rng = rng::partition_stream(master_seed, c, r);
            let mut records = index::sample(&mut rng, n, n_sub).into_vec();
            records.sort_unstable();
            let n_attr = rng.random_range(attr_lo..=d);
            let mut attributes = index::sample(&mut rng, d, n_attr).into_vec();
            attributes.sort_unstable();
            let len = rng.random_range(seg_lo..=t);
            let t_start = rng.random_range(0..=t - len);
            out.push(PartitionConfig {
                components: c.min(n_sub),
                randomization: r,
                records,
                attributes,
                t_start,
                t_end: t_start + len - 1,
                init_seed: rng.next_u64(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TckSettings {
    /// Maximum number of mixture components `C`.
    pub max_components: usize,
    /// Randomizations per component count `R`.
    pub randomizations: usize,
    pub em: EmSettings,
    pub subset: SubsetSettings,
    pub normalize: bool,
    /// Drop failed members with a warning instead of failing the build.
    pub drop_failed: bool,
}

impl Default for TckSettings {
    fn default() -> Self {
        Self {
            max_components: 40,
            randomizations: 30,
            em: EmSettings::default(),
            subset: SubsetSettings::default(),
            normalize: true,
            drop_failed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionFailure {
    pub components: usize,
    pub randomization: usize,
    pub message: String,
}

/// The training kernel plus everything needed for out-of-sample rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TckKernel {
    pub k: DMatrix<f64>,
    pub ensemble: Vec<GmmPartition>,
    pub train_ids: Vec<String>,
    pub normalized: bool,
    pub failures: Vec<PartitionFailure>,
    /// Unnormalised diagonal.
    self_similarity: Vec<f64>,
    train: MtsDataset,
}

impl TckKernel {
    pub fn n_partitions(&self) -> usize {
        self.ensemble.len()
    }

    pub fn train(&self) -> &MtsDataset {
        &self.train
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path.as_ref())?);
        Ok(serde_json::from_reader(file)?)
    }
}

/// Fits the ensemble on `train` and sums posterior inner products.
///
/// Members are fitted in parallel, but their contributions are summed in
/// configuration order, so the result is bit-identical for any thread count.
pub fn build_tck(train: &MtsDataset, settings: &TckSettings, master_seed: u64) -> Result<TckKernel> {
    if train.is_empty() {
        return Err(Error::InvalidDataset("training set is empty".into()));
    }
    settings.em.validate()?;
    let configs = sample_partition_configs(
        train.n(),
        train.n_attributes(),
        train.window_len(),
        settings.max_components,
        settings.randomizations,
        master_seed,
        &settings.subset,
    )?;
    info!("fitting {} partitions on {} records", configs.len(), train.n());

    let fitted: Vec<Result<(GmmPartition, DMatrix<f64>)>> = configs
        .par_iter()
        .map(|cfg| {
            let g = fit_map_em(train, cfg, &settings.em).map_err(|e| Error::Partition {
                components: cfg.components,
                randomization: cfg.randomization,
                source: Box::new(e),
            })?;
            let post = posterior_matrix(train, &g);
            Ok((g, post))
        })
        .collect();

    let n = train.n();
    let mut k = DMatrix::zeros(n, n);
    let mut ensemble = Vec::with_capacity(fitted.len());
    let mut failures = Vec::new();
    for result in fitted {
        match result {
            Ok((g, post)) => {
                k.gemm(1.0, &post, &post.transpose(), 1.0);
                ensemble.push(g);
            }
            Err(Error::Partition { components, randomization, source }) if settings.drop_failed => {
                warn!("dropping partition (c={components}, r={randomization}): {source}");
                failures.push(PartitionFailure { components, randomization, message: source.to_string() });
            }
            Err(e) => return Err(e),
        }
    }
    if ensemble.is_empty() {
        return Err(Error::Numerical("every partition failed".into()));
    }
    info!("kernel built from {} partitions ({} dropped)", ensemble.len(), failures.len());

    let self_similarity: Vec<f64> = (0..n).map(|i| k[(i, i)]).collect();
    if settings.normalize {
        normalize_kernel(&mut k, &self_similarity, &self_similarity);
        for i in 0..n {
            k[(i, i)] = 1.0;
        }
    }
    Ok(TckKernel {
        k,
        ensemble,
        train_ids: train.ids(),
        normalized: settings.normalize,
        failures,
        self_similarity,
        train: train.clone(),
    })
}

fn normalize_kernel(k: &mut DMatrix<f64>, row_self: &[f64], col_self: &[f64]) {
    for j in 0..k.ncols() {
        for i in 0..k.nrows() {
            k[(i, j)] /= (row_self[i] * col_self[j]).sqrt();
        }
    }
}

/// `n_test x n_train` kernel between `test` and the training records.
pub fn kernel_rows(kernel: &TckKernel, test: &MtsDataset) -> Result<DMatrix<f64>> {
    Ok(kernel_rows_with_diag(kernel, test)?.0)
}

/// Kernel rows plus `k(x, x)` of each test record on the same scale.
pub fn kernel_rows_with_diag(kernel: &TckKernel, test: &MtsDataset) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let train = &kernel.train;
    if test.n_attributes() != train.n_attributes() || test.window_len() != train.window_len() {
        return Err(Error::Shape(format!(
            "test data is {}x{}, training data is {}x{}",
            test.n_attributes(),
            test.window_len(),
            train.n_attributes(),
            train.window_len()
        )));
    }
    let parts: Vec<(DMatrix<f64>, DMatrix<f64>)> = kernel
        .ensemble
        .par_iter()
        .map(|g| (posterior_matrix(test, g), posterior_matrix(train, g)))
        .collect();
    let mut rows = DMatrix::zeros(test.n(), train.n());
    let mut self_sim = vec![0.0; test.n()];
    for (pt, ptr) in &parts {
        rows.gemm(1.0, pt, &ptr.transpose(), 1.0);
        for (i, s) in self_sim.iter_mut().enumerate() {
            *s += pt.row(i).norm_squared();
        }
    }
    if kernel.normalized {
        normalize_kernel(&mut rows, &self_sim, &kernel.self_similarity);
        self_sim.fill(1.0);
    }
    Ok((rows, self_sim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::MtsRecord;
    use crate::synth::{generate, SynthSpec};

    fn small_settings(c: usize, r: usize) -> TckSettings {
        TckSettings { max_components: c, randomizations: r, ..TckSettings::default() }
    }

    #[test]
    fn default_ensemble_size() {
        let cfgs = sample_partition_configs(100, 5, 7, 40, 30, 1, &SubsetSettings::default()).unwrap();
        assert_eq!(cfgs.len(), 1170);
        assert!(cfgs.iter().all(|c| c.records.len() == 80));
        assert!(cfgs.iter().all(|c| (2..=5).contains(&c.attributes.len())));
        assert!(cfgs.iter().all(|c| c.segment_len() >= 6 && c.t_end < 7));
    }

    #[test]
    fn smallest_ensemble() {
        let cfgs = sample_partition_configs(10, 3, 4, 2, 1, 1, &SubsetSettings::default()).unwrap();
        assert_eq!(cfgs.len(), 1);
        assert_eq!(cfgs[0].components, 2);
        assert_eq!(cfgs[0].segment_len(), 4);
    }

    #[test]
    fn configs_are_deterministic() {
        let s = SubsetSettings::default();
        let a = sample_partition_configs(50, 5, 7, 6, 3, 42, &s).unwrap();
        let b = sample_partition_configs(50, 5, 7, 6, 3, 42, &s).unwrap();
        let c = sample_partition_configs(50, 5, 7, 6, 3, 43, &s).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn too_few_records_for_ensemble() {
        let err = sample_partition_configs(3, 5, 7, 4, 1, 0, &SubsetSettings::default());
        assert!(matches!(err, Err(Error::EnsembleSize { records: 3, components: 4 })));
    }

    #[test]
    fn duplicate_records_have_unit_similarity() {
        let (ds, _) = generate(&SynthSpec::two_moons_mts(10, 0.2, 3)).unwrap();
        let mut records = ds.records().to_vec();
        let r0 = &records[0];
        records.push(MtsRecord::new("twin", r0.values().clone(), r0.mask().clone(), r0.label()).unwrap());
        let ds = MtsDataset::new(records, ds.attribute_names().to_vec(), 7).unwrap();
        let k = build_tck(&ds, &small_settings(4, 2), 5).unwrap();
        assert!((k.k[(0, ds.n() - 1)] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn within_cluster_similarity_dominates() {
        let (ds, truth) = generate(&SynthSpec::two_moons_mts(15, 0.0, 8)).unwrap();
        let k = build_tck(&ds, &small_settings(5, 3), 2).unwrap();
        let (mut within, mut nw, mut between, mut nb) = (0.0, 0, 0.0, 0);
        for i in 0..ds.n() {
            for j in 0..ds.n() {
                if i == j {
                    continue;
                }
                if truth[i] == truth[j] {
                    within += k.k[(i, j)];
                    nw += 1;
                } else {
                    between += k.k[(i, j)];
                    nb += 1;
                }
            }
        }
        assert!(within / nw as f64 > between / nb as f64);
    }

    #[test]
    fn kernel_is_symmetric_psd_with_unit_diagonal() {
        let (ds, _) = generate(&SynthSpec::two_moons_mts(15, 0.3, 9)).unwrap();
        let k = build_tck(&ds, &small_settings(4, 2), 1).unwrap();
        let (vals, _) = crate::linalg::sym_eigen_desc(&k.k);
        assert!(vals[vals.len() - 1] >= -1e-8 * vals[0]);
        assert!((&k.k - k.k.transpose()).amax() <= 1e-10);
        assert!((0..ds.n()).all(|i| (k.k[(i, i)] - 1.0).abs() < 1e-9));
    }

    #[test]
    fn unnormalized_kernel_is_bounded_by_partition_count() {
        let (ds, _) = generate(&SynthSpec::two_moons_mts(10, 0.3, 9)).unwrap();
        let settings = TckSettings { normalize: false, ..small_settings(3, 2) };
        let k = build_tck(&ds, &settings, 1).unwrap();
        let q = k.n_partitions() as f64;
        assert!(k.k.iter().all(|&v| (0.0..=q + 1e-12).contains(&v)));
    }

    #[test]
    fn test_row_of_training_record_matches_kernel_row() {
        let (ds, _) = generate(&SynthSpec::two_moons_mts(10, 0.2, 4)).unwrap();
        let k = build_tck(&ds, &small_settings(3, 2), 7).unwrap();
        let rows = kernel_rows(&k, &ds.subset(&[3])).unwrap();
        for j in 0..ds.n() {
            assert!((rows[(0, j)] - k.k[(3, j)]).abs() < 1e-6);
        }
    }

    #[test]
    fn blank_test_record_gets_finite_prior_similarities() {
        let (ds, _) = generate(&SynthSpec::two_moons_mts(10, 0.0, 4)).unwrap();
        let k = build_tck(&ds, &small_settings(3, 2), 7).unwrap();
        let blank = MtsRecord::new("b", DMatrix::zeros(5, 7), DMatrix::from_element(5, 7, false), 0).unwrap();
        let test = MtsDataset::new(vec![blank], ds.attribute_names().to_vec(), 7).unwrap();
        let rows = kernel_rows(&k, &test).unwrap();
        assert!(rows.iter().all(|v| v.is_finite() && *v <= 1.0 + 1e-12));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (ds, _) = generate(&SynthSpec::two_moons_mts(10, 0.0, 4)).unwrap();
        let k = build_tck(&ds, &small_settings(2, 1), 7).unwrap();
        let mut spec = SynthSpec::two_moons_mts(2, 0.0, 1);
        spec.window_len = 5;
        for c in &mut spec.clusters {
            c.mean.iter_mut().for_each(|row| row.truncate(5));
        }
        let (other, _) = generate(&spec).unwrap();
        assert!(matches!(kernel_rows(&k, &other), Err(Error::Shape(_))));
    }

    #[test]
    fn model_json_round_trip_preserves_rows() {
        let (ds, _) = generate(&SynthSpec::two_moons_mts(8, 0.2, 4)).unwrap();
        let k = build_tck(&ds, &small_settings(3, 1), 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        k.save_json(&path).unwrap();
        let back = TckKernel::load_json(&path).unwrap();
        assert_eq!(back, k);
        assert_eq!(kernel_rows(&back, &ds).unwrap(), kernel_rows(&k, &ds).unwrap());
    }
}
