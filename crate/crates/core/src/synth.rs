//! Synthetic labeled MTS with known cluster structure and MCAR missingness.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{MtsDataset, MtsRecord};
use crate::rng::{self, streams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    /// Number of records drawn from this cluster.
    pub n: usize,
    /// Binary label assigned to every record of the cluster.
    pub label: u8,
    /// Time-dependent mean curve per attribute, `D` rows of `T` values.
    pub mean: Vec<Vec<f64>>,
    /// Per-attribute standard deviation.
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub attribute_names: Vec<String>,
    pub window_len: usize,
    pub clusters: Vec<ClusterSpec>,
    /// Per-cell MCAR probability, in `[0, 1)`.
    pub missing_rate: f64,
    /// Attributes whose draws are thresholded at 0.5 into `{0, 1}` flags.
    pub binary: Vec<bool>,
    pub seed: u64,
}

impl SynthSpec {
    /// The "two-moons-MTS" fixture: `D = 5`, `T = 7`, a sinusoidal cluster
    /// (label 0) against a linear-trend cluster (label 1), `sigma = 0.5`.
    /// The last attribute is a binary presence flag.
    pub fn two_moons_mts(n_per_cluster: usize, missing_rate: f64, seed: u64) -> Self {
        let (d, t) = (5usize, 7usize);
        let sinusoid = (0..d)
            .map(|a| {
                (0..t)
                    .map(|s| (2.0 * PI * s as f64 / t as f64 + a as f64 * PI / d as f64).sin())
                    .collect()
            })
            .collect();
        let linear = (0..d)
            .map(|a| {
                (0..t)
                    .map(|s| {
                        let ramp = -1.0 + 2.0 * s as f64 / (t - 1) as f64;
                        if a % 2 == 0 { ramp } else { -ramp }
                    })
                    .collect()
            })
            .collect();
        Self {
            attribute_names: (0..d).map(|a| format!("x{a}")).collect(),
            window_len: t,
            clusters: vec![
                ClusterSpec { n: n_per_cluster, label: 0, mean: sinusoid, std: vec![0.5; d] },
                ClusterSpec { n: n_per_cluster, label: 1, mean: linear, std: vec![0.5; d] },
            ],
            missing_rate,
            binary: (0..d).map(|a| a == d - 1).collect(),
            seed,
        }
    }

    pub fn n(&self) -> usize {
        self.clusters.iter().map(|c| c.n).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.attribute_names.len();
        let t = self.window_len;
        if d == 0 || t == 0 {
            return Err(Error::Config("synthetic spec needs D >= 1 and T >= 1".into()));
        }
        if self.clusters.is_empty() {
            return Err(Error::Config("synthetic spec needs at least one cluster".into()));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::Config(format!(
                "missing_rate must be in [0, 1), got {}",
                self.missing_rate
            )));
        }
        if self.binary.len() != d {
            return Err(Error::Config(format!("binary flags: expected {d}, got {}", self.binary.len())));
        }
        for (k, c) in self.clusters.iter().enumerate() {
            if c.label > 1 {
                return Err(Error::Config(format!("cluster {k}: label must be 0 or 1")));
            }
            if c.mean.len() != d || c.mean.iter().any(|row| row.len() != t) {
                return Err(Error::Config(format!("cluster {k}: mean must be {d}x{t}")));
            }
            if c.std.len() != d || c.std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                return Err(Error::Config(format!("cluster {k}: std must be {d} non-negative values")));
            }
        }
        Ok(())
    }
}

/// Draws the dataset; the second value is each record's cluster index.
///
/// Record order is shuffled so ids carry no cluster information.
pub fn generate(spec: &SynthSpec) -> Result<(MtsDataset, Vec<usize>)> {
    spec.validate()?;
    let d = spec.attribute_names.len();
    let t = spec.window_len;
    let mut rng = rng::stream(spec.seed, streams::SYNTH);

    let mut slots: Vec<usize> =
        spec.clusters.iter().enumerate().flat_map(|(k, c)| std::iter::repeat_n(k, c.n)).collect();
    slots.shuffle(&mut rng);

    let width = slots.len().max(1).to_string().len();
    let mut records = Vec::with_capacity(slots.len());
    for (i, &k) in slots.iter().enumerate() {
        let cluster = &spec.clusters[k];
        let mut values = DMatrix::zeros(d, t);
        let mut mask = DMatrix::from_element(d, t, true);
        for a in 0..d {
            for s in 0..t {
                let z: f64 = StandardNormal.sample(&mut rng);
                let draw = cluster.mean[a][s] + cluster.std[a] * z;
                values[(a, s)] = if spec.binary[a] { f64::from(u8::from(draw > 0.5)) } else { draw };
                if spec.missing_rate > 0.0 && rng.random::<f64>() < spec.missing_rate {
                    mask[(a, s)] = false;
                }
            }
        }
        records.push(MtsRecord::new(format!("s{i:0width$}"), values, mask, cluster.label)?);
    }
    Ok((MtsDataset::new(records, spec.attribute_names.clone(), t)?, slots))
}

/// Writes the sidecar `id,cluster` file.
pub fn write_ground_truth(path: impl AsRef<Path>, ds: &MtsDataset, clusters: &[usize]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path.as_ref())?;
    wtr.write_record(["id", "cluster"])?;
    for (r, c) in ds.records().iter().zip(clusters) {
        wtr.write_record([r.id.as_str(), &c.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<Vec<(String, usize)>> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    rdr.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            let cluster = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse {
                row: i + 2,
                msg: "cluster must be a non-negative integer".into(),
            })?;
            Ok((rec.get(0).unwrap_or_default().to_string(), cluster))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{dataset_to_stays, read_raw_csv, window_align, write_raw_csv_to};

    #[test]
    fn no_missingness_means_full_masks() {
        let (ds, truth) = generate(&SynthSpec::two_moons_mts(20, 0.0, 4)).unwrap();
        assert_eq!(ds.n(), 40);
        assert_eq!(truth.len(), 40);
        assert!(ds.records().iter().all(|r| r.mask().iter().all(|&m| m)));
    }

    #[test]
    fn missing_fraction_tracks_rate() {
        // 300 * 5 * 7 = 10_500 cells.
        let (ds, _) = generate(&SynthSpec::two_moons_mts(150, 0.3, 11)).unwrap();
        let cells = ds.n() * 35;
        let missing: usize = ds.records().iter().map(|r| 35 - r.observed_count()).sum();
        let frac = missing as f64 / cells as f64;
        assert!((frac - 0.3).abs() <= 0.02, "missing fraction {frac}");
    }

    #[test]
    fn cluster_cell_means_match_spec() {
        let spec = SynthSpec::two_moons_mts(400, 0.0, 5);
        let (ds, truth) = generate(&spec).unwrap();
        for (k, cluster) in spec.clusters.iter().enumerate() {
            let members: Vec<_> =
                ds.records().iter().zip(&truth).filter(|(_, &c)| c == k).map(|(r, _)| r).collect();
            let n = members.len() as f64;
            for a in 0..4 {
                for s in 0..7 {
                    let mean = members.iter().map(|r| r.values()[(a, s)]).sum::<f64>() / n;
                    let bound = 3.0 * cluster.std[a] / n.sqrt();
                    assert!(
                        (mean - cluster.mean[a][s]).abs() <= bound,
                        "cluster {k} cell ({a},{s}): {mean} vs {}",
                        cluster.mean[a][s]
                    );
                }
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&SynthSpec::two_moons_mts(10, 0.2, 1)).unwrap();
        let b = generate(&SynthSpec::two_moons_mts(10, 0.2, 1)).unwrap();
        let c = generate(&SynthSpec::two_moons_mts(10, 0.2, 2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn binary_channel_is_flag_valued() {
        let (ds, _) = generate(&SynthSpec::two_moons_mts(30, 0.0, 8)).unwrap();
        assert!(ds.records().iter().all(|r| r.values().row(4).iter().all(|&v| v == 0.0 || v == 1.0)));
    }

    #[test]
    fn csv_round_trip_of_generated_stays() {
        let (ds, _) = generate(&SynthSpec::two_moons_mts(5, 0.3, 21)).unwrap();
        let stays = dataset_to_stays(&ds);
        let mut buf = Vec::new();
        write_raw_csv_to(&mut buf, &stays, ds.attribute_names()).unwrap();
        let back = read_raw_csv(buf.as_slice(), ds.attribute_names()).unwrap();
        assert_eq!(back, stays);
        assert_eq!(window_align(&back, ds.attribute_names(), 7).unwrap(), ds);
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let mut spec = SynthSpec::two_moons_mts(5, 0.0, 0);
        spec.missing_rate = 1.0;
        assert!(generate(&spec).is_err());
        let mut spec = SynthSpec::two_moons_mts(5, 0.0, 0);
        spec.clusters[0].mean.pop();
        assert!(generate(&spec).is_err());
    }
}
