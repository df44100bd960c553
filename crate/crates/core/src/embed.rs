//! Exact t-SNE and cohort summaries over 2-D embeddings.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::MtsDataset;
use crate::rng::{self, streams};
use crate::{Error, Result};

const BISECTION_STEPS: usize = 50;
/// Entropy tolerance (nats) of the bandwidth search.
const ENTROPY_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            learning_rate: 200.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneOutput {
    /// `n x 2`.
    pub coords: DMatrix<f64>,
    /// KL(P || Q) after each iteration.
    pub kl_trace: Vec<f64>,
    /// Achieved conditional perplexity per point.
    pub perplexities: Vec<f64>,
    /// Joint affinities.
    pub p: DMatrix<f64>,
}

pub fn tsne(x: &DMatrix<f64>, cfg: &TsneConfig) -> Result<TsneOutput> {
    let n = x.nrows();
    if n < 10 {
        return Err(Error::Config(format!("t-SNE needs at least 10 points, got {n}")));
    }
    if !(cfg.perplexity > 0.0 && cfg.perplexity < (n - 1) as f64 / 3.0) {
        return Err(Error::Config(format!(
            "perplexity {} must be in (0, {}) for n={n}",
            cfg.perplexity,
            (n - 1) as f64 / 3.0
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("t-SNE input contains non-finite values".into()));
    }

    let dist = pairwise_sq_distances(x);
    let (cond, perplexities) = conditional_affinities(&dist, cfg.perplexity);
    let mut p = (&cond + cond.transpose()) / (2.0 * n as f64);
    let total = p.sum();
    p /= total;
    for v in p.iter_mut() {
        *v = v.max(1e-300);
    }
    for i in 0..n {
        p[(i, i)] = 0.0;
    }

    let mut rng = rng::stream(cfg.seed, streams::TSNE);
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y = DMatrix::from_fn(n, 2, |_, _| normal.sample(&mut rng));
    let mut update = DMatrix::<f64>::zeros(n, 2);
    let mut gains = DMatrix::<f64>::from_element(n, 2, 1.0);
    let mut kl_trace = Vec::with_capacity(cfg.iterations);

    for iter in 0..cfg.iterations {
        let exaggeration = if iter < cfg.exaggeration_iters { cfg.early_exaggeration } else { 1.0 };
        let momentum = if iter < cfg.momentum_switch { cfg.initial_momentum } else { cfg.final_momentum };

        let num = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else {
                let dx = y[(i, 0)] - y[(j, 0)];
                let dy = y[(i, 1)] - y[(j, 1)];
                1.0 / (1.0 + dx * dx + dy * dy)
            }
        });
        let z = num.sum();

        let grad: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0; 2];
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let w = (exaggeration * p[(i, j)] - num[(i, j)] / z) * num[(i, j)];
                    g[0] += w * (y[(i, 0)] - y[(j, 0)]);
                    g[1] += w * (y[(i, 1)] - y[(j, 1)]);
                }
                [4.0 * g[0], 4.0 * g[1]]
            })
            .collect();

        for i in 0..n {
            for d in 0..2 {
                let g = grad[i][d];
                gains[(i, d)] = if (g > 0.0) != (update[(i, d)] > 0.0) {
                    gains[(i, d)] + 0.2
                } else {
                    (gains[(i, d)] * 0.8).max(0.01)
                };
                update[(i, d)] = momentum * update[(i, d)] - cfg.learning_rate * gains[(i, d)] * g;
                y[(i, d)] += update[(i, d)];
            }
        }
        let mean = y.row_mean();
        for mut row in y.row_iter_mut() {
            row -= &mean;
        }

        let kl: f64 = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j)
            .map(|(i, j)| {
                let pij = p[(i, j)];
                let qij = (num[(i, j)] / z).max(1e-300);
                pij * (pij / qij).ln()
            })
            .sum();
        kl_trace.push(kl);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("t-SNE diverged at iteration {}", iter + 1)));
        }
    }

    Ok(TsneOutput { coords: y, kl_trace, perplexities, p })
}

pub fn pairwise_sq_distances(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| crate::linalg::row_vec(x, i)).collect();
    DMatrix::from_fn(n, n, |i, j| crate::linalg::squared_distance(&rows[i], &rows[j]))
}

/// Row-stochastic `p_{j|i}` with per-point bandwidths found by bisection on
/// `ln beta` so that the entropy matches `ln(perplexity)`.
pub fn conditional_affinities(dist: &DMatrix<f64>, perplexity: f64) -> (DMatrix<f64>, Vec<f64>) {
    let n = dist.nrows();
    let target = perplexity.ln();
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let d: Vec<f64> = (0..n).map(|j| dist[(i, j)]).collect();
            let d_min = (0..n).filter(|&j| j != i).map(|j| d[j]).fold(f64::INFINITY, f64::min);
            let mut lo = -60.0_f64;
            let mut hi = 60.0_f64;
            let mut probs = vec![0.0; n];
            let mut entropy = 0.0;
            for _ in 0..BISECTION_STEPS {
                let mid = 0.5 * (lo + hi);
                entropy = row_entropy(&d, i, d_min, mid.exp(), &mut probs);
                if (entropy - target).abs() < ENTROPY_TOL {
                    break;
                }
                if entropy > target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            (probs, entropy.exp())
        })
        .collect();
    let mut p = DMatrix::zeros(n, n);
    let mut perp = Vec::with_capacity(n);
    for (i, (row, pp)) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            p[(i, j)] = v;
        }
        perp.push(pp);
    }
    (p, perp)
}

/// Fills `probs` with the conditional distribution of row `i` and returns
/// its Shannon entropy in nats.
fn row_entropy(d: &[f64], i: usize, d_min: f64, beta: f64, probs: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for (j, p) in probs.iter_mut().enumerate() {
        if j == i {
            *p = 0.0;
            continue;
        }
        let shifted = d[j] - d_min;
        *p = (-beta * shifted).exp();
        sum += *p;
        weighted += *p * shifted;
    }
    for p in probs.iter_mut() {
        *p /= sum;
    }
    sum.ln() + beta * weighted / sum
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding2D {
    pub ids: Vec<String>,
    /// `[x, y]` per point.
    pub coords: Vec<[f64; 2]>,
    pub labels: Vec<u8>,
    /// Representation the embedding came from, e.g. `PCA`.
    pub method: String,
}

impl Embedding2D {
    pub fn new(coords: &DMatrix<f64>, ids: Vec<String>, labels: Vec<u8>, method: impl Into<String>) -> Result<Self> {
        if coords.ncols() != 2 || coords.nrows() != ids.len() || ids.len() != labels.len() {
            return Err(Error::Shape("embedding, ids and labels must align, with 2 columns".into()));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("embedding coordinates must be finite".into()));
        }
        Ok(Self {
            ids,
            coords: (0..coords.nrows()).map(|i| [coords[(i, 0)], coords[(i, 1)]]).collect(),
            labels,
            method: method.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path.as_ref())?;
        wtr.write_record(["id", "x", "y", "label", "method"])?;
        for i in 0..self.len() {
            wtr.write_record([
                self.ids[i].clone(),
                format!("{}", self.coords[i][0]),
                format!("{}", self.coords[i][1]),
                self.labels[i].to_string(),
                self.method.clone(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path.as_ref())?;
        let mut out = Self { ids: vec![], coords: vec![], labels: vec![], method: String::new() };
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |msg: &str| Error::Parse { row: i + 2, msg: msg.into() };
            let num = |k: usize| rec.get(k).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| bad("bad coordinate"));
            out.ids.push(rec.get(0).ok_or_else(|| bad("missing id"))?.to_string());
            out.coords.push([num(1)?, num(2)?]);
            out.labels.push(rec.get(3).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad label"))?);
            out.method = rec.get(4).unwrap_or_default().to_string();
        }
        Ok(out)
    }
}

/// Point ids chosen for a cluster summary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection(pub HashSet<String>);

#[derive(Deserialize)]
#[serde(untagged)]
enum PolygonFile {
    Wrapped { polygon: Vec<[f64; 2]> },
    Bare(Vec<[f64; 2]>),
}

impl Selection {
    /// A JSON polygon (`{"polygon": [[x, y], ...]}` or a bare vertex list)
    /// selects the embedding points inside it; any other content is read as
    /// one id per line.
    pub fn parse(content: &str, emb: &Embedding2D) -> Result<Self> {
        let trimmed = content.trim_start();
        if trimmed.starts_with('{') || trimmed.starts_with('[') {
            let polygon = match serde_json::from_str::<PolygonFile>(content)? {
                PolygonFile::Wrapped { polygon } | PolygonFile::Bare(polygon) => polygon,
            };
            if polygon.len() < 3 {
                return Err(Error::Config("polygon needs at least 3 vertices".into()));
            }
            return Ok(Self::from_polygon(emb, &polygon));
        }
        Ok(Self(content.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect()))
    }

    pub fn from_file(path: impl AsRef<Path>, emb: &Embedding2D) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path.as_ref())?, emb)
    }

    pub fn from_polygon(emb: &Embedding2D, polygon: &[[f64; 2]]) -> Self {
        Self(
            emb.ids
                .iter()
                .zip(&emb.coords)
                .filter(|(_, p)| point_in_polygon(**p, polygon))
                .map(|(id, _)| id.clone())
                .collect(),
        )
    }
}

/// Even-odd ray casting.
pub fn point_in_polygon(p: [f64; 2], polygon: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let mut j = polygon.len() - 1;
    for i in 0..polygon.len() {
        let (a, b) = (polygon[i], polygon[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    PositiveIn,
    PositiveOut,
    NegativeIn,
    NegativeOut,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::PositiveIn, Group::PositiveOut, Group::NegativeIn, Group::NegativeOut];

    fn of(label: u8, selected: bool) -> Self {
        match (label, selected) {
            (1, true) => Group::PositiveIn,
            (1, false) => Group::PositiveOut,
            (_, true) => Group::NegativeIn,
            (_, false) => Group::NegativeOut,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::PositiveIn => "label1_in",
            Group::PositiveOut => "label1_out",
            Group::NegativeIn => "label0_in",
            Group::NegativeOut => "label0_out",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub group: Group,
    pub attribute: String,
    /// `None` when the group is empty.
    pub percent: Option<f64>,
    /// Records in the group with an observed non-zero value.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub group_sizes: Vec<(Group, usize)>,
    pub rows: Vec<SummaryRow>,
}

impl ClusterSummary {
    pub fn size(&self, group: Group) -> usize {
        self.group_sizes.iter().find(|(g, _)| *g == group).map_or(0, |(_, s)| *s)
    }

    pub fn get(&self, group: Group, attribute: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.group == group && r.attribute == attribute)
    }

    /// `group,attribute,percent,count`; group sizes appear as attribute
    /// `group_size` with the group's share of all points as percent.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let total: usize = self.group_sizes.iter().map(|(_, s)| s).sum();
        let mut wtr = csv::Writer::from_path(path.as_ref())?;
        wtr.write_record(["group", "attribute", "percent", "count"])?;
        for (g, s) in &self.group_sizes {
            let share = if total > 0 { 100.0 * *s as f64 / total as f64 } else { 0.0 };
            wtr.write_record([g.to_string(), "group_size".into(), format!("{share:.2}"), s.to_string()])?;
        }
        for r in &self.rows {
            let pct = r.percent.map_or_else(|| "NA".to_string(), |p| format!("{p:.2}"));
            wtr.write_record([r.group.to_string(), r.attribute.clone(), pct, r.count.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Per-attribute share of records with any observed non-zero value, split
/// by label and by membership in `selection`.
pub fn cluster_summary(emb: &Embedding2D, ds: &MtsDataset, selection: &Selection) -> Result<ClusterSummary> {
    if selection.0.is_empty() {
        return Err(Error::EmptySelection);
    }
    let emb_ids: HashSet<&str> = emb.ids.iter().map(String::as_str).collect();
    if let Some(stray) = selection.0.iter().find(|id| !emb_ids.contains(id.as_str())) {
        return Err(Error::Config(format!("selected id {stray:?} is not in the embedding")));
    }
    let by_id: HashMap<&str, usize> = ds.records().iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();

    let mut sizes: HashMap<Group, usize> = HashMap::new();
    let mut fired: HashMap<(Group, usize), usize> = HashMap::new();
    for (id, &label) in emb.ids.iter().zip(&emb.labels) {
        let &ri = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Config(format!("embedding id {id:?} is not in the dataset")))?;
        let rec = &ds.records()[ri];
        let group = Group::of(label, selection.0.contains(id));
        *sizes.entry(group).or_default() += 1;
        for a in 0..ds.n_attributes() {
            if (0..ds.window_len()).any(|t| rec.observed(a, t).is_some_and(|v| v != 0.0)) {
                *fired.entry((group, a)).or_default() += 1;
            }
        }
    }

    let mut rows = Vec::new();
    for group in Group::ALL {
        let size = sizes.get(&group).copied().unwrap_or(0);
        for (a, name) in ds.attribute_names().iter().enumerate() {
            let count = fired.get(&(group, a)).copied().unwrap_or(0);
            rows.push(SummaryRow {
                group,
                attribute: name.clone(),
                percent: (size > 0).then(|| 100.0 * count as f64 / size as f64),
                count,
            });
        }
    }
    Ok(ClusterSummary {
        group_sizes: Group::ALL.iter().map(|g| (*g, sizes.get(g).copied().unwrap_or(0))).collect(),
        rows,
    })
}
