//! MAP-EM for one ensemble member.
//!
//! Each component `g` has a weight, a time-dependent mean curve per
//! attribute and a time-constant variance per attribute. A record's
//! likelihood is the product of Gaussian densities over its observed cells
//! inside the member's attribute subset and time segment; masked cells are
//! never read.
//!
//! Priors, per attribute `v` of the subset:
//!
//! * mean curve `mu_gv ~ N(m_v, s2_v * K)` with `m_v` the per-time empirical
//!   mean, `s2_v` the empirical variance and
//!   `K[t, t'] = b0 * exp(-a0 * (t - t')^2)`;
//! * variance with log-density `-(n0 / 2) ln sigma2 - n0 s2_v / (2 sigma2)`,
//!   an inverse-gamma shape that shrinks towards `s2_v` with strength `n0`.
//!
//! The M-step updates weights, then means given the current variances, then
//! variances given the new means; every step maximises the expected
//! complete-data log-posterior, so the log-posterior never decreases.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::{MtsDataset, MtsRecord};
use crate::linalg::{spd_inverse, spd_solve};
use crate::rng::Rng;
use crate::{Error, Result};

use super::PartitionConfig;

const LN_2PI: f64 = 1.837_877_066_409_345_3;
/// Components with less responsibility mass than this are re-seeded.
const EMPTY_COMPONENT_MASS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmSettings {
    /// Relative log-posterior change that counts as converged.
    pub tol: f64,
    pub max_iter: usize,
    pub var_floor: f64,
    /// `a0`: inverse squared length scale of the mean prior.
    pub prior_length: f64,
    /// `b0`: amplitude of the mean prior covariance.
    pub prior_amplitude: f64,
    /// `n0 = prior_strength_frac * |record subset|`.
    pub prior_strength_frac: f64,
}

impl Default for EmSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 100,
            var_floor: 1e-6,
            prior_length: 1.0,
            prior_amplitude: 1.0,
            prior_strength_frac: 0.01,
        }
    }
}

impl EmSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tol > 0.0
            && self.max_iter >= 1
            && self.var_floor > 0.0
            && self.prior_length > 0.0
            && self.prior_amplitude > 0.0
            && self.prior_strength_frac >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid EM settings: {self:?}")))
        }
    }
}

/// A fitted ensemble member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmPartition {
    pub config: PartitionConfig,
    pub weights: Vec<f64>,
    /// One `|attributes| x segment_len` matrix per component.
    pub means: Vec<DMatrix<f64>>,
    /// `components x |attributes|`.
    pub variances: DMatrix<f64>,
    pub converged: bool,
    /// Number of M-steps applied.
    pub n_iter: usize,
    /// Log-posterior of the parameters after 0, 1, ... M-steps.
    pub log_posterior: Vec<f64>,
    /// M-step indices after which an empty component was re-seeded; the
    /// log-posterior may drop across these steps.
    pub reseeded_at: Vec<usize>,
}

impl GmmPartition {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    /// `log w_g + log p(x | g)` over the record's observed cells, plus the
    /// number of observed cells that entered the sum.
    pub(crate) fn log_joint(&self, rec: &MtsRecord, out: &mut [f64]) -> usize {
        let cfg = &self.config;
        for (g, o) in out.iter_mut().enumerate() {
            *o = self.weights[g].ln();
        }
        let mut observed = 0;
        for (vi, &attr) in cfg.attributes.iter().enumerate() {
            for (ti, t) in (cfg.t_start..=cfg.t_end).enumerate() {
                let Some(x) = rec.observed(attr, t) else { continue };
                observed += 1;
                for (g, o) in out.iter_mut().enumerate() {
                    let var = self.variances[(g, vi)];
                    let diff = x - self.means[g][(vi, ti)];
                    *o -= 0.5 * (LN_2PI + var.ln() + diff * diff / var);
                }
            }
        }
        observed
    }
}

/// Membership probabilities of `rec` under `gmm`.
///
/// A record with no observed cell inside the member's subsets gets the
/// component weights.
pub fn posterior(rec: &MtsRecord, gmm: &GmmPartition) -> Vec<f64> {
    let mut lj = vec![0.0; gmm.n_components()];
    if gmm.log_joint(rec, &mut lj) == 0 {
        return gmm.weights.clone();
    }
    softmax_in_place(&mut lj);
    lj
}

/// `n x c` posterior matrix for every record of `ds`.
pub fn posterior_matrix(ds: &MtsDataset, gmm: &GmmPartition) -> DMatrix<f64> {
    let c = gmm.n_components();
    let mut out = DMatrix::zeros(ds.n(), c);
    for (i, rec) in ds.records().iter().enumerate() {
        for (g, p) in posterior(rec, gmm).into_iter().enumerate() {
            out[(i, g)] = p;
        }
    }
    out
}

/// Normalises log-weights into probabilities; returns the log-sum-exp.
fn softmax_in_place(v: &mut [f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
    max + sum.ln()
}

/// Observed cells of the member's subsets, record-major.
struct SubsetData {
    n: usize,
    v: usize,
    l: usize,
    x: Vec<f64>,
    obs: Vec<bool>,
}

impl SubsetData {
    fn gather(ds: &MtsDataset, cfg: &PartitionConfig) -> Self {
        let (v, l) = (cfg.attributes.len(), cfg.segment_len());
        let n = cfg.records.len();
        let mut x = vec![0.0; n * v * l];
        let mut obs = vec![false; n * v * l];
        for (i, &ri) in cfg.records.iter().enumerate() {
            let rec = &ds.records()[ri];
            for (vi, &a) in cfg.attributes.iter().enumerate() {
                for ti in 0..l {
                    let k = (i * v + vi) * l + ti;
                    if let Some(val) = rec.observed(a, cfg.t_start + ti) {
                        x[k] = val;
                        obs[k] = true;
                    }
                }
            }
        }
        Self { n, v, l, x, obs }
    }

    #[inline]
    fn idx(&self, i: usize, vi: usize, ti: usize) -> usize {
        (i * self.v + vi) * self.l + ti
    }

    fn has_observation(&self, i: usize) -> bool {
        let w = self.v * self.l;
        self.obs[i * w..(i + 1) * w].iter().any(|&o| o)
    }
}

/// Empirical prior hyperparameters per attribute.
struct Priors {
    /// Per-time empirical means, `v x l`.
    mean: DMatrix<f64>,
    /// Empirical variance per attribute.
    var: Vec<f64>,
    /// Inverse prior covariance of each attribute's mean curve.
    cov_inv: Vec<DMatrix<f64>>,
    strength: f64,
}

impl Priors {
    fn estimate(data: &SubsetData, em: &EmSettings) -> Result<Self> {
        let (v, l) = (data.v, data.l);
        let mut mean = DMatrix::zeros(v, l);
        let mut var = vec![1.0; v];
        for vi in 0..v {
            let mut all = Vec::new();
            let mut per_t = vec![(0.0, 0usize); l];
            for i in 0..data.n {
                for (ti, acc) in per_t.iter_mut().enumerate() {
                    let k = data.idx(i, vi, ti);
                    if data.obs[k] {
                        acc.0 += data.x[k];
                        acc.1 += 1;
                        all.push(data.x[k]);
                    }
                }
            }
            let overall = if all.is_empty() { 0.0 } else { all.iter().sum::<f64>() / all.len() as f64 };
            for (ti, &(s, c)) in per_t.iter().enumerate() {
                mean[(vi, ti)] = if c > 0 { s / c as f64 } else { overall };
            }
            if !all.is_empty() {
                let s2 = all.iter().map(|x| (x - overall) * (x - overall)).sum::<f64>() / all.len() as f64;
                var[vi] = s2.max(em.var_floor);
            }
        }
        let smooth = DMatrix::from_fn(l, l, |a, b| {
            let d = a as f64 - b as f64;
            em.prior_amplitude * (-em.prior_length * d * d).exp()
        });
        let cov_inv = var
            .iter()
            .map(|&s2| {
                let mut cov = &smooth * s2;
                for t in 0..l {
                    cov[(t, t)] += 1e-9 * s2 * em.prior_amplitude;
                }
                spd_inverse(cov)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mean,
            var,
            cov_inv,
            strength: em.prior_strength_frac * data.n as f64,
        })
    }

    fn log_density(&self, means: &[DMatrix<f64>], variances: &DMatrix<f64>) -> f64 {
        let mut total = 0.0;
        for (g, mu) in means.iter().enumerate() {
            for vi in 0..mu.nrows() {
                let diff: DVector<f64> = (mu.row(vi) - self.mean.row(vi)).transpose();
                total -= 0.5 * (diff.transpose() * &self.cov_inv[vi] * &diff)[(0, 0)];
                let s2 = variances[(g, vi)];
                total -= 0.5 * self.strength * (s2.ln() + self.var[vi] / s2);
            }
        }
        total
    }
}

struct Params {
    weights: Vec<f64>,
    means: Vec<DMatrix<f64>>,
    variances: DMatrix<f64>,
}

/// Fits the member described by `cfg` to its subsets of `ds`.
pub fn fit_map_em(ds: &MtsDataset, cfg: &PartitionConfig, em: &EmSettings) -> Result<GmmPartition> {
    em.validate()?;
    cfg.validate(ds.n(), ds.n_attributes(), ds.window_len())?;
    let data = SubsetData::gather(ds, cfg);
    let candidates: Vec<usize> = (0..data.n).filter(|&i| data.has_observation(i)).collect();
    if candidates.is_empty() {
        return Err(Error::DegenerateInput(
            "no record has an observed cell in the partition's subsets".into(),
        ));
    }
    let c = cfg.components.min(candidates.len());
    if c < cfg.components {
        warn!(
            "partition (c={}, r={}): clamping to {c} components ({} records with observations)",
            cfg.components,
            cfg.randomization,
            candidates.len()
        );
    }

    let priors = Priors::estimate(&data, em)?;
    let mut rng = Rng::seed_from_u64(cfg.init_seed);
    let mut params = initialise(&data, &priors, &candidates, c, &mut rng);

    let mut resp = DMatrix::zeros(data.n, c);
    let mut trace = Vec::new();
    let mut reseeded_at = Vec::new();
    let mut spent = vec![false; c];
    let mut converged = false;
    let mut n_iter = 0;
    loop {
        let loglik = e_step(&data, &params, &mut resp);
        let logpost = loglik + priors.log_density(&params.means, &params.variances);
        if !logpost.is_finite() {
            return Err(Error::Numerical(format!(
                "log-posterior is not finite after {n_iter} M-steps"
            )));
        }
        trace.push(logpost);
        if let [.., prev, last] = trace[..] {
            let reseeded = reseeded_at.last() == Some(&(n_iter - 1));
            if !reseeded && (last - prev).abs() <= em.tol * prev.abs() {
                converged = true;
                break;
            }
        }
        if n_iter == em.max_iter {
            break;
        }
        if m_step(&data, &priors, em, &resp, &mut params, &candidates, &mut spent, &mut rng) {
            reseeded_at.push(n_iter);
        }
        n_iter += 1;
    }
    debug!(
        "partition (c={}, r={}): {n_iter} iterations, converged={converged}",
        cfg.components, cfg.randomization
    );

    Ok(GmmPartition {
        config: cfg.clone(),
        weights: params.weights,
        means: params.means,
        variances: params.variances,
        converged,
        n_iter,
        log_posterior: trace,
        reseeded_at,
    })
}

/// Mean-imputed vector of subset record `i`, `v x l`.
fn imputed(data: &SubsetData, priors: &Priors, i: usize) -> DMatrix<f64> {
    DMatrix::from_fn(data.v, data.l, |vi, ti| {
        let k = data.idx(i, vi, ti);
        if data.obs[k] { data.x[k] } else { priors.mean[(vi, ti)] }
    })
}

/// k-means++ seeding over mean-imputed records.
fn initialise(data: &SubsetData, priors: &Priors, candidates: &[usize], c: usize, rng: &mut Rng) -> Params {
    let vectors: Vec<DMatrix<f64>> = candidates.iter().map(|&i| imputed(data, priors, i)).collect();
    let mut chosen = vec![rng.random_range(0..candidates.len())];
    let mut dist: Vec<f64> =
        vectors.iter().map(|v| (v - &vectors[chosen[0]]).norm_squared()).collect();
    while chosen.len() < c {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = dist.len() - 1;
            for (j, &d) in dist.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = j;
                    break;
                }
                target -= d;
            }
            while chosen.contains(&pick) {
                pick = (pick + 1) % dist.len();
            }
            pick
        } else {
            // All remaining candidates coincide with a chosen center.
            let free: Vec<usize> = (0..dist.len()).filter(|j| !chosen.contains(j)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (d, v) in dist.iter_mut().zip(&vectors) {
            *d = d.min((v - &vectors[next]).norm_squared());
        }
    }
    Params {
        weights: vec![1.0 / c as f64; c],
        means: chosen.iter().map(|&j| vectors[j].clone()).collect(),
        variances: DMatrix::from_fn(c, data.v, |_, vi| priors.var[vi]),
    }
}

/// Fills `resp` with responsibilities; returns the observed-data
/// log-likelihood.
fn e_step(data: &SubsetData, params: &Params, resp: &mut DMatrix<f64>) -> f64 {
    let c = params.weights.len();
    let log_w: Vec<f64> = params.weights.iter().map(|w| w.ln()).collect();
    let log_var = params.variances.map(f64::ln);
    let mut row = vec![0.0; c];
    let mut loglik = 0.0;
    for i in 0..data.n {
        row.copy_from_slice(&log_w);
        for vi in 0..data.v {
            for ti in 0..data.l {
                let k = data.idx(i, vi, ti);
                if !data.obs[k] {
                    continue;
                }
                let x = data.x[k];
                for (g, o) in row.iter_mut().enumerate() {
                    let diff = x - params.means[g][(vi, ti)];
                    *o -= 0.5 * (LN_2PI + log_var[(g, vi)] + diff * diff / params.variances[(g, vi)]);
                }
            }
        }
        loglik += softmax_in_place(&mut row);
        for (g, &p) in row.iter().enumerate() {
            resp[(i, g)] = p;
        }
    }
    loglik
}

/// Closed-form MAP updates. Returns whether an empty component was re-seeded.
#[allow(clippy::too_many_arguments)]
fn m_step(
    data: &SubsetData,
    priors: &Priors,
    em: &EmSettings,
    resp: &DMatrix<f64>,
    params: &mut Params,
    candidates: &[usize],
    spent: &mut [bool],
    rng: &mut Rng,
) -> bool {
    let c = params.weights.len();
    let n = data.n as f64;
    let mass: Vec<f64> = (0..c).map(|g| resp.column(g).sum()).collect();
    for g in 0..c {
        params.weights[g] = mass[g] / n;
    }

    for g in 0..c {
        for vi in 0..data.v {
            let mut counts = vec![0.0; data.l];
            let mut sums = vec![0.0; data.l];
            for i in 0..data.n {
                let r = resp[(i, g)];
                if r == 0.0 {
                    continue;
                }
                for ti in 0..data.l {
                    let k = data.idx(i, vi, ti);
                    if data.obs[k] {
                        counts[ti] += r;
                        sums[ti] += r * data.x[k];
                    }
                }
            }
            let var = params.variances[(g, vi)];
            let prior_inv = &priors.cov_inv[vi];
            let mut a = prior_inv.clone();
            let prior_mean: DVector<f64> = priors.mean.row(vi).transpose();
            let mut b = prior_inv * &prior_mean;
            for ti in 0..data.l {
                a[(ti, ti)] += counts[ti] / var;
                b[ti] += sums[ti] / var;
            }
            // A is prior precision plus a non-negative diagonal, hence SPD.
            let mu = spd_solve(a, &b).unwrap_or(prior_mean);
            for ti in 0..data.l {
                params.means[g][(vi, ti)] = mu[ti];
            }

            let mut ss = 0.0;
            let mut w = 0.0;
            for i in 0..data.n {
                let r = resp[(i, g)];
                if r == 0.0 {
                    continue;
                }
                for ti in 0..data.l {
                    let k = data.idx(i, vi, ti);
                    if data.obs[k] {
                        let d = data.x[k] - mu[ti];
                        ss += r * d * d;
                        w += r;
                    }
                }
            }
            let s2 = (priors.strength * priors.var[vi] + ss) / (priors.strength + w);
            params.variances[(g, vi)] = if s2.is_finite() { s2.max(em.var_floor) } else { priors.var[vi] };
        }
    }

    // Each component is re-seeded at most once; if it empties again the
    // priors keep its update well defined and its weight decays.
    let mut reseeded = false;
    for g in 0..c {
        if mass[g] >= EMPTY_COMPONENT_MASS || spent[g] {
            continue;
        }
        spent[g] = true;
        let j = candidates[rng.random_range(0..candidates.len())];
        debug!("re-seeding empty component {g} from subset record {j}");
        params.means[g] = imputed(data, priors, j);
        for vi in 0..data.v {
            params.variances[(g, vi)] = priors.var[vi];
        }
        params.weights[g] = 1.0 / n;
        reseeded = true;
    }
    if reseeded {
        let total: f64 = params.weights.iter().sum();
        params.weights.iter_mut().for_each(|w| *w /= total);
    }
    reseeded
}
