//! C-SVC and nu-SVC trained by SMO with second-order working-set selection.
//! Feature kernels see standardised inputs; precomputed kernels are used as given.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{check_width, Samples, Standardizer};
use crate::linalg::squared_distance;
use crate::nn::sigmoid;
use crate::{Error, Result};

const EPS: f64 = 1e-3;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SvmKernel {
    Linear,
    Rbf { gamma: f64 },
    /// Columns of the samples' kernel against the reference set.
    Precomputed,
}

impl SvmKernel {
    pub fn validate(&self) -> bool {
        match *self {
            SvmKernel::Rbf { gamma } => gamma > 0.0 && gamma.is_finite(),
            _ => true,
        }
    }

    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            SvmKernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            SvmKernel::Rbf { gamma } => (-gamma * squared_distance(a, b)).exp(),
            SvmKernel::Precomputed => unreachable!("precomputed kernels are looked up"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    kernel: SvmKernel,
    scaler: Option<Standardizer>,
    n_features: usize,
    /// `alpha_i * y_i` per support vector.
    coef: Vec<f64>,
    sv_rows: Vec<Vec<f64>>,
    sv_cols: Vec<usize>,
    pub rho: f64,
    /// Dual variables in training order, before any rescaling.
    pub dual: Vec<f64>,
    /// Box bound on `dual`.
    pub upper: f64,
    /// SMO pair updates until the KKT gap closed.
    pub iterations: usize,
}

impl SvmModel {
    pub fn n_support(&self) -> usize {
        self.coef.len()
    }

    pub fn decision(&self, samples: &Samples) -> Result<Vec<f64>> {
        let n = samples.n();
        let mut out = vec![-self.rho; n];
        match self.kernel {
            SvmKernel::Precomputed => {
                let kc = samples.require_kernel()?;
                if self.sv_cols.iter().any(|&c| c >= kc.rows.ncols()) {
                    return Err(Error::Shape("kernel columns do not cover the support vectors".into()));
                }
                for (r, o) in out.iter_mut().enumerate() {
                    *o += self.coef.iter().zip(&self.sv_cols).map(|(a, &c)| a * kc.rows[(r, c)]).sum::<f64>();
                }
            }
            _ => {
                check_width(self.n_features, &samples.x)?;
                let xs = self.scaler.as_ref().expect("feature kernels are scaled").apply(&samples.x);
                let mut row = vec![0.0; self.n_features];
                for (r, o) in out.iter_mut().enumerate() {
                    for (c, v) in row.iter_mut().enumerate() {
                        *v = xs[(r, c)];
                    }
                    *o += self.coef.iter().zip(&self.sv_rows).map(|(a, sv)| a * self.kernel.eval(sv, &row)).sum::<f64>();
                }
            }
        }
        Ok(out)
    }

    /// `sigmoid(decision)`.
    pub fn scores(&self, samples: &Samples) -> Result<Vec<f64>> {
        Ok(self.decision(samples)?.into_iter().map(sigmoid).collect())
    }
}

struct Problem {
    kernel: SvmKernel,
    scaler: Option<Standardizer>,
    rows: Vec<Vec<f64>>,
    cols: Vec<usize>,
    k: DMatrix<f64>,
}

fn problem(samples: &Samples, kernel: SvmKernel) -> Result<Problem> {
    let n = samples.n();
    match kernel {
        SvmKernel::Precomputed => {
            let cols = samples.reference_columns()?;
            let kc = samples.require_kernel()?;
            let k = DMatrix::from_fn(n, n, |i, j| kc.rows[(i, cols[j])]);
            Ok(Problem { kernel, scaler: None, rows: Vec::new(), cols, k })
        }
        _ => {
            let scaler = Standardizer::fit(&samples.x);
            let xs = scaler.apply(&samples.x);
            let rows: Vec<Vec<f64>> = xs.row_iter().map(|r| r.iter().copied().collect()).collect();
            let mut k = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..=i {
                    let v = kernel.eval(&rows[i], &rows[j]);
                    k[(i, j)] = v;
                    k[(j, i)] = v;
                }
            }
            Ok(Problem { kernel, scaler: Some(scaler), rows, cols: Vec::new(), k })
        }
    }
}

/// Dual state shared by both formulations: minimise `a'Qa/2 + p'a`
/// with `Q_ij = y_i y_j K_ij` and `0 <= a_i <= c`.
struct Smo<'a> {
    q: DMatrix<f64>,
    y: &'a [f64],
    c: f64,
    alpha: Vec<f64>,
    grad: Vec<f64>,
}

impl Smo<'_> {
    fn upper(&self, t: usize) -> bool {
        self.alpha[t] >= self.c
    }

    fn lower(&self, t: usize) -> bool {
        self.alpha[t] <= 0.0
    }

    /// `Q_ii + Q_jj + 2 sign Q_ij`, floored at `TAU`.
    fn quad(&self, i: usize, j: usize, sign: f64) -> f64 {
        let v = self.q[(i, i)] + self.q[(j, j)] + sign * 2.0 * self.q[(i, j)];
        if v > 0.0 { v } else { TAU }
    }

    fn select_c(&self) -> Option<(usize, usize)> {
        let n = self.alpha.len();
        let (mut gmax, mut i) = (f64::NEG_INFINITY, None);
        for t in 0..n {
            let cand = if self.y[t] > 0.0 {
                (!self.upper(t)).then(|| -self.grad[t])
            } else {
                (!self.lower(t)).then(|| self.grad[t])
            };
            if let Some(g) = cand {
                if g >= gmax {
                    gmax = g;
                    i = Some(t);
                }
            }
        }
        let i = i?;
        let (mut gmax2, mut best, mut j) = (f64::NEG_INFINITY, f64::INFINITY, None);
        for t in 0..n {
            let (g, diff, quad) = if self.y[t] > 0.0 {
                if self.lower(t) {
                    continue;
                }
                (self.grad[t], gmax + self.grad[t], self.quad(i, t, -self.y[i]))
            } else {
                if self.upper(t) {
                    continue;
                }
                (-self.grad[t], gmax - self.grad[t], self.quad(i, t, self.y[i]))
            };
            gmax2 = gmax2.max(g);
            if diff > 0.0 {
                let obj = -diff * diff / quad;
                if obj <= best {
                    best = obj;
                    j = Some(t);
                }
            }
        }
        if gmax + gmax2 < EPS {
            return None;
        }
        j.map(|j| (i, j))
    }

    fn select_nu(&self) -> Option<(usize, usize)> {
        let n = self.alpha.len();
        let (mut gmaxp, mut ip) = (f64::NEG_INFINITY, None);
        let (mut gmaxn, mut in_) = (f64::NEG_INFINITY, None);
        for t in 0..n {
            if self.y[t] > 0.0 {
                if !self.upper(t) && -self.grad[t] >= gmaxp {
                    gmaxp = -self.grad[t];
                    ip = Some(t);
                }
            } else if !self.lower(t) && self.grad[t] >= gmaxn {
                gmaxn = self.grad[t];
                in_ = Some(t);
            }
        }
        let (mut gmaxp2, mut gmaxn2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        let (mut best, mut j) = (f64::INFINITY, None);
        for t in 0..n {
            let (anchor, diff) = if self.y[t] > 0.0 {
                if self.lower(t) {
                    continue;
                }
                gmaxp2 = gmaxp2.max(self.grad[t]);
                (ip, gmaxp + self.grad[t])
            } else {
                if self.upper(t) {
                    continue;
                }
                gmaxn2 = gmaxn2.max(-self.grad[t]);
                (in_, gmaxn - self.grad[t])
            };
            if let (Some(a), true) = (anchor, diff > 0.0) {
                let obj = -diff * diff / self.quad(a, t, -1.0);
                if obj <= best {
                    best = obj;
                    j = Some(t);
                }
            }
        }
        if (gmaxp + gmaxp2).max(gmaxn + gmaxn2) < EPS {
            return None;
        }
        let j = j?;
        let i = if self.y[j] > 0.0 { ip } else { in_ }?;
        Some((i, j))
    }

    fn update(&mut self, i: usize, j: usize) {
        let c = self.c;
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let (mut ai, mut aj) = (old_i, old_j);
        if self.y[i] != self.y[j] {
            let quad = self.quad(i, j, 1.0);
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let quad = self.quad(i, j, -1.0);
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        self.alpha[i] = ai;
        self.alpha[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        for t in 0..self.grad.len() {
            self.grad[t] += self.q[(i, t)] * di + self.q[(j, t)] * dj;
        }
    }

    fn solve(&mut self, nu: bool) -> usize {
        let max_iter = (100 * self.alpha.len()).max(10_000_000);
        for it in 0..max_iter {
            let pair = if nu { self.select_nu() } else { self.select_c() };
            let Some((i, j)) = pair else { return it };
            self.update(i, j);
        }
        log::warn!("SMO stopped at the iteration limit");
        max_iter
    }

    /// Offset from free variables, or the midpoint of the feasible interval.
    fn offset(&self, members: impl Iterator<Item = usize>, signed: bool) -> f64 {
        let (mut ub, mut lb, mut sum, mut n_free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
        for t in members {
            let g = if signed { self.y[t] * self.grad[t] } else { self.grad[t] };
            let pos = self.y[t] > 0.0 || !signed;
            if self.upper(t) {
                if pos { lb = lb.max(g) } else { ub = ub.min(g) }
            } else if self.lower(t) {
                if pos { ub = ub.min(g) } else { lb = lb.max(g) }
            } else {
                n_free += 1;
                sum += g;
            }
        }
        if n_free > 0 { sum / n_free as f64 } else { 0.5 * (ub + lb) }
    }
}

fn signed_labels(y: &[u8]) -> Vec<f64> {
    y.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect()
}

fn q_matrix(k: &DMatrix<f64>, y: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| y[i] * y[j] * k[(i, j)])
}

struct Solution {
    alpha: Vec<f64>,
    scale: f64,
    rho: f64,
    upper: f64,
    iterations: usize,
}

fn finish(p: Problem, n_features: usize, y: &[f64], sol: Solution) -> SvmModel {
    let Solution { alpha, scale, rho, upper, iterations } = sol;
    let mut m = SvmModel {
        kernel: p.kernel,
        scaler: p.scaler,
        n_features,
        coef: Vec::new(),
        sv_rows: Vec::new(),
        sv_cols: Vec::new(),
        rho,
        dual: alpha.clone(),
        upper,
        iterations,
    };
    for (i, &a) in alpha.iter().enumerate() {
        if a > 0.0 {
            m.coef.push(a * y[i] * scale);
            match p.kernel {
                SvmKernel::Precomputed => m.sv_cols.push(p.cols[i]),
                _ => m.sv_rows.push(p.rows[i].clone()),
            }
        }
    }
    m
}

pub(super) fn fit_c_svc(samples: &Samples, y: &[u8], c: f64, kernel: SvmKernel) -> Result<SvmModel> {
    let p = problem(samples, kernel)?;
    let ys = signed_labels(y);
    let n = y.len();
    let mut smo = Smo { q: q_matrix(&p.k, &ys), y: &ys, c, alpha: vec![0.0; n], grad: vec![-1.0; n] };
    let iterations = smo.solve(false);
    let rho = smo.offset(0..n, true);
    let sol = Solution { alpha: smo.alpha, scale: 1.0, rho, upper: c, iterations };
    Ok(finish(p, samples.x.ncols(), &ys, sol))
}

/// Largest feasible nu for these labels.
pub fn nu_max(y: &[u8]) -> f64 {
    let pos = y.iter().filter(|&&l| l == 1).count();
    2.0 * pos.min(y.len() - pos) as f64 / y.len() as f64
}

pub(super) fn fit_nu_svc(samples: &Samples, y: &[u8], nu: f64, kernel: SvmKernel) -> Result<SvmModel> {
    let max = nu_max(y);
    if nu > max {
        return Err(Error::InfeasibleNu { nu, max });
    }
    let p = problem(samples, kernel)?;
    let ys = signed_labels(y);
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let (mut sum_pos, mut sum_neg) = (nu * n as f64 / 2.0, nu * n as f64 / 2.0);
    for (a, &yi) in alpha.iter_mut().zip(&ys) {
        let budget = if yi > 0.0 { &mut sum_pos } else { &mut sum_neg };
        *a = budget.min(1.0);
        *budget -= *a;
    }
    let q = q_matrix(&p.k, &ys);
    let grad = (0..n).map(|i| (0..n).map(|j| q[(i, j)] * alpha[j]).sum()).collect();
    let mut smo = Smo { q, y: &ys, c: 1.0, alpha, grad };
    let iterations = smo.solve(true);
    let r1 = smo.offset((0..n).filter(|&i| ys[i] > 0.0), false);
    let r2 = smo.offset((0..n).filter(|&i| ys[i] < 0.0), false);
    let r = 0.5 * (r1 + r2);
    if r.is_nan() || r <= 0.0 {
        return Err(Error::Numerical(format!("nu-SVC margin scale is {r}")));
    }
    let rho = 0.5 * (r1 - r2) / r;
    let sol = Solution { alpha: smo.alpha, scale: 1.0 / r, rho, upper: 1.0, iterations };
    Ok(finish(p, samples.x.ncols(), &ys, sol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noisy(n: usize, seed: u64) -> (DMatrix<f64>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let x = DMatrix::from_fn(n, 2, |i, _| f64::from(y[i]) + rng.random_range(-1.0..1.0));
        (x, y)
    }

    #[test]
    fn nu_bounds_error_and_support_fractions() {
        let (x, y) = noisy(80, 1);
        let s = Samples::features(x);
        for nu in [0.2, 0.5, 0.8] {
            let m = fit_nu_svc(&s, &y, nu, SvmKernel::Rbf { gamma: 0.5 }).unwrap();
            let n = y.len() as f64;
            let at_bound = m.dual.iter().filter(|&&a| a >= m.upper).count() as f64 / n;
            let support = m.dual.iter().filter(|&&a| a > 0.0).count() as f64 / n;
            assert!(at_bound <= nu + 1e-12 && nu <= support + 1e-12, "{nu}: {at_bound} {support}");
        }
    }

    #[test]
    fn infeasible_nu_is_reported() {
        let (x, _) = noisy(10, 2);
        let y = [1, 0, 0, 0, 0, 0, 0, 0, 0, 1];
        let s = Samples::features(x);
        assert!(matches!(fit_nu_svc(&s, &y, 0.5, SvmKernel::Linear), Err(Error::InfeasibleNu { .. })));
        assert!(fit_nu_svc(&s, &y, 0.4, SvmKernel::Linear).is_ok());
    }

    #[test]
    fn c_svc_satisfies_kkt_and_equality() {
        let (x, y) = noisy(60, 3);
        let s = Samples::features(x);
        let c = 1.0;
        let m = fit_c_svc(&s, &y, c, SvmKernel::Linear).unwrap();
        let ys = signed_labels(&y);
        let eq: f64 = m.dual.iter().zip(&ys).map(|(a, y)| a * y).sum();
        assert!(eq.abs() < 1e-9);
        let f = m.decision(&s).unwrap();
        for i in 0..y.len() {
            let margin = ys[i] * f[i];
            if m.dual[i] <= 0.0 {
                assert!(margin >= 1.0 - 1e-2, "{i}: {margin}");
            } else if m.dual[i] >= c {
                assert!(margin <= 1.0 + 1e-2, "{i}: {margin}");
            } else {
                assert!((margin - 1.0).abs() < 1e-2, "{i}: {margin}");
            }
        }
    }

    #[test]
    fn rank_deficient_linear_problems_converge_quickly() {
        // 60 points on a 2-D plane inside 8-D space, mostly negatives.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y: Vec<u8> = (0..60).map(|i| u8::from(i % 4 == 0)).collect();
        let base: Vec<[f64; 2]> =
            (0..60).map(|i| [3.0 * f64::from(y[i]) + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let x = DMatrix::from_fn(60, 8, |i, j| base[i][0] * (j as f64 + 1.0) - base[i][1] * (j as f64 - 3.0));
        let s = Samples::features(x);
        for nu in [0.2, 0.4] {
            let m = fit_nu_svc(&s, &y, nu, SvmKernel::Linear).unwrap();
            assert!(m.iterations < 10_000, "nu={nu}: {}", m.iterations);
        }
        for c in [0.1, 10.0] {
            let m = fit_c_svc(&s, &y, c, SvmKernel::Linear).unwrap();
            assert!(m.iterations < 10_000, "c={c}: {}", m.iterations);
        }
    }

    #[test]
    fn precomputed_linear_matches_linear_on_scaled_features() {
        let (x, y) = noisy(40, 4);
        let scaled = Standardizer::fit(&x).apply(&x);
        let gram = &scaled * scaled.transpose();
        let pre = Samples::from_square_kernel(x.clone(), gram).unwrap();
        let a = fit_c_svc(&pre, &y, 1.0, SvmKernel::Precomputed).unwrap().decision(&pre).unwrap();
        let b = fit_c_svc(&Samples::features(x.clone()), &y, 1.0, SvmKernel::Linear)
            .unwrap()
            .decision(&Samples::features(x))
            .unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-9);
        }
    }
}
