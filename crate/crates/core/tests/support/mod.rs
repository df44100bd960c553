//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use nalgebra::DMatrix;

/// Cyclic Jacobi rotations until the off-diagonal mass vanishes.
/// Returns eigenvalues (descending) and matching eigenvector columns.
pub fn jacobi_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| a[(i, j)].powi(2)).sum();
        if off.sqrt() < 1e-15 * a.norm().max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (values, vectors)
}

/// Lloyd's algorithm from several deterministic seedings; keeps the lowest inertia.
pub fn kmeans(x: &DMatrix<f64>, k: usize, restarts: usize) -> Vec<usize> {
    let n = x.nrows();
    let dist = |i: usize, c: &DMatrix<f64>, j: usize| -> f64 {
        (0..x.ncols()).map(|d| (x[(i, d)] - c[(j, d)]).powi(2)).sum()
    };
    let mut best: Option<(f64, Vec<usize>)> = None;
    for r in 0..restarts {
        // Farthest-point seeding from a rotating start.
        let mut seeds = vec![(r * 7919) % n];
        while seeds.len() < k {
            let far = (0..n)
                .max_by(|&a, &b| {
                    let da = seeds.iter().map(|&s| sq(x, a, s)).fold(f64::INFINITY, f64::min);
                    let db = seeds.iter().map(|&s| sq(x, b, s)).fold(f64::INFINITY, f64::min);
                    da.total_cmp(&db)
                })
                .unwrap();
            seeds.push(far);
        }
        let mut centers = DMatrix::from_fn(k, x.ncols(), |j, d| x[(seeds[j], d)]);
        let mut assign = vec![0; n];
        for _ in 0..200 {
            let next: Vec<usize> = (0..n)
                .map(|i| (0..k).min_by(|&a, &b| dist(i, &centers, a).total_cmp(&dist(i, &centers, b))).unwrap())
                .collect();
            let done = next == assign;
            assign = next;
            for j in 0..k {
                let members: Vec<usize> = (0..n).filter(|&i| assign[i] == j).collect();
                if members.is_empty() {
                    continue;
                }
                for d in 0..x.ncols() {
                    centers[(j, d)] = members.iter().map(|&i| x[(i, d)]).sum::<f64>() / members.len() as f64;
                }
            }
            if done {
                break;
            }
        }
        let inertia: f64 = (0..n).map(|i| dist(i, &centers, assign[i])).sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, assign));
        }
    }
    best.unwrap().1
}

fn sq(x: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    (0..x.ncols()).map(|d| (x[(a, d)] - x[(b, d)]).powi(2)).sum()
}

/// Best agreement between two labelings over all relabelings of `pred`.
pub fn cluster_agreement(truth: &[usize], pred: &[usize], k: usize) -> f64 {
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0usize;
    permutations(&mut perm, 0, &mut |p| {
        let hits = truth.iter().zip(pred).filter(|(t, q)| p[**q] == **t).count();
        best = best.max(hits);
    });
    best as f64 / truth.len() as f64
}

fn permutations(p: &mut Vec<usize>, at: usize, f: &mut dyn FnMut(&[usize])) {
    if at == p.len() {
        f(p);
        return;
    }
    for i in at..p.len() {
        p.swap(at, i);
        permutations(p, at + 1, f);
        p.swap(at, i);
    }
}
