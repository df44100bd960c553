use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{compute_metrics, fit, predict, ClassifierSpec, Metrics, Samples};
use crate::rng::{self, streams};
use crate::{Error, Result};

/// Held-out index sets. Each class is shuffled and dealt round-robin, so
/// per-class fold sizes differ by at most one.
pub fn stratified_folds(y: &[u8], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    let mut rng = rng::stream(seed, streams::CV);
    let mut out = vec![Vec::new(); folds];
    let mut next = 0;
    for class in [0u8, 1] {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        if members.len() < folds {
            return Err(Error::Stratification(format!(
                "class {class} has {} records, fewer than {folds} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for i in members {
            out[next % folds].push(i);
            next += 1;
        }
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub best_index: usize,
    pub best: ClassifierSpec,
    /// Per grid point, the metrics of every fold; `None` if any fold failed.
    pub fold_metrics: Vec<Option<Vec<Metrics>>>,
    pub mean: Vec<Option<Metrics>>,
}

impl CvResult {
    pub fn best_metrics(&self) -> &[Metrics] {
        self.fold_metrics[self.best_index].as_deref().expect("best grid point succeeded")
    }
}

fn evaluate(spec: &ClassifierSpec, samples: &Samples, y: &[u8], test: &[usize], seed: u64) -> Result<Metrics> {
    let train: Vec<usize> = (0..y.len()).filter(|i| test.binary_search(i).is_err()).collect();
    let y_train: Vec<u8> = train.iter().map(|&i| y[i]).collect();
    let y_test: Vec<u8> = test.iter().map(|&i| y[i]).collect();
    let model = fit(spec, &samples.select(&train), &y_train, seed)?;
    let p = predict(&model, &samples.select(test))?;
    compute_metrics(&y_test, &p.labels, &p.scores)
}

/// Picks the grid point with the highest mean AUC, then mean accuracy,
/// then the earliest. Grid points that fail on any fold are skipped.
pub fn cross_validate(grid: &[ClassifierSpec], samples: &Samples, y: &[u8], folds: usize, seed: u64) -> Result<CvResult> {
    if grid.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    if y.len() != samples.n() {
        return Err(Error::Shape(format!("{} labels for {} samples", y.len(), samples.n())));
    }
    let fold_sets = stratified_folds(y, folds, seed)?;
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..folds).map(move |f| (g, f))).collect();
    let results: Vec<Result<Metrics>> =
        jobs.par_iter().map(|&(g, f)| evaluate(&grid[g], samples, y, &fold_sets[f], seed)).collect();

    let mut fold_metrics = Vec::with_capacity(grid.len());
    for (g, chunk) in results.chunks(folds).enumerate() {
        match chunk.iter().map(|r| r.as_ref().map(|m| *m)).collect::<std::result::Result<Vec<_>, _>>() {
            Ok(m) => fold_metrics.push(Some(m)),
            Err(e) => {
                log::warn!("skipping {:?}: {e}", grid[g]);
                fold_metrics.push(None);
            }
        }
    }
    let mean: Vec<Option<Metrics>> = fold_metrics.iter().map(|m| m.as_deref().map(Metrics::mean)).collect();
    let mut best: Option<(usize, Metrics)> = None;
    for (g, m) in mean.iter().enumerate() {
        let Some(m) = m else { continue };
        let better = match best {
            None => true,
            Some((_, b)) => m.auc > b.auc || (m.auc == b.auc && m.accuracy > b.accuracy),
        };
        if better {
            best = Some((g, *m));
        }
    }
    let (best_index, _) = best.ok_or_else(|| Error::Config("every grid point failed".into()))?;
    Ok(CvResult { best_index, best: grid[best_index].clone(), fold_metrics, mean })
}
