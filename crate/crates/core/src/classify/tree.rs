//! CART trees with the Gini criterion and bagged random forests.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng as _;

use super::check_width;
use crate::rng::{self, streams};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf { p1: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Leaf score is the fraction of positive training samples in the leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    n_features: usize,
    nodes: Vec<Node>,
}

impl TreeModel {
    fn leaf_p1(&self, row: impl Fn(usize) -> f64) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { p1 } => return p1,
                Node::Split { feature, threshold, left, right } => {
                    at = if row(feature) <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn scores(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        check_width(self.n_features, x)?;
        Ok((0..x.nrows()).map(|i| self.leaf_p1(|f| x[(i, f)])).collect())
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

struct Builder<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [u8],
    max_depth: Option<usize>,
    /// Features tried per split; `None` means all of them.
    max_features: Option<usize>,
    nodes: Vec<Node>,
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

impl Builder<'_> {
    fn grow(&mut self, idx: &mut [usize], depth: usize, rng: &mut rng::Rng) -> usize {
        let n = idx.len();
        let pos = idx.iter().filter(|&&i| self.y[i] == 1).count();
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { p1: pos as f64 / n as f64 });
        if pos == 0 || pos == n || n < 2 || self.max_depth.is_some_and(|d| depth >= d) {
            return at;
        }
        let d = self.x.ncols();
        let mut features: Vec<usize> = match self.max_features {
            Some(m) if m < d => sample(rng, d, m).into_vec(),
            _ => (0..d).collect(),
        };
        features.sort_unstable();

        let parent = gini(pos, n) * n as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut vals: Vec<(f64, u8)> = Vec::with_capacity(n);
        for &f in &features {
            vals.clear();
            vals.extend(idx.iter().map(|&i| (self.x[(i, f)], self.y[i])));
            vals.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_pos = 0;
            for k in 1..n {
                left_pos += usize::from(vals[k - 1].1);
                if vals[k].0 <= vals[k - 1].0 {
                    continue;
                }
                let impurity = gini(left_pos, k) * k as f64 + gini(pos - left_pos, n - k) * (n - k) as f64;
                if impurity <= parent + 1e-12 && best.is_none_or(|b| impurity < b.0) {
                    best = Some((impurity, f, 0.5 * (vals[k - 1].0 + vals[k].0)));
                }
            }
        }
        let Some((_, feature, threshold)) = best else { return at };

        // Partition in place, keeping relative order.
        let (mut l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[(i, feature)] <= threshold);
        let n_left = l.len();
        l.extend(r);
        idx.copy_from_slice(&l);
        let (li, ri) = idx.split_at_mut(n_left);
        let left = self.grow(li, depth + 1, rng);
        let right = self.grow(ri, depth + 1, rng);
        self.nodes[at] = Node::Split { feature, threshold, left, right };
        at
    }
}

fn build(
    x: &DMatrix<f64>,
    y: &[u8],
    idx: &mut [usize],
    max_depth: Option<usize>,
    max_features: Option<usize>,
    rng: &mut rng::Rng,
) -> TreeModel {
    let mut b = Builder { x, y, max_depth, max_features, nodes: Vec::new() };
    b.grow(idx, 0, rng);
    TreeModel { n_features: x.ncols(), nodes: b.nodes }
}

pub(super) fn fit_tree(x: &DMatrix<f64>, y: &[u8], max_depth: Option<usize>) -> TreeModel {
    let mut idx: Vec<usize> = (0..y.len()).collect();
    build(x, y, &mut idx, max_depth, None, &mut rng::stream(0, streams::CLASSIFIER))
}

/// Each tree sees a bootstrap sample and `ceil(sqrt(d))` candidate features per split.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<TreeModel>,
}

impl ForestModel {
    /// Leaf scores of every tree, `trees x samples`.
    pub fn tree_scores(&self, x: &DMatrix<f64>) -> Result<Vec<Vec<f64>>> {
        self.trees.iter().map(|t| t.scores(x)).collect()
    }

    /// Fraction of trees voting positive.
    pub fn scores(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let per_tree = self.tree_scores(x)?;
        let n_trees = self.trees.len() as f64;
        Ok((0..x.nrows())
            .map(|i| per_tree.iter().filter(|s| s[i] >= 0.5).count() as f64 / n_trees)
            .collect())
    }
}

pub(super) fn fit_forest(
    x: &DMatrix<f64>,
    y: &[u8],
    n_trees: usize,
    max_depth: Option<usize>,
    seed: u64,
) -> ForestModel {
    let n = y.len();
    let m = (x.ncols() as f64).sqrt().ceil() as usize;
    let trees = (0..n_trees)
        .map(|t| {
            let mut rng = rng::stream(rng::mix(seed, t as u64), streams::CLASSIFIER);
            let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            build(x, y, &mut idx, max_depth, Some(m.max(1)), &mut rng)
        })
        .collect();
    ForestModel { trees }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xor_needs_depth_two() {
        let x = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
        let y = [0, 1, 1, 0];
        // No single split reduces Gini on XOR.
        let stump = fit_tree(&x, &y, Some(1));
        assert_eq!(stump.scores(&x).unwrap(), vec![0.5; 4]);
        let full = fit_tree(&x, &y, None);
        assert_eq!(full.scores(&x).unwrap(), vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn depth_limit_is_respected() {
        let x = DMatrix::from_fn(32, 1, |i, _| i as f64);
        let y: Vec<u8> = (0..32).map(|i| (i % 2) as u8).collect();
        for d in 1..5 {
            assert!(fit_tree(&x, &y, Some(d)).depth() <= d);
        }
    }

    #[test]
    fn forest_score_is_vote_fraction() {
        let x = DMatrix::from_fn(30, 3, |i, j| ((i * 7 + j * 3) % 11) as f64);
        let y: Vec<u8> = (0..30).map(|i| u8::from(i % 3 == 0)).collect();
        let f = fit_forest(&x, &y, 15, None, 4);
        let per_tree = f.tree_scores(&x).unwrap();
        let scores = f.scores(&x).unwrap();
        for i in 0..30 {
            let votes = per_tree.iter().filter(|s| s[i] >= 0.5).count();
            assert_eq!(scores[i], votes as f64 / 15.0);
        }
    }
}
