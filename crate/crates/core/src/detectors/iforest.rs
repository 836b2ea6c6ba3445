use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_points, contamination_threshold, DetectorError, Result, DEFAULT_CONTAMINATION};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Average path length of an unsuccessful binary-search-tree lookup among
/// `n` points: `2H(n−1) − 2(n−1)/n`, with `c(2) = 1` and `c(n ≤ 1) = 0`.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let m = (n - 1) as f64;
            2.0 * (m.ln() + EULER_GAMMA) - 2.0 * m / n as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForestConfig {
    pub n_trees: usize,
    pub subsample_size: usize,
    pub contamination: f64,
    pub seed: u64,
}

impl Default for IsolationForestConfig {
    fn default() -> Self {
        Self { n_trees: 100, subsample_size: 256, contamination: DEFAULT_CONTAMINATION, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        feature: usize,
        value: f64,
        /// Range of `feature` among the node's points when it was split.
        range: (f64, f64),
        left: usize,
        right: usize,
    },
    Leaf {
        size: usize,
        depth: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationTree {
    pub nodes: Vec<TreeNode>,
}

impl IsolationTree {
    fn grow(points: &[Vec<f64>], idx: Vec<usize>, max_depth: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut tree = Self { nodes: Vec::new() };
        tree.build(points, idx, 0, max_depth, rng);
        tree
    }

    fn build(&mut self, points: &[Vec<f64>], idx: Vec<usize>, depth: usize, max_depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let at = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { size: idx.len(), depth });
        if depth >= max_depth || idx.len() <= 1 {
            return at;
        }
        let dim = points[idx[0]].len();
        let ranges: Vec<(usize, f64, f64)> = (0..dim)
            .filter_map(|f| {
                let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    (lo.min(points[i][f]), hi.max(points[i][f]))
                });
                (hi > lo).then_some((f, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return at;
        }
        let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
        let mut value = rng.random_range(lo..hi);
        if value <= lo {
            // keeps both children non-empty when the draw lands on the minimum
            value = lo + (hi - lo) * 0.5;
        }
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| points[i][feature] < value);
        let left = self.build(points, l, depth + 1, max_depth, rng);
        let right = self.build(points, r, depth + 1, max_depth, rng);
        self.nodes[at] = TreeNode::Split { feature, value, range: (lo, hi), left, right };
        at
    }

    /// Depth of the leaf reached by `x` plus `c(leaf size)`.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut node = 0;
        loop {
            match &self.nodes[node] {
                TreeNode::Split { feature, value, left, right, .. } => {
                    node = if x[*feature] < *value { *left } else { *right };
                }
                TreeNode::Leaf { size, depth } => return *depth as f64 + average_path_length(*size),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForestModel {
    pub config: IsolationForestConfig,
    pub dim: usize,
    /// Effective subsample size after clamping to the fit-set size.
    pub subsample_size: usize,
    pub trees: Vec<IsolationTree>,
    /// Score at the contamination quantile of the fit set.
    pub threshold: f64,
}

/// Grows `config.n_trees` isolation trees on random subsamples drawn
/// without replacement. A subsample larger than the data is clamped.
pub fn if_fit(points: &[Vec<f64>], config: &IsolationForestConfig) -> Result<IsolationForestModel> {
    if points.len() < 2 {
        return Err(DetectorError::TooFewPoints { detector: "isolation forest", needed: 2, found: points.len() });
    }
    if config.n_trees == 0 || config.subsample_size < 2 {
        return Err(DetectorError::Parameter("isolation forest needs n_trees ≥ 1 and subsample_size ≥ 2".into()));
    }
    let dim = check_points(points, None)?;
    let psi = if config.subsample_size > points.len() {
        log::warn!("isolation forest subsample {} exceeds {} points; clamped", config.subsample_size, points.len());
        points.len()
    } else {
        config.subsample_size
    };
    let max_depth = (psi as f64).log2().ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let trees = (0..config.n_trees)
        .map(|_| {
            let idx = sample(&mut rng, points.len(), psi).into_vec();
            IsolationTree::grow(points, idx, max_depth, &mut rng)
        })
        .collect();
    let mut model = IsolationForestModel { config: config.clone(), dim, subsample_size: psi, trees, threshold: 0.0 };
    let scores = model.score(points)?;
    model.threshold = contamination_threshold(&scores, config.contamination);
    Ok(model)
}

impl IsolationForestModel {
    /// Mean path length of `x` over all trees.
    pub fn mean_path_length(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64
    }

    /// `−2^(−E[h(x)] / c(ψ))`; in `[−1, 0)` with smaller meaning more isolated.
    pub fn score(&self, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        check_points(points, Some(self.dim))?;
        let c = average_path_length(self.subsample_size);
        Ok(points
            .par_iter()
            .map(|x| -(2f64).powf(-self.mean_path_length(x) / c))
            .collect())
    }
}
