use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_points, contamination_threshold, squared_distance, DetectorError, Result, DEFAULT_CONTAMINATION};

/// Floor added to the mean reachability distance so duplicate points get a
/// finite local reachability density.
const LRD_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LofModel {
    pub k: usize,
    pub contamination: f64,
    pub reference: Vec<Vec<f64>>,
    /// Distance from each reference point to its k-th neighbour.
    pub k_distance: Vec<f64>,
    /// Local reachability density of each reference point.
    pub lrd: Vec<f64>,
    /// `−LOF` of each reference point with itself left out of its neighbourhood.
    pub fit_scores: Vec<f64>,
    pub threshold: f64,
}

/// Indices and distances of the `k` nearest reference points to `x`,
/// skipping `exclude`. Ties go to the lower index.
fn neighbours(reference: &[Vec<f64>], x: &[f64], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
    let mut d: Vec<(usize, f64)> = reference
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(i, r)| (i, squared_distance(r, x).sqrt()))
        .collect();
    let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    if d.len() > k {
        d.select_nth_unstable_by(k - 1, cmp);
        d.truncate(k);
    }
    d.sort_by(cmp);
    d
}

fn local_reachability(nb: &[(usize, f64)], k_distance: &[f64]) -> f64 {
    let mean = nb.iter().map(|&(o, d)| d.max(k_distance[o])).sum::<f64>() / nb.len() as f64;
    1.0 / (mean + LRD_FLOOR)
}

fn factor(nb: &[(usize, f64)], own_lrd: f64, lrd: &[f64]) -> f64 {
    nb.iter().map(|&(o, _)| lrd[o]).sum::<f64>() / nb.len() as f64 / own_lrd
}

/// Fits LOF with exactly `k` neighbours per point.
pub fn lof_fit(points: &[Vec<f64>], k: usize) -> Result<LofModel> {
    lof_fit_with(points, k, DEFAULT_CONTAMINATION)
}

pub fn lof_fit_with(points: &[Vec<f64>], k: usize, contamination: f64) -> Result<LofModel> {
    if k == 0 {
        return Err(DetectorError::Parameter("LOF needs k ≥ 1".into()));
    }
    if points.len() <= k {
        return Err(DetectorError::TooFewPoints { detector: "LOF", needed: k + 1, found: points.len() });
    }
    check_points(points, None)?;
    let nbs: Vec<Vec<(usize, f64)>> = (0..points.len())
        .into_par_iter()
        .map(|i| neighbours(points, &points[i], k, Some(i)))
        .collect();
    let k_distance: Vec<f64> = nbs.iter().map(|nb| nb[k - 1].1).collect();
    let lrd: Vec<f64> = nbs.iter().map(|nb| local_reachability(nb, &k_distance)).collect();
    let fit_scores: Vec<f64> = nbs.iter().zip(&lrd).map(|(nb, &l)| -factor(nb, l, &lrd)).collect();
    let threshold = contamination_threshold(&fit_scores, contamination);
    Ok(LofModel { k, contamination, reference: points.to_vec(), k_distance, lrd, fit_scores, threshold })
}

impl LofModel {
    /// `−LOF` of new points, with neighbourhoods taken from the fit set.
    pub fn score(&self, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        check_points(points, Some(self.reference[0].len()))?;
        Ok(points
            .par_iter()
            .map(|x| {
                let nb = neighbours(&self.reference, x, self.k, None);
                let own = local_reachability(&nb, &self.k_distance);
                -factor(&nb, own, &self.lrd)
            })
            .collect())
    }
}
