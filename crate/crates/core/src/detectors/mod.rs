//! Isolation Forest, Local Outlier Factor and One-Class SVM over latent
//! vectors. Every score is oriented so that smaller values are more outlying.

mod iforest;
mod lof;
mod ocsvm;

use thiserror::Error;

pub use iforest::{average_path_length, if_fit, IsolationForestConfig, IsolationForestModel, IsolationTree, TreeNode};
pub use lof::{lof_fit, lof_fit_with, LofModel};
pub use ocsvm::{ocsvm_fit, rbf, scale_gamma, OcsvmConfig, OcsvmModel};

/// Outlier fraction assumed by every detector.
pub const DEFAULT_CONTAMINATION: f64 = 0.005;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("{detector} needs at least {needed} points, got {found}")]
    TooFewPoints {
        detector: &'static str,
        needed: usize,
        found: usize,
    },
    #[error("point {index} has dimension {found}, expected {expected}")]
    Dimension { index: usize, expected: usize, found: usize },
    #[error("non-finite coordinate in point {0}")]
    NonFinite(usize),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("solver stopped after {iterations} iterations with KKT violation {violation:e}")]
    NonConvergence { iterations: usize, violation: f64 },
}

pub type Result<T, E = DetectorError> = std::result::Result<T, E>;

/// Checks that all points share one dimension and are finite; returns it.
pub(crate) fn check_points(points: &[Vec<f64>], expected: Option<usize>) -> Result<usize> {
    let dim = expected.or_else(|| points.first().map(Vec::len)).unwrap_or(0);
    for (i, p) in points.iter().enumerate() {
        if p.len() != dim || dim == 0 {
            return Err(DetectorError::Dimension { index: i, expected: dim.max(1), found: p.len() });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(DetectorError::NonFinite(i));
        }
    }
    Ok(dim)
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Score below which a fraction `contamination` of `scores` falls.
pub(crate) fn contamination_threshold(scores: &[f64], contamination: f64) -> f64 {
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = contamination.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}
