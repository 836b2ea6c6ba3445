use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_points, squared_distance, DetectorError, Result, DEFAULT_CONTAMINATION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcsvmConfig {
    pub nu: f64,
    /// RBF width; `None` selects `1 / (d · var(X))`.
    pub gamma: Option<f64>,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for OcsvmConfig {
    fn default() -> Self {
        Self { nu: DEFAULT_CONTAMINATION, gamma: None, tol: 1e-6, max_iter: 10_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcsvmModel {
    pub gamma: f64,
    pub nu: f64,
    pub support_vectors: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub rho: f64,
    /// Dual objective `½ αᵀKα` over all fit points.
    pub objective: f64,
    /// Decision values of the fit points.
    pub fit_scores: Vec<f64>,
    /// Full dual vector, one entry per fit point.
    pub dual: Vec<f64>,
    pub iterations: usize,
}

pub fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    (-gamma * squared_distance(a, b)).exp()
}

/// `1 / (d · var)` over all coordinates, or 1 when the data are constant.
pub fn scale_gamma(points: &[Vec<f64>]) -> f64 {
    let n = points.iter().map(Vec::len).sum::<usize>() as f64;
    let mean = points.iter().flatten().sum::<f64>() / n;
    let var = points.iter().flatten().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let d = points[0].len() as f64;
    if var > 0.0 {
        1.0 / (d * var)
    } else {
        1.0
    }
}

/// Solves `min ½ αᵀKα` subject to `0 ≤ αᵢ ≤ 1/(νn)` and `Σα = 1` by
/// sequential minimal optimisation on the maximal violating pair.
pub fn ocsvm_fit(points: &[Vec<f64>], config: &OcsvmConfig) -> Result<OcsvmModel> {
    if !(config.nu > 0.0 && config.nu <= 1.0) {
        return Err(DetectorError::Parameter(format!("ν = {} outside (0, 1]", config.nu)));
    }
    if points.is_empty() {
        return Err(DetectorError::TooFewPoints { detector: "one-class SVM", needed: 1, found: 0 });
    }
    check_points(points, None)?;
    let gamma = config.gamma.unwrap_or_else(|| scale_gamma(points));
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(DetectorError::Parameter(format!("γ = {gamma} must be positive")));
    }
    let n = points.len();
    let kernel: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| points.iter().map(|p| rbf(gamma, &points[i], p)).collect())
        .collect();

    let c = 1.0 / (config.nu * n as f64);
    let mut alpha = vec![0.0; n];
    let full = ((config.nu * n as f64).floor() as usize).min(n);
    for a in alpha.iter_mut().take(full) {
        *a = c;
    }
    let rest = 1.0 - full as f64 * c;
    if full < n && rest > 0.0 {
        alpha[full] = rest.min(c);
    }
    let mut grad: Vec<f64> = (0..n)
        .map(|i| alpha.iter().zip(&kernel[i]).map(|(a, k)| a * k).sum())
        .collect();

    let mut iterations = 0;
    loop {
        // i can grow, j can shrink
        let (mut i, mut gi) = (usize::MAX, f64::INFINITY);
        let (mut j, mut gj) = (usize::MAX, f64::NEG_INFINITY);
        for t in 0..n {
            if alpha[t] < c && grad[t] < gi {
                (i, gi) = (t, grad[t]);
            }
            if alpha[t] > 0.0 && grad[t] > gj {
                (j, gj) = (t, grad[t]);
            }
        }
        let violation = gj - gi;
        if i == usize::MAX || j == usize::MAX || violation <= config.tol {
            break;
        }
        if iterations >= config.max_iter {
            return Err(DetectorError::NonConvergence { iterations, violation });
        }
        iterations += 1;
        let eta = (kernel[i][i] + kernel[j][j] - 2.0 * kernel[i][j]).max(1e-12);
        let delta = (violation / eta).min(c - alpha[i]).min(alpha[j]);
        alpha[i] += delta;
        alpha[j] -= delta;
        if c - alpha[i] < 1e-15 * c {
            alpha[i] = c;
        }
        if alpha[j] < 1e-15 * c {
            alpha[j] = 0.0;
        }
        for (t, g) in grad.iter_mut().enumerate() {
            *g += delta * (kernel[t][i] - kernel[t][j]);
        }
    }

    let free: Vec<f64> = (0..n).filter(|&t| alpha[t] > 0.0 && alpha[t] < c).map(|t| grad[t]).collect();
    let rho = if free.is_empty() {
        let upper = (0..n).filter(|&t| alpha[t] == 0.0).map(|t| grad[t]).fold(f64::INFINITY, f64::min);
        let lower = (0..n).filter(|&t| alpha[t] >= c).map(|t| grad[t]).fold(f64::NEG_INFINITY, f64::max);
        match (upper.is_finite(), lower.is_finite()) {
            (true, true) => 0.5 * (upper + lower),
            (true, false) => upper,
            (false, true) => lower,
            (false, false) => 0.0,
        }
    } else {
        free.iter().sum::<f64>() / free.len() as f64
    };
    let objective = 0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * g).sum::<f64>();
    let fit_scores = grad.iter().map(|g| g - rho).collect();
    let sv: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0).collect();
    Ok(OcsvmModel {
        gamma,
        nu: config.nu,
        support_vectors: sv.iter().map(|&t| points[t].clone()).collect(),
        alpha: sv.iter().map(|&t| alpha[t]).collect(),
        rho,
        objective,
        fit_scores,
        dual: alpha,
        iterations,
    })
}

impl OcsvmModel {
    /// `Σ αᵢ k(xᵢ, x) − ρ`; negative outside the learned boundary.
    pub fn score(&self, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        check_points(points, Some(self.support_vectors[0].len()))?;
        Ok(points
            .par_iter()
            .map(|x| {
                self.support_vectors
                    .iter()
                    .zip(&self.alpha)
                    .map(|(s, a)| a * rbf(self.gamma, s, x))
                    .sum::<f64>()
                    - self.rho
            })
            .collect())
    }
}
