//! Central finite differences for validating reverse-mode gradients.

use super::{Scalar, Tensor};

/// Outcome of comparing analytic against numeric gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest relative error over all checked coordinates.
    pub max_relative_error: f64,
    /// Coordinate (input index, element index) where it occurred.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Relative error with an absolute floor for near-zero derivatives.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / scale
}

/// Estimates `∂f/∂inputs[k][i]` by `(f(x + h e_i) − f(x − h e_i)) / 2h` for
/// every element of every input.
pub fn numeric_gradients<T: Scalar>(
    f: &mut dyn FnMut(&[Tensor<T>]) -> f64,
    inputs: &[Tensor<T>],
    step: f64,
) -> Vec<Vec<f64>> {
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut g = Vec::with_capacity(inputs[k].len());
        for i in 0..inputs[k].len() {
            let original = work[k].data()[i];
            work[k].data_mut()[i] = original + super::cast(step);
            let plus = f(&work);
            work[k].data_mut()[i] = original - super::cast(step);
            let minus = f(&work);
            work[k].data_mut()[i] = original;
            g.push((plus - minus) / (2.0 * step));
        }
        out.push(g);
    }
    out
}

/// Compares analytic gradients against [`numeric_gradients`].
pub fn compare(analytic: &[Vec<f64>], numeric: &[Vec<f64>], floor: f64) -> GradCheck {
    let mut result = GradCheck {
        max_relative_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for (k, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        for (i, (&a, &n)) in a.iter().zip(n).enumerate() {
            let e = relative_error(a, n, floor);
            result.checked += 1;
            if e > result.max_relative_error || e.is_nan() {
                result.max_relative_error = e;
                result.worst = (k, i);
            }
        }
    }
    result
}
