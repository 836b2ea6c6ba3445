use super::{cast, to_f64, Result, Scalar, Tensor, TensorError};

/// Moment estimates and hyperparameters for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        Self::with_betas(learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of `params` using `grads` (same order and
/// shapes). Moment buffers are created lazily on the first call.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[&[T]],
    state: &mut AdamState,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(TensorError::Dimension {
            op: "adam_step",
            axis: "parameters",
            expected: params.len(),
            found: grads.len(),
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.len() != g.len() {
            return Err(TensorError::Dimension {
                op: "adam_step",
                axis: "elements",
                expected: p.len(),
                found: g.len(),
            });
        }
    }
    if state.first.is_empty() {
        state.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
        state.second = state.first.clone();
    } else if state.first.len() != params.len()
        || state.first.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len())
    {
        return Err(TensorError::Dimension {
            op: "adam_step",
            axis: "moments",
            expected: state.first.len(),
            found: params.len(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let correction1 = 1.0 - b1.powi(t);
    let correction2 = 1.0 - b2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.first[k], &mut state.second[k]);
        for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.iter()).enumerate() {
            let gi = to_f64(gi);
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            let delta = state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
            *w = cast(to_f64(*w) - delta);
        }
    }
    Ok(())
}
