use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::{cast, Scalar, Tensor};

/// Kaiming-uniform initialisation for a layer with the given fan-in,
/// with the gain of a leaky rectifier of slope `negative_slope`.
pub fn kaiming_uniform<T: Scalar, R: Rng + ?Sized>(
    shape: impl Into<Vec<usize>>,
    fan_in: usize,
    negative_slope: f64,
    rng: &mut R,
) -> Tensor<T> {
    let gain = (2.0 / (1.0 + negative_slope * negative_slope)).sqrt();
    let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Tensor::from_fn(shape, |_| cast(dist.sample(rng)))
}

pub fn standard_normal<T: Scalar, R: Rng + ?Sized>(shape: impl Into<Vec<usize>>, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let x: f64 = StandardNormal.sample(rng);
        cast(x)
    })
}
