use rand::Rng;
use rand_distr::StandardNormal;

use super::{Scalar, Tensor};

/// Zero-mean Gaussian with the given standard deviation.
pub fn normal<F: Scalar, R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<F> {
    let data = (0..shape.iter().product())
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            F::f(z * std)
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// He-normal initialization: std = sqrt(2 / fan_in).
pub fn he_normal<F: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<F> {
    normal(shape, (2.0 / fan_in as f64).sqrt(), rng)
}

/// Scaled uniform-ish init for attention/linear projections:
/// std = sqrt(1 / fan_in).
pub fn xavier_normal<F: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<F> {
    normal(shape, (1.0 / fan_in as f64).sqrt(), rng)
}
