use rand::Rng;

use crate::tensor::Tensor;

/// Tensor of i.i.d. draws from `U(-bound, bound)`.
pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}
