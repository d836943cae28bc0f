use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::rng::seeded;

/// Standard deviation `sqrt(2 / (fan_in + fan_out))` of the Xavier normal law.
pub fn xavier_std(fan_in: usize, fan_out: usize) -> f64 {
    (2.0 / (fan_in + fan_out) as f64).sqrt()
}

/// `[fan_in, fan_out]` matrix with i.i.d. `N(0, 2 / (fan_in + fan_out))` entries.
pub fn xavier_normal(shape: (usize, usize), seed: u64) -> Array2<f64> {
    xavier_normal_with(shape, &mut seeded(seed))
}

pub fn xavier_normal_with<R: Rng + ?Sized>(shape: (usize, usize), rng: &mut R) -> Array2<f64> {
    let law = Normal::new(0.0, xavier_std(shape.0, shape.1)).expect("positive std");
    Array2::from_shape_simple_fn(shape, || law.sample(rng))
}
