//! Parameter initialization.

use rand::Rng;

use crate::rng;

use super::tensor::Tensor;

/// Glorot/Xavier uniform initialization: entries drawn from
/// `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`. For a matrix
/// `[r, c]` the fans are `r` and `c`; a vector `[n]` is treated as `[n, 1]`.
/// Deterministic under `seed`.
pub fn xavier_init(shape: &[usize], seed: u64) -> Tensor {
    assert!(!shape.is_empty(), "xavier_init needs a non-empty shape");
    let fan_in = shape[0];
    let fan_out = if shape.len() > 1 { shape[1] } else { 1 };
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = rng::rng(seed);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data)
}
