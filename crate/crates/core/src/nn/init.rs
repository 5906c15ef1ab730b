use rand::Rng as _;
use sgdvit_tensor::{Element, Tensor};

use crate::error::Result;
use crate::rng::Rng;

pub fn uniform<T: Element>(shape: &[usize], bound: f64, rng: &mut Rng) -> Result<Tensor<T>> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Ok(Tensor::from_f64(shape.to_vec(), &data)?)
}

/// He-uniform for ReLU networks: U(-b, b) with b = sqrt(6 / fan_in).
pub fn kaiming_uniform<T: Element>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Result<Tensor<T>> {
    uniform(shape, (6.0 / fan_in as f64).sqrt(), rng)
}
