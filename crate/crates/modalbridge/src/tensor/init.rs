//! Parameter initialization.

use super::Tensor;
use crate::error::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Kaiming-style fan-in scaled normal init: `N(0, sqrt(2 / fan_in))`.
pub fn kaiming_normal(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Result<Tensor> {
    let std = (2.0 / fan_in as f32).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n)
        .map(|_| {
            let z: f32 = rng.sample(StandardNormal);
            z * std
        })
        .collect();
    Tensor::param(shape, data)
}

/// Zero-initialized trainable tensor (biases).
pub fn zeros_init(shape: Vec<usize>) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    Tensor::param(shape, vec![0.0; n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn kaiming_scale_tracks_fan_in() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = kaiming_normal(&mut rng, vec![64, 256], 256).unwrap();
        let data = t.to_vec();
        let var: f32 = data.iter().map(|v| v * v).sum::<f32>() / data.len() as f32;
        let expected = 2.0 / 256.0;
        assert!((var - expected).abs() < expected * 0.2, "var {var} vs {expected}");
    }
}
