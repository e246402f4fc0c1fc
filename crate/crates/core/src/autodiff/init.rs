use rand_distr::{Distribution, Normal};

use super::Tensor;
use crate::rng::rng_from;

/// Zero-mean Gaussian with `std = √(2 / fan_in)`.
pub fn initialize_weights(shape: &[usize], fan_in: usize, seed: u64) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let mut rng = rng_from(seed);
    Tensor {
        shape: shape.to_vec(),
        data: (0..n).map(|_| normal.sample(&mut rng) as f32).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible() {
        assert_eq!(
            initialize_weights(&[4, 3, 3, 3], 27, 5),
            initialize_weights(&[4, 3, 3, 3], 27, 5)
        );
        assert_ne!(
            initialize_weights(&[4, 3, 3, 3], 27, 5),
            initialize_weights(&[4, 3, 3, 3], 27, 6)
        );
    }

    #[test]
    fn moments_match_target() {
        // 10 000 draws, fan_in = 50.
        let t = initialize_weights(&[200, 50], 50, 11);
        let target = (2.0f64 / 50.0).sqrt();
        let n = t.len() as f64;
        let mean = t.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = t
            .data
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        assert!(mean.abs() < 4.0 * target / n.sqrt());
        assert!((var.sqrt() / target - 1.0).abs() < 0.05);
    }
}
