//! Fixtures shared by the benchmarks.

use clhar::Tensor;

/// Deterministic, non-degenerate values without a random number generator.
pub fn wavy(shape: &[usize], phase: f32) -> Tensor<f32> {
    Tensor::from_fn(shape, |i| ((i as f32) * 0.37 + phase).sin() * 0.8)
}
