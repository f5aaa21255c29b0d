//! Shared fixtures for the benchmarks.

use auhm_core::registration::{LandmarkSet, Point, N_LANDMARKS};
use auhm_core::tensor::Tensor;

/// Deterministic pseudo-random tensor without pulling an RNG into the benches.
pub fn ramp(shape: &[usize]) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|i| ((i * 7919 % 1000) as f32 / 500.0) - 1.0).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// Landmarks spread over a 256×256 registered frame.
pub fn spread_landmarks() -> LandmarkSet {
    LandmarkSet::new(
        (0..N_LANDMARKS)
            .map(|i| Point::new(40.0 + (i * 37 % 176) as f64, 60.0 + (i * 53 % 150) as f64))
            .collect(),
    )
    .expect("66 finite points")
}
