//! Shared fixtures for the benchmarks.

use docbinformer::data::synth::{synthetic_pair, Degradation};
use docbinformer::data::DocumentPair;
use docbinformer::Tensor;

/// Deterministic pseudo-random matrix in `[-1, 1)`.
pub fn matrix(rows: usize, cols: usize, seed: u64) -> Tensor<f32> {
    let mut state = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    let data = (0..rows * cols)
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
        })
        .collect();
    Tensor::new([rows, cols], data).expect("matching length")
}

pub fn page(size: usize) -> DocumentPair {
    synthetic_pair(
        "bench",
        2017,
        size,
        size,
        &Degradation::uneven_illumination(),
        42,
    )
}
