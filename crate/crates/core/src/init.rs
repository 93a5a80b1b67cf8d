//! Seeded weight initialisation shared by the extractor and the classifier.

use crate::rng::SplitMix64;
use crate::tensor::Matrix;

pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Uniform in `[-limit, limit]` from the `(seed, tag)` substream.
pub fn uniform_matrix(rows: usize, cols: usize, limit: f64, seed: u64, tag: &str) -> Matrix {
    let mut rng = SplitMix64::substream(seed, tag);
    Matrix::from_fn(rows, cols, |_, _| rng.uniform(-limit, limit))
}

/// Glorot-uniform with fans taken from the matrix shape.
pub fn glorot_matrix(rows: usize, cols: usize, seed: u64, tag: &str) -> Matrix {
    uniform_matrix(rows, cols, glorot_limit(rows, cols), seed, tag)
}
