//! Fixtures shared by the benchmarks.

use cfm_core::{generate, PlantedInstance, SynthParams};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Planted instance with `p` candidates per image, half of them outliers.
pub fn instance(n: usize, p: usize, seed: u64) -> PlantedInstance {
    generate(&SynthParams {
        n,
        universe: p / 2,
        outliers: p - p / 2,
        sigma: 0.01,
        corruption: 0.2,
        seed,
    })
    .expect("valid parameters")
}

pub fn uniform_matrix(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}
