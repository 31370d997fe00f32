//! Input fixtures shared by the criterion benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` pseudo-random texts of `words` tokens drawn from a 500-word vocabulary.
pub fn texts(n: usize, words: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            (0..words)
                .map(|_| format!("w{}", rng.gen_range(0..500)))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

/// Scores on a coarse grid (so some tie) with random labels, both classes present.
pub fn scored(n: usize, seed: u64) -> (Vec<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores = (0..n)
        .map(|_| f64::from(rng.gen_range(0..200u32)) / 10.0)
        .collect();
    let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.2))).collect();
    labels[0] = 0;
    labels[n - 1] = 1;
    (scores, labels)
}

pub fn vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()
}
