//! Shared fixtures for the benchmarks.

use andehaze_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform `[lo, hi)` tensor from a fixed seed.
pub fn seeded_tensor(shape: &[usize], seed: u64, lo: f32, hi: f32) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape matches length")
}

/// Seeded RGB image in `[0, 1)`.
pub fn seeded_image(h: usize, w: usize, seed: u64) -> Tensor {
    seeded_tensor(&[1, 3, h, w], seed, 0.0, 1.0)
}

/// Seeded `(keys, values)` pair of `len` vectors of width `dim`.
pub fn seeded_kv(len: usize, dim: usize, seed: u64) -> (Vec<f32>, Vec<f32>) {
    let k = seeded_tensor(&[len * dim], seed, -1.0, 1.0);
    let v = seeded_tensor(&[len * dim], seed ^ 0x9e37, -1.0, 1.0);
    (k.data().to_vec(), v.data().to_vec())
}
