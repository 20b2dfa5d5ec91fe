//! Deterministic seed derivation.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by a base
//! seed and a path of words (purpose, frame, timestep, ...), so adding or
//! reordering work never shifts another consumer's numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Real;
use crate::tensor::Grid;

pub fn mix_seed(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(path.iter().fold(seed, |s, &p| mix_seed(s, p)))
}

/// FNV-1a over the bytes of `s`.
pub fn hash_str(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Standard-normal values drawn in row-major order.
pub fn normal_vec<T: Real>(seed: u64, path: &[u64], len: usize) -> Vec<T> {
    let mut rng = stream(seed, path);
    (0..len)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            T::lit(v)
        })
        .collect()
}

pub fn normal_grid<T: Real>(seed: u64, path: &[u64], height: usize, width: usize, channels: usize) -> Grid<T> {
    Grid::from_vec(height, width, channels, normal_vec(seed, path, height * width * channels))
        .expect("length matches by construction")
}
