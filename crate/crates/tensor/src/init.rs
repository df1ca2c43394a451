//! Seeded parameter initialisation.
//!
//! Each parameter draws from its own ChaCha stream derived from the run seed
//! and the parameter name, so adding a parameter never shifts another's values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::real::Real;
use crate::tensor::Tensor;

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Deterministic RNG stream named `name` under `seed`.
pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(fnv1a(name.as_bytes()))))
}

pub fn uniform<F: Real>(shape: &[usize], low: f64, high: f64, rng: &mut impl Rng) -> Tensor<F> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| F::from_f64(rng.random_range(low..high))).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// Glorot-uniform for a `[fan_in×fan_out]` matrix.
pub fn glorot_uniform<F: Real>(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(&[fan_in, fan_out], -limit, limit, rng)
}
