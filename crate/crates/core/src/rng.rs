//! Seeded random streams.
//!
//! Every stochastic component draws from ChaCha8 (`rand_chacha::ChaCha8Rng`)
//! seeded through `SeedableRng::seed_from_u64`. Uniforms take the top 53 bits
//! of a `u64` draw; normals use the Box-Muller transform on two uniforms. Both
//! mappings are spelled out here rather than delegated so that a port in
//! another language can reproduce the streams bit for bit.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for a named sub-task.
pub fn derive(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform in `[0, 1)`.
pub fn uniform(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in `(0, 1]`, safe to feed into `ln`.
fn uniform_open(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draw. Consumes exactly two `u64` words.
pub fn normal(rng: &mut impl RngCore) -> f64 {
    let u1 = uniform_open(rng);
    let u2 = uniform(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Fisher-Yates shuffle driven by [`uniform`].
pub fn shuffle<T>(rng: &mut impl RngCore, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = ((uniform(rng) * (i + 1) as f64) as usize).min(i);
        items.swap(i, j);
    }
}
