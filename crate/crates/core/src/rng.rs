//! Seeded random streams.
//!
//! Every consumer derives an independent ChaCha stream from
//! `(seed, domain, index)`, so parallel workers and re-runs draw identical
//! numbers regardless of scheduling.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type DetRng = ChaCha8Rng;

/// Stream domains; keep values stable, they are baked into datasets.
pub mod domain {
    pub const ASSET: u64 = 1;
    pub const ANIMATION: u64 = 2;
    pub const MOTION_CAMERAS: u64 = 3;
    pub const KMEANS: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const MODEL_INIT: u64 = 7;
    pub const TRAIN: u64 = 8;
    pub const SAMPLE: u64 = 9;
    pub const FEATURES: u64 = 10;
    pub const CODEC: u64 = 11;
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn stream(seed: u64, domain: u64, index: u64) -> DetRng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(domain)));
    rng.set_stream(index);
    rng
}

/// Uniform draw in `[lo, hi)`.
pub fn uniform<R: RngCore + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Standard normal draw (Box-Muller).
pub fn normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.random();
        if u1 > 0.0 {
            let u2: f64 = rng.random();
            return libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2);
        }
    }
}
