//! Seeded random streams.
//!
//! Every consumer of randomness in a run draws from its own ChaCha stream
//! derived from the run seed, so enabling one component never shifts the
//! draws seen by another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type RunRng = ChaCha8Rng;

/// Named stream identifiers.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const MEMORY: u64 = 3;
    pub const FISHER: u64 = 4;
    pub const REFERENCE_NET: u64 = 5;
    pub const DATA: u64 = 6;
}

pub fn stream_rng(seed: u64, stream: u64) -> RunRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard normal draw via Box-Muller.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        if u1 > f64::MIN_POSITIVE {
            let r = libm::sqrt(-2.0 * libm::log(u1));
            return r * libm::cos(core::f64::consts::TAU * u2);
        }
    }
}
