//! Seed derivation.
//!
//! Every random quantity in the crate comes from a ChaCha8 stream keyed by a
//! master seed and a 64-bit stream id. ChaCha is counter based, so the same
//! `(master, stream)` pair reproduces the same draws on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type LabRng = ChaCha8Rng;

pub fn stream_rng(master: u64, stream: u64) -> LabRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng
}

/// Packs a (replication family, index) pair into one stream id.
pub fn stream_id(family: u32, index: u32) -> u64 {
    ((family as u64) << 32) | index as u64
}

/// A replication seed: the first word of stream `(family, index)` under `master`.
pub fn derive_seed(master: u64, family: u32, index: u32) -> u64 {
    use rand::RngCore;
    stream_rng(master, stream_id(family, index)).next_u64()
}

/// Uniform draw on (0, 1], the domain of the inverse-CDF samplers.
pub fn open_closed_uniform<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}
