//! Seeding conventions.
//!
//! All randomness flows through ChaCha8, a counter-based generator whose
//! output is identical across platforms. Independent runs of one experiment
//! draw from separate streams of the same master seed, so fan-out over
//! threads cannot change any run's numbers.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for stream `stream` of `master_seed`.
pub fn stream_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Generator for a single-run operation (stream 0).
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    stream_rng(seed, 0)
}
