//! Seeding policy: one master seed, one independent stream per replicate.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Generator for a given replicate of an experiment: same master seed,
/// stream selected by replicate index, so replicates are independent and
/// individually reproducible regardless of execution order.
pub fn replicate_rng(master_seed: u64, replicate: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(replicate);
    rng
}

/// Stand-alone generator for single simulations (stream 0).
pub fn seeded_rng(seed: u64) -> ChaCha12Rng {
    replicate_rng(seed, 0)
}
