//! Seed derivation and per-purpose random substreams.
//!
//! Every random draw comes from a `ChaCha8Rng` keyed by a 64-bit seed with a
//! fixed stream id per purpose, so a dataset depends only on `(dgp, n, seed)`
//! and never on thread scheduling. Replicate seeds are derived from the
//! scenario seed with [`replicate_seed`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a substream is used for. The discriminant is the ChaCha stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Strata = 1,
    Treatment = 2,
    Noise = 3,
    Folds = 4,
}

pub fn substream(seed: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `index` in a study seeded with `seed`:
/// `mix64(seed ^ mix64(index))`.
pub fn replicate_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index))
}
