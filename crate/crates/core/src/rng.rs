//! Counter-based random streams.
//!
//! Every stream is a ChaCha8 keystream selected by `(seed, stream id)`, where
//! the stream id mixes a purpose tag with up to two indices. Streams never
//! depend on how many numbers another stream consumed, so comparator arms that
//! share a seed see identical patient streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Covariates = 1,
    Clearance = 2,
    Efficacy = 3,
    ToxEventTime = 4,
    EffEventTime = 5,
    Arrival = 6,
    Randomization = 7,
    EfficacyMcmc = 8,
    PkMcmc = 9,
    Scratch = 10,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream identifier for `(purpose, a, b)`.
pub fn stream_id(purpose: Purpose, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(purpose as u64) ^ a) ^ b.rotate_left(17))
}

/// Opens the keystream for `(seed, purpose, a, b)`.
pub fn stream(seed: u64, purpose: Purpose, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(purpose, a, b));
    rng
}

/// Derives a child seed, used to key a replicate's streams from a study seed.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0xD1B5_4A32_D192_ED03)))
}
