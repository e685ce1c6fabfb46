//! Deterministic derivation of independent RNG streams from one root seed.
//!
//! Every source of randomness in this crate is a ChaCha8 stream keyed by
//! `derive_seed(root, stream, substream)`. The derivation is a fixed part of
//! the crate's output contract: changing it changes every "same seed, same
//! bytes" guarantee, so treat the constants below as frozen.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; good avalanche, stable across platforms.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a root seed with a stream tag and a substream index into a fresh
/// seed that is statistically independent of every other (stream, substream)
/// combination under the same root.
pub fn derive_seed(root: u64, stream: u64, substream: u64) -> u64 {
    splitmix64(
        splitmix64(root.wrapping_add(splitmix64(stream)))
            .wrapping_add(splitmix64(substream.wrapping_add(0x0123_4567_89AB_CDEF))),
    )
}

/// Seeded generator for one derived stream.
pub fn rng_for(root: u64, stream: u64, substream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, stream, substream))
}
