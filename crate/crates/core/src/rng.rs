//! Seed derivation and named random substreams.
//!
//! Every random quantity in the crate comes from a ChaCha8 generator keyed by a
//! 64-bit seed derived from `(root seed, index)` and a stream id naming what the
//! draws are for. Units, replicates and cells therefore own independent streams
//! and can be evaluated in any order or on any number of threads.
//!
//! The seed mix is the SplitMix64 finalizer applied to a running combination of
//! the parts:
//!
//! ```text
//! h = 0x9E3779B97F4A7C15
//! for p in parts: h = mix(h ^ mix(p + 0x9E3779B97F4A7C15))
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Version tag of the stream layout; bump when the mapping from seeds to draws changes.
pub const STREAM_LAYOUT_VERSION: u32 = 1;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// What a substream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    /// Latent ranks `U_i`, one stream per draw.
    Rank = 0,
    /// Regressor innovations `Z_it`, one stream per unit.
    Regressor = 1,
    /// Idiosyncratic disturbances `V_it`, one stream per unit.
    Noise = 2,
    /// Bootstrap resampling indices, one stream per replicate.
    Resample = 3,
    /// Stand-alone probe draws, one stream per replicate.
    Probe = 4,
}

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive 64-bit hash of a tuple of integers.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(GOLDEN, |h, &p| mix64(h ^ mix64(p.wrapping_add(GOLDEN))))
}

/// Generator for stream `stream` of the child seed `(seed, index)`.
pub fn substream(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, index]));
    rng.set_stream(stream as u64);
    rng
}
