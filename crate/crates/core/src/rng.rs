//! Seed derivation.
//!
//! All randomness comes from [`ChaCha8Rng`], whose output is specified
//! independently of platform and word size. A master seed is expanded into
//! independent streams by (purpose, index): the ChaCha stream id carries the
//! purpose tag in its upper 32 bits and the index in the lower 32 bits, so for
//! example the shuffle order of epoch 7 never shares keystream with the noise
//! injection or the weight initialisation of the same run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose tag of a derived stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Stream {
    Data = 1,
    Split = 2,
    Noise = 3,
    Init = 4,
    Shuffle = 5,
    Subsample = 6,
    Model = 7,
    Assignment = 8,
    Confidence = 9,
    MonteCarlo = 10,
}

/// Derive the stream `(purpose, index)` of master `seed`.
pub fn stream(seed: u64, purpose: Stream, index: u32) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 32) | index as u64);
    rng
}
