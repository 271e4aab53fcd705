//! Seeded randomness streams.
//!
//! Reproducible runs derive every stream from one `u64` seed plus a stream
//! id, so independent consumers never share a generator.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// The generator used for every seeded stream.
pub type StreamRng = ChaCha20Rng;

/// Stream `stream` of the family rooted at `seed`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A generator seeded from the operating system.
pub fn from_entropy() -> StreamRng {
    ChaCha20Rng::from_entropy()
}
