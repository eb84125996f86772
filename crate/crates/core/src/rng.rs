//! Seeded random streams. Every source of randomness in a run is derived
//! from one user seed plus a named stream and an optional index, so the
//! components can be varied independently while staying reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named sub-streams of the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data,
    Split,
    Init,
    Dropout,
    Masking,
    Shuffle,
    Trials,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Data => 0x11,
            Stream::Split => 0x22,
            Stream::Init => 0x33,
            Stream::Dropout => 0x44,
            Stream::Masking => 0x55,
            Stream::Shuffle => 0x66,
            Stream::Trials => 0x77,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG for `stream` under `seed`, further keyed by `index` (e.g. an
/// identity number for per-identity generation).
pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> Rng {
    let mut bytes = [0u8; 32];
    let mut state = splitmix64(seed) ^ stream.tag().rotate_left(32) ^ splitmix64(index ^ 0xA5A5);
    for chunk in bytes.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}
