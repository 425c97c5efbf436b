//! Seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator keyed by the master
//! seed (`seed_from_u64`) with its 64-bit stream id set to
//! FNV-1a-64 over `purpose` bytes followed by `index` as little-endian `u64`.
//! A stream therefore depends only on `(master, purpose, index)`, never on the
//! order in which streams are created or on how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn stream_id(purpose: &str, index: u64) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    purpose
        .bytes()
        .chain(index.to_le_bytes())
        .fold(OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

pub fn stream(master: u64, purpose: &str, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream_id(purpose, index));
    rng
}

/// First word of `stream(master, purpose, index)`, for handing a seed to
/// code that takes a `u64`.
pub fn derive_seed(master: u64, purpose: &str, index: u64) -> u64 {
    use rand::RngCore;
    stream(master, purpose, index).next_u64()
}

/// Packs a (member, class) pair into a single stream index.
pub fn member_index(member: usize, class: usize) -> u64 {
    ((member as u64) << 16) | class as u64
}
