//! Keyed random substreams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by
//! `(seed, purpose tag, unit index)`. A unit (family, replicate, SNP block)
//! always sees the same stream no matter which worker processes it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn tag_hash(tag: &str) -> u64 {
    // FNV-1a
    tag.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Independent stream for `(seed, tag, index)`.
pub fn substream(seed: u64, tag: &str, index: u64) -> Stream {
    let mut key = [0u8; 32];
    let parts = [
        splitmix64(seed),
        splitmix64(seed ^ tag_hash(tag)),
        splitmix64(tag_hash(tag).rotate_left(17) ^ 0x5851_F42D_4C95_7F2D),
        splitmix64(seed.rotate_left(32) ^ tag_hash(tag)),
    ];
    for (chunk, word) in key.chunks_exact_mut(8).zip(parts) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Derive a child seed, e.g. for a replicate of a Monte Carlo experiment.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ tag_hash(tag)).wrapping_add(index))
}
