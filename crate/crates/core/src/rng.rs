//! Deterministic stream splitting.
//!
//! Every random draw in a run descends from one master seed. A stream is
//! addressed by a path of integer labels (iteration index, request index,
//! purpose tag, ...), so adding or removing work in one place never shifts
//! the random numbers consumed anywhere else.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator type used for every stream in the crate.
pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `path` into `master`, producing a child seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &label| splitmix64(acc ^ splitmix64(label)))
}

pub fn stream(master: u64, path: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, path))
}

/// Draws a fresh child seed from an existing generator.
pub fn fork(rng: &mut StreamRng) -> u64 {
    use rand::RngCore;
    rng.next_u64()
}
