//! Seed derivation and random streams.
//!
//! Every random quantity in a run comes from its own ChaCha8 stream whose seed
//! is derived from `(base seed, stream label, replication index)`. ChaCha is
//! counter based and its output is specified bit for bit, so identical seeds
//! produce identical streams on every platform.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in label.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Mixes a base seed, a stream label and a replication index into a new seed.
pub fn derive_seed(base: u64, label: &str, replication: u64) -> u64 {
    let a = splitmix64(base);
    let b = splitmix64(a ^ fnv1a(label));
    splitmix64(b ^ replication.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn stream(base: u64, label: &str, replication: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(base, label, replication))
}

/// Uniform size-`k` subset of `0..n`: shuffle `0..n` and keep the first `k`,
/// returned in ascending order.
pub fn random_subset<R: rand::Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    let mut items: Vec<usize> = (0..n).collect();
    items.shuffle(rng);
    items.truncate(k.min(n));
    items.sort_unstable();
    items
}
