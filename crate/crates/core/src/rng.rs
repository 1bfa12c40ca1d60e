//! Seed derivation for independent random streams.
//!
//! Every consumer of randomness (initialization, batch shuffling, confidence
//! environments, mixup anchors, ...) draws from its own stream derived from the
//! run seed plus a purpose tag and indices. Adding or removing a consumer never
//! shifts the values seen by another one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

pub fn derive_seed(seed: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut s = splitmix64(seed ^ fnv1a(tag));
    for &i in indices {
        s = splitmix64(s ^ splitmix64(i.wrapping_add(1)));
    }
    s
}

pub fn stream(seed: u64, tag: &str, indices: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, tag, indices))
}
