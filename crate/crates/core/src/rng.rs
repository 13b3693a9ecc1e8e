//! Named, independent random streams derived from one master seed.
//!
//! A stream seed is `splitmix64(master ^ fnv1a64(name))`, and the stream
//! itself is a ChaCha8 generator seeded from that value. Adding or removing
//! a consumer never shifts the draws seen by any other stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const PROTOTYPES: &str = "prototypes";
pub const TRAIN_SAMPLING: &str = "train-sampling";
pub const TEST_SAMPLING: &str = "test-sampling";
pub const LONGTAIL: &str = "longtail";
pub const SHUFFLE: &str = "shuffle";
pub const BALANCED: &str = "balanced-loader";
pub const AUGMENT: &str = "augment";
pub const NOISE_IMAGES: &str = "noise-images";
pub const INIT: &str = "init";
pub const PROBE: &str = "probe";

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream_seed(master: u64, name: &str) -> u64 {
    splitmix64(master ^ fnv1a64(name.as_bytes()))
}

pub fn stream(master: u64, name: &str) -> Rng {
    Rng::seed_from_u64(stream_seed(master, name))
}
