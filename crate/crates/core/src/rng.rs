//! Counter-keyed random streams.
//!
//! Every random object (an environment site, a particle, a replica) owns a
//! stream whose key is a pure function of the run seed and a tuple of integer
//! tags. Results are therefore independent of iteration order and of the
//! number of worker threads.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

/// Domain tags separating the uses of a seed.
pub mod domain {
    pub const ENVIRONMENT: u64 = 0x454e_5649;
    pub const INITIAL: u64 = 0x494e_4954;
    pub const WALK: u64 = 0x5741_4c4b;
    pub const REPLICA: u64 = 0x5245_504c;
    pub const LIMIT: u64 = 0x4c49_4d54;
    pub const TASK: u64 = 0x5441_534b;
}

pub type Stream = Xoshiro256PlusPlus;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes a seed and a tag tuple into a 64-bit stream key.
#[inline]
pub fn stream_key(seed: u64, tags: &[u64]) -> u64 {
    let mut k = splitmix(seed);
    for &t in tags {
        k = splitmix(k ^ splitmix(t.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    k
}

#[inline]
pub fn stream(seed: u64, tags: &[u64]) -> Stream {
    Stream::seed_from_u64(stream_key(seed, tags))
}

/// Uniform in [0, 1) from the top 53 bits.
#[inline]
pub fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
}

/// Integer threshold `t` such that `u < t` has probability `p` for uniform `u: u64`.
#[inline]
pub fn bernoulli_threshold(p: f64) -> u64 {
    if p >= 1.0 {
        u64::MAX
    } else if p <= 0.0 {
        0
    } else {
        (p * 18_446_744_073_709_551_616.0) as u64
    }
}

#[inline]
pub fn signed_tag(x: i64) -> u64 {
    x as u64
}
