//! Named seed substreams.
//!
//! A single run seed fans out into independent, stable seeds for the fold
//! splitter, the synthetic corpus, the optimizer and the synthetic backends.

/// FNV-1a over the run seed and the stream name, finished with a splitmix64
/// mix. Stable across platforms and compiler releases.
pub fn derive(seed: u64, stream: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for byte in seed.to_le_bytes().iter().chain(stream.as_bytes()) {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(PRIME);
    }
    splitmix64(h)
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a sequence of string tokens into a u64, continuing from `state`.
pub(crate) fn hash_tokens<S: AsRef<str>>(state: u64, tokens: &[S]) -> u64 {
    let mut h = state ^ 0xcbf2_9ce4_8422_2325;
    for t in tokens {
        for b in t.as_ref().as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        // token separator outside the UTF-8 byte range
        h ^= 0xff;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(h)
}
