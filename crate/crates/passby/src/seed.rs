//! Deterministic derivation of independent RNG stream seeds.
//!
//! Every randomized stage seeds its own generator from a base seed plus a
//! fixed tuple of stream indices, so results do not depend on execution
//! order or thread scheduling.

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `base` with each part in order. Distinct tuples give unrelated
/// seeds; the same tuple always gives the same seed.
pub(crate) fn derive(base: u64, parts: &[u64]) -> u64 {
    let mut h = splitmix(base);
    for &p in parts {
        h = splitmix(h ^ splitmix(p));
    }
    h
}
