//! Deterministic seed derivation so every random stream is addressable by
//! purpose and position, independent of evaluation order.

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `tag` at position `parts` under the run seed `base`.
pub fn derive_seed(base: u64, tag: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(base ^ mix(tag)), |acc, &p| mix(acc ^ p))
}
