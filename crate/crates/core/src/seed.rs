//! Seed derivation helpers.

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive combination of a base seed with a sequence of keys.
pub fn derive(base: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(mix64(base), |acc, &k| mix64(acc ^ mix64(k)))
}

/// Uniform `[0, 1)` from a seed.
pub fn unit_f64(seed: u64) -> f64 {
    (mix64(seed) >> 11) as f64 / (1u64 << 53) as f64
}

/// Stable 64-bit key for a string label.
pub fn label_key(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3)
    })
}
