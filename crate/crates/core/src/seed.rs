//! Stable hashing and seed derivation.
//!
//! Everything random in a run descends from one user seed. These helpers
//! must stay bit-stable across releases because persisted run directories
//! are expected to reproduce byte-identical logs.

/// SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// 64-bit hash of an integer sequence under a seed.
pub fn stable_hash(values: &[i64], seed: u64) -> u64 {
    let mut h = splitmix64(seed ^ 0xA076_1D64_78BD_642F);
    for &v in values {
        h = splitmix64(h ^ v as u64);
    }
    splitmix64(h ^ values.len() as u64)
}

/// Derives a named sub-seed, e.g. `sub_seed(run_seed, "sampling")`.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    let mut h = splitmix64(seed);
    for b in label.bytes() {
        h = splitmix64(h ^ b as u64);
    }
    h
}

/// Maps a hash to a uniform value in `[0, 1)`.
pub fn unit_interval(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}
