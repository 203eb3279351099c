//! Counter-based seed derivation.
//!
//! Seeds are pure functions of `(base_seed, indices…)`, so a trial's random
//! streams do not depend on which worker runs it or in what order.

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash an ordered tuple of integers into one seed.
pub fn mix(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6A09_E667_F3BC_C908, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Seed of trial `trial` at sweep point `r_index`.
///
/// The policy is deliberately not part of the key: every policy sees the same
/// signal and noise at a given `(r_index, trial)`, which makes policy
/// comparisons paired.
pub fn trial_seed(base_seed: u64, r_index: usize, trial: usize) -> u64 {
    mix(&[base_seed, r_index as u64, trial as u64])
}
