//! Seed derivation.
//!
//! Every random draw in the pipeline is keyed on a sub-seed computed from its
//! logical coordinates (base seed, task, step, draw index), never on the order
//! in which workers happen to run. The mixing functions below are fixed and
//! platform independent; changing them changes every generated artifact.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over raw bytes.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one well-mixed 64-bit value.
pub fn combine(words: &[u64]) -> u64 {
    words.iter().fold(0x5eed_u64, |acc, &w| mix64(acc ^ mix64(w)))
}

/// Sub-seed for draw `draw` of step `t` of `task_id` under `base`.
pub fn sub_seed(base: u64, task_id: &str, t: u64, draw: u64) -> u64 {
    combine(&[base, fnv1a(task_id.as_bytes()), t, draw])
}

/// Seed for rollout `j` of an estimate keyed on `base`.
pub fn rollout_seed(base: u64, j: u64) -> u64 {
    combine(&[base, 0x726f_6c6c, j])
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
