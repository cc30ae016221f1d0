//! Deterministic seed derivation.
//!
//! Every random object is a pure function of a master seed and a label
//! (cascade address, replica number, ...). Streams are therefore independent
//! of traversal order and thread scheduling.

use rand::SeedableRng;
use rand_xoshiro::{SplitMix64, Xoshiro256PlusPlus};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finaliser.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combine a seed with a tag and an index into a new 64-bit seed.
#[inline]
pub fn derive(seed: u64, tag: u64, index: u64) -> u64 {
    let a = mix64(seed.wrapping_add(GOLDEN));
    let b = mix64(a ^ tag.wrapping_mul(GOLDEN).rotate_left(17));
    mix64(b ^ index.wrapping_add(0x632b_e59b_d9b4_e019))
}

/// Stream tags; distinct consumers of the same master seed never share a stream.
pub mod tag {
    pub const CASCADE: u64 = 1;
    pub const REPLICA: u64 = 2;
    pub const EXCURSION: u64 = 3;
    pub const LEAVES: u64 = 4;
    pub const BOOTSTRAP: u64 = 5;
    pub const ROOT_PERTURBATION: u64 = 6;
    pub const POPULATION: u64 = 7;
    pub const SPLIT: u64 = 8;
}

/// Cheap generator for the many short per-address streams of a cascade.
#[inline]
pub fn address_rng(seed: u64, level: u32, index: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(derive(seed, tag::CASCADE ^ ((level as u64) << 8), index))
}

/// General purpose generator for longer streams (excursions, bootstrap, ...).
pub fn stream(seed: u64, tag: u64, index: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(derive(seed, tag, index))
}

/// Seed for replica `r` of an ensemble.
pub fn replica_seed(master: u64, r: u64) -> u64 {
    derive(master, tag::REPLICA, r)
}
