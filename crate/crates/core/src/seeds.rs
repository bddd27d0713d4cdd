//! Child seed derivation.
//!
//! `derive(master, index, tag)` hashes the purpose tag with FNV-1a, then mixes
//! `master`, `index` and the tag hash through three SplitMix64 finalizer
//! rounds. Distinct tags give independent streams for shuffling, noise and
//! model initialization, and the result is stable across platforms.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes()
        .fold(0xCBF2_9CE4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3))
}

pub fn derive(master: u64, index: u64, tag: &str) -> u64 {
    let h = splitmix64(master);
    let h = splitmix64(h ^ index);
    splitmix64(h ^ fnv1a(tag))
}
