//! Small numeric helpers shared across modules.

/// Median of a slice; sorts the scratch buffer in place.
/// Even counts average the two middle values.
pub(crate) fn median_in_place(xs: &mut [f64]) -> f64 {
    assert!(!xs.is_empty(), "median of empty slice");
    xs.sort_unstable_by(|a, b| a.partial_cmp(b).expect("non-finite value in median"));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// FNV-1a over bytes; used for dataset fingerprints.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Derive an independent sub-seed from a run seed, a purpose tag and an index.
/// SplitMix64 finalizer; the same (seed, tag, index) always yields the same
/// sub-seed regardless of call order, so parallel schedules cannot leak in.
pub(crate) fn mix_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Purpose tags for `mix_seed`. Keeping them in one place guarantees two
/// stages never share an RNG stream by accident.
pub(crate) mod seed_tags {
    pub const BASELINE_FOLDS: u64 = 1;
    pub const GATE_SPLIT: u64 = 2;
    pub const GATE_FOREST: u64 = 3;
    pub const SEARCH_PARAMS: u64 = 4;
    pub const SEARCH_FOLDS: u64 = 5;
    pub const SEARCH_TRIAL: u64 = 6;
    pub const FINAL_FOREST: u64 = 7;
    pub const EVAL_FOLDS: u64 = 8;
    pub const TREES_CURVE: u64 = 9;
    pub const KMEANS_WINDOW: u64 = 10;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median_in_place(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median_in_place(&mut [1.0, 3.0]), 2.0);
        assert_eq!(median_in_place(&mut [5.0]), 5.0);
    }

    #[test]
    fn mix_seed_is_stable_and_spread() {
        let a = mix_seed(7, 1, 0);
        let b = mix_seed(7, 1, 0);
        assert_eq!(a, b);
        assert_ne!(mix_seed(7, 1, 0), mix_seed(7, 1, 1));
        assert_ne!(mix_seed(7, 1, 0), mix_seed(7, 2, 0));
    }

    #[test]
    fn fnv_distinguishes_inputs() {
        assert_ne!(fnv1a64(b"a"), fnv1a64(b"b"));
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
    }
}
