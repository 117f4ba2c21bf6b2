//! Seed derivation.
//!
//! Per-run and per-member seeds come from a master seed through splitmix64,
//! so a child stream depends only on `(master, index)` and never on the order
//! in which siblings are created.

/// Child seed `index` of `master`.
pub fn split(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn children_are_distinct_and_stable() {
        let s: Vec<u64> = (0..64).map(|k| split(42, k)).collect();
        let mut d = s.clone();
        d.sort_unstable();
        d.dedup();
        assert_eq!(d.len(), 64);
        assert_eq!(split(42, 3), s[3]);
        assert_ne!(split(43, 3), s[3]);
    }
}
