//! Deterministic sub-seed derivation.

/// Splitmix-style mixing of a base seed with a stream index. Used wherever a
/// stage fans out into independent RNG streams (per window, per month) so
/// results do not depend on execution order.
pub(crate) fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
