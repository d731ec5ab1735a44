/// Relative tolerance used by every conservation check in the crate.
pub(crate) const REL_TOL: f64 = 1e-9;

/// `|a - b| <= tol * max(|a|, |b|, 1)`.
pub(crate) fn approx_eq(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// `a <= b` up to a relative slack.
pub(crate) fn approx_le(a: f64, b: f64, tol: f64) -> bool {
    a <= b + tol * a.abs().max(b.abs()).max(1.0)
}

/// SplitMix64 finalizer, used to derive independent per-graph seeds.
pub(crate) fn mix_seed(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix_seed(base), |acc, &p| mix_seed(acc ^ p))
}
