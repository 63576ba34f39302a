//! Order-canonical floating-point reductions.
//!
//! Floating-point addition is not associative, so a sum over clients would
//! normally depend on client order. Every reduction across the client axis
//! in this crate goes through [`stable_sum`], which sorts the addends by
//! value first; permuting the inputs then cannot change the result bit.

/// Sums `values` after sorting them ascending by `f64::total_cmp`.
///
/// The buffer is sorted in place. Equal multisets of inputs produce
/// bit-identical sums regardless of their original order.
pub fn stable_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}

/// Mean of `values` via the canonical sorted sum.
pub fn stable_mean(values: &mut [f64]) -> f64 {
    let n = values.len();
    stable_sum(values) / n as f64
}

/// Error-free sum: returns `(s, e)` with `s = fl(a + b)` and `s + e = a + b`
/// exactly (Knuth's TwoSum).
pub fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    (s, e)
}

/// Sum of `values` as an unevaluated double-word `(hi, lo)` pair, sorted
/// first so the result is permutation-invariant like [`stable_sum`].
pub fn compensated_sum(values: &mut [f64]) -> (f64, f64) {
    values.sort_unstable_by(f64::total_cmp);
    let mut hi = 0.0;
    let mut lo = 0.0;
    for &v in values.iter() {
        let (s, e) = two_sum(hi, v);
        let (h, l) = two_sum(s, lo + e);
        hi = h;
        lo = l;
    }
    (hi, lo)
}

/// `num / (den_hi + den_lo)` with one Newton correction against the
/// double-word denominator, so the result matches the true ratio to well
/// under an ulp. Used where a quotient of two mathematically exact values
/// (say `x / (N·x)`) must land on the correctly rounded answer.
pub fn compensated_ratio(num: f64, den: (f64, f64)) -> f64 {
    let (dh, dl) = den;
    let q0 = num / dh;
    // Residual num - q0*(dh + dl), with the dominant product fused.
    let r = (-q0).mul_add(dh, num) - q0 * dl;
    q0 + r / dh
}
