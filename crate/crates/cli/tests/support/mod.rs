//! Support code for the acceptance suite: a compact double-double
//! arithmetic kit serving as the high-precision oracle for averaging
//! weights, and a tiny FNV digest for reporting byte-identity.

/// A double-double number `hi + lo` with `|lo|` at most half an ulp of
/// `hi`, carrying roughly 106 significand bits. Each operation keeps the
/// compound error far below the 1e-12 tolerances the oracle serves, so
/// rounding a result back to f64 is authoritative at that scale.
#[derive(Clone, Copy, Debug)]
pub struct Dd {
    hi: f64,
    lo: f64,
}

/// Error-free sum: `a + b == s + e` exactly (branch-free two-sum).
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    (s, e)
}

/// Error-free product: `a * b == p + e` exactly (fused multiply-add).
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let e = a.mul_add(b, -p);
    (p, e)
}

impl Dd {
    pub fn zero() -> Dd {
        Dd { hi: 0.0, lo: 0.0 }
    }

    pub fn from_f64(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    fn renorm(hi: f64, lo: f64) -> Dd {
        let (s, e) = two_sum(hi, lo);
        Dd { hi: s, lo: e }
    }

    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        Dd::renorm(s, e + self.lo + o.lo)
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(Dd { hi: -o.hi, lo: -o.lo })
    }

    pub fn mul_f64(self, y: f64) -> Dd {
        let (p, e) = two_prod(self.hi, y);
        Dd::renorm(p, e + self.lo * y)
    }

    /// Quotient by long division; three correction rounds leave the
    /// remainder at the third-order term, far beyond double-double
    /// precision itself.
    pub fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r1 = self.sub(o.mul_f64(q1));
        let q2 = r1.hi / o.hi;
        let r2 = r1.sub(o.mul_f64(q2));
        let q3 = r2.hi / o.hi;
        Dd::renorm(q1, q2).add(Dd::from_f64(q3))
    }

    /// `1/x` to double-double precision.
    pub fn recip(x: f64) -> Dd {
        Dd::from_f64(1.0).div(Dd::from_f64(x))
    }

    /// `exp(self)` for non-positive arguments: the f64 exponential of
    /// `hi` with a second-order Taylor correction for `lo`. Arguments
    /// below the f64 underflow cliff return exactly zero — the same
    /// place a plain f64 softmax term vanishes.
    pub fn exp(self) -> Dd {
        if self.hi < -746.0 {
            return Dd::zero();
        }
        let base = self.hi.exp();
        let corr = self.lo + 0.5 * self.lo * self.lo;
        let (p, e) = two_prod(base, corr);
        let (s, e2) = two_sum(base, p);
        Dd::renorm(s, e2 + e)
    }

    pub fn gt(self, o: Dd) -> bool {
        self.hi > o.hi || (self.hi == o.hi && self.lo > o.lo)
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

/// 64-bit FNV-1a digest; compact fingerprints for byte-identity lines.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_double_div_recovers_exact_thirds() {
        let third = Dd::from_f64(1.0).div(Dd::from_f64(3.0));
        // hi must be the correctly rounded 1/3 and lo the residue.
        assert_eq!(third.to_f64(), 1.0 / 3.0);
        let back = third.mul_f64(3.0);
        assert!((back.to_f64() - 1.0).abs() < 1e-30);
    }

    #[test]
    fn exp_matches_f64_on_pure_highs() {
        let e = Dd::from_f64(-2.5).exp();
        assert!((e.to_f64() - (-2.5f64).exp()).abs() <= f64::EPSILON);
        assert_eq!(Dd::from_f64(-800.0).exp().to_f64(), 0.0);
    }

    #[test]
    fn fnv_digest_is_stable() {
        // Frozen reference: FNV-1a of "splitfed".
        assert_eq!(fnv1a64(b"splitfed"), 0xae70_0696_624a_ce5e);
    }
}
