//! Flattened model parameters as ordered, named segments.
//!
//! A `ParamVector` is the unit that crosses the wire and the unit the
//! aggregation strategies average. Each layer contributes one segment per
//! parameter tensor (e.g. `l03.conv.w`), so client and server halves of a
//! model can be merged, split, and recombined by name without positional
//! bookkeeping.
//!
//! Binary layout (all integers little-endian):
//! `u32` segment count, then per segment: `u32` name length, UTF-8 name
//! bytes, `u32` rank, `u64` per dimension, and `f64` per value.

use crate::error::{Result, SplitFedError};
use crate::numerics::stable_sum;
use sha2::{Digest, Sha256};

const MAX_NAME_BYTES: u32 = 4096;
const MAX_RANK: u32 = 8;
const MAX_SEGMENT_VALUES: u64 = 1 << 31;

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Segment {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(SplitFedError::Data("segment name must be non-empty".into()));
        }
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(SplitFedError::Shape(format!(
                "segment {name:?} has invalid shape {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(SplitFedError::Shape(format!(
                "segment {name:?} shape {shape:?} expects {expected} values, got {}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(SplitFedError::Numerics(format!(
                "segment {name:?} contains non-finite values"
            )));
        }
        Ok(Segment { name, shape, data })
    }
}

/// An ordered collection of uniquely named parameter segments.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamVector {
    segments: Vec<Segment>,
}

impl ParamVector {
    pub fn new() -> Self {
        ParamVector::default()
    }

    pub fn from_segments(segments: Vec<Segment>) -> Result<Self> {
        let mut pv = ParamVector::new();
        for s in segments {
            pv.push(s)?;
        }
        Ok(pv)
    }

    pub fn push(&mut self, segment: Segment) -> Result<()> {
        if self.segment(&segment.name).is_some() {
            return Err(SplitFedError::Data(format!(
                "duplicate segment name {:?}",
                segment.name
            )));
        }
        self.segments.push(segment);
        Ok(())
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Mutable access for in-place math; callers must keep names and shapes
    /// intact.
    pub fn segments_mut(&mut self) -> &mut [Segment] {
        &mut self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut Segment> {
        self.segments.iter_mut().find(|s| s.name == name)
    }

    /// Total scalar count across all segments.
    pub fn num_values(&self) -> usize {
        self.segments.iter().map(|s| s.data.len()).sum()
    }

    /// True when both vectors have the same segment names, order, and shapes.
    pub fn compatible(&self, other: &ParamVector) -> bool {
        self.segments.len() == other.segments.len()
            && self
                .segments
                .iter()
                .zip(&other.segments)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    fn require_compatible(&self, other: &ParamVector, what: &str) -> Result<()> {
        if !self.compatible(other) {
            return Err(SplitFedError::Shape(format!(
                "{what}: parameter vectors are not compatible"
            )));
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> ParamVector {
        ParamVector {
            segments: self
                .segments
                .iter()
                .map(|s| Segment {
                    name: s.name.clone(),
                    shape: s.shape.clone(),
                    data: vec![0.0; s.data.len()],
                })
                .collect(),
        }
    }

    /// In-place `self += alpha * other` (sequential, used by optimizers).
    pub fn add_scaled(&mut self, alpha: f64, other: &ParamVector) -> Result<()> {
        self.require_compatible(other, "add_scaled")?;
        for (a, b) in self.segments.iter_mut().zip(&other.segments) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += alpha * y;
            }
        }
        Ok(())
    }

    /// Per-scalar `ca * a + cb * b`.
    pub fn affine(a: &ParamVector, ca: f64, b: &ParamVector, cb: f64) -> Result<ParamVector> {
        a.require_compatible(b, "affine")?;
        let segments = a
            .segments
            .iter()
            .zip(&b.segments)
            .map(|(sa, sb)| {
                let data = sa
                    .data
                    .iter()
                    .zip(&sb.data)
                    .map(|(x, y)| ca * x + cb * y)
                    .collect();
                Segment::new(sa.name.clone(), sa.shape.clone(), data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ParamVector { segments })
    }

    /// Weighted combination `sum_i coeffs[i] * vectors[i]`.
    ///
    /// Every output scalar is reduced with [`stable_sum`], so permuting the
    /// `(coefficient, vector)` pairs cannot change a single output bit.
    pub fn linear_combination(terms: &[(f64, &ParamVector)]) -> Result<ParamVector> {
        let (first_coeff, first) = terms
            .first()
            .ok_or_else(|| SplitFedError::Data("linear combination of zero vectors".into()))?;
        if !first_coeff.is_finite() || terms.iter().any(|(c, _)| !c.is_finite()) {
            return Err(SplitFedError::Numerics(
                "linear combination has non-finite coefficients".into(),
            ));
        }
        for (_, v) in terms.iter().skip(1) {
            first.require_compatible(v, "linear_combination")?;
        }
        let mut buf = vec![0.0f64; terms.len()];
        let segments = (0..first.segments.len())
            .map(|si| {
                let proto = &first.segments[si];
                let data = (0..proto.data.len())
                    .map(|j| {
                        for (slot, (c, v)) in buf.iter_mut().zip(terms) {
                            *slot = c * v.segments[si].data[j];
                        }
                        stable_sum(&mut buf)
                    })
                    .collect();
                Segment::new(proto.name.clone(), proto.shape.clone(), data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ParamVector { segments })
    }

    /// Concatenates parameter vectors; segment names must stay unique.
    pub fn merge(parts: &[&ParamVector]) -> Result<ParamVector> {
        let mut out = ParamVector::new();
        for p in parts {
            for s in &p.segments {
                out.push(s.clone())?;
            }
        }
        Ok(out)
    }

    /// Extracts the named segments, in `names` order.
    pub fn subset(&self, names: &[String]) -> Result<ParamVector> {
        let mut out = ParamVector::new();
        for name in names {
            let seg = self.segment(name).ok_or_else(|| {
                SplitFedError::Data(format!("parameter vector has no segment {name:?}"))
            })?;
            out.push(seg.clone())?;
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.segments.len() as u32).to_le_bytes());
        for s in &self.segments {
            out.extend_from_slice(&(s.name.len() as u32).to_le_bytes());
            out.extend_from_slice(s.name.as_bytes());
            out.extend_from_slice(&(s.shape.len() as u32).to_le_bytes());
            for &d in &s.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &s.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ParamVector> {
        let mut r = Reader { bytes, pos: 0 };
        let count = r.u32("segment count")?;
        let mut pv = ParamVector::new();
        for i in 0..count {
            let ctx = format!("segment {i} of {count}");
            let name_len = r.u32(&ctx)?;
            if name_len > MAX_NAME_BYTES {
                return Err(SplitFedError::Serde(format!(
                    "{ctx}: name length {name_len} exceeds limit {MAX_NAME_BYTES}"
                )));
            }
            let name_bytes = r.take(name_len as usize, &ctx)?;
            let name = std::str::from_utf8(name_bytes)
                .map_err(|_| SplitFedError::Serde(format!("{ctx}: name is not valid UTF-8")))?
                .to_string();
            let rank = r.u32(&ctx)?;
            if rank == 0 || rank > MAX_RANK {
                return Err(SplitFedError::Serde(format!(
                    "{ctx} ({name:?}): rank {rank} outside 1..={MAX_RANK}"
                )));
            }
            let mut shape = Vec::with_capacity(rank as usize);
            let mut total: u64 = 1;
            for _ in 0..rank {
                let d = r.u64(&ctx)?;
                if d == 0 {
                    return Err(SplitFedError::Serde(format!(
                        "{ctx} ({name:?}): zero dimension"
                    )));
                }
                total = total.saturating_mul(d);
                shape.push(d as usize);
            }
            if total > MAX_SEGMENT_VALUES {
                return Err(SplitFedError::Serde(format!(
                    "{ctx} ({name:?}): {total} values exceeds limit {MAX_SEGMENT_VALUES}"
                )));
            }
            let raw = r.take(total as usize * 8, &ctx)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            pv.push(Segment::new(name, shape, data)?)?;
        }
        if r.pos != bytes.len() {
            return Err(SplitFedError::Serde(format!(
                "{} trailing bytes after final segment",
                bytes.len() - r.pos
            )));
        }
        Ok(pv)
    }

    /// SHA-256 of the serialized bytes, as lowercase hex.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_bytes());
        let out = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for b in out {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, ctx: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(SplitFedError::Serde(format!(
                "{ctx}: truncated payload, needed {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, ctx: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, ctx)?.try_into().unwrap()))
    }

    fn u64(&mut self, ctx: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, ctx)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamVector {
        ParamVector::from_segments(vec![
            Segment::new("a.w", vec![2, 2], vec![1.0, -2.0, 0.5, 3.25]).unwrap(),
            Segment::new("a.b", vec![2], vec![0.0, -0.0]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_exact_bits() {
        let pv = sample();
        let back = ParamVector::from_bytes(&pv.to_bytes()).unwrap();
        assert_eq!(pv, back);
        // -0.0 must survive with its sign bit.
        assert_eq!(back.segment("a.b").unwrap().data[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn serialized_layout_matches_the_documented_format() {
        let pv = ParamVector::from_segments(vec![Segment::new(
            "w",
            vec![1, 2],
            vec![1.5, -4.0],
        )
        .unwrap()])
        .unwrap();
        let mut expect = Vec::new();
        expect.extend_from_slice(&1u32.to_le_bytes()); // segment count
        expect.extend_from_slice(&1u32.to_le_bytes()); // name length
        expect.extend_from_slice(b"w");
        expect.extend_from_slice(&2u32.to_le_bytes()); // rank
        expect.extend_from_slice(&1u64.to_le_bytes());
        expect.extend_from_slice(&2u64.to_le_bytes());
        expect.extend_from_slice(&1.5f64.to_le_bytes());
        expect.extend_from_slice(&(-4.0f64).to_le_bytes());
        assert_eq!(pv.to_bytes(), expect);
    }

    #[test]
    fn truncated_payload_reports_missing_segment() {
        let pv = sample();
        let mut bytes = pv.to_bytes();
        // Claim one more segment than the payload holds.
        bytes[0..4].copy_from_slice(&3u32.to_le_bytes());
        let err = ParamVector::from_bytes(&bytes).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("truncated"), "unexpected error: {msg}");
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut pv = ParamVector::new();
        pv.push(Segment::new("x", vec![1], vec![1.0]).unwrap()).unwrap();
        assert!(pv.push(Segment::new("x", vec![1], vec![2.0]).unwrap()).is_err());
    }

    #[test]
    fn digest_is_stable_and_content_sensitive() {
        let pv = sample();
        assert_eq!(pv.digest(), pv.digest());
        assert_eq!(pv.digest().len(), 64);
        let mut other = sample();
        other.segment_mut("a.w").unwrap().data[0] = 1.0000000001;
        assert_ne!(pv.digest(), other.digest());
    }

    #[test]
    fn linear_combination_is_permutation_invariant_bitwise() {
        let a = sample();
        let mut b = sample();
        let mut c = sample();
        for (i, s) in b.segments.iter_mut().enumerate() {
            for (j, v) in s.data.iter_mut().enumerate() {
                *v += (i as f64 + 1.0) * 0.137 + j as f64 * 1e-7;
            }
        }
        for s in c.segments.iter_mut() {
            for v in s.data.iter_mut() {
                *v = *v * 1.000001 + 1e16;
            }
        }
        let forward =
            ParamVector::linear_combination(&[(0.25, &a), (0.35, &b), (0.4, &c)]).unwrap();
        let shuffled =
            ParamVector::linear_combination(&[(0.4, &c), (0.25, &a), (0.35, &b)]).unwrap();
        assert_eq!(forward.to_bytes(), shuffled.to_bytes());
    }

    #[test]
    fn convex_combination_of_identical_vectors_is_identity() {
        let a = sample();
        let out = ParamVector::linear_combination(&[(0.3, &a), (0.45, &a), (0.25, &a)]).unwrap();
        for (s, o) in a.segments().iter().zip(out.segments()) {
            for (x, y) in s.data.iter().zip(&o.data) {
                assert!((x - y).abs() < 1e-15, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn subset_and_merge_round_trip() {
        let pv = sample();
        let names: Vec<String> = vec!["a.b".into()];
        let sub = pv.subset(&names).unwrap();
        assert_eq!(sub.segments().len(), 1);
        let head = pv.subset(&["a.w".to_string()]).unwrap();
        let merged = ParamVector::merge(&[&head, &sub]).unwrap();
        assert_eq!(merged, pv);
        assert!(pv.subset(&["missing".to_string()]).is_err());
    }
}
