//! Weighted 1-D histograms and scalar accumulators, the payload of every
//! reduce step.
//!
//! Bins are uniform over the half-open axis `[xmin, xmax)`. Storage index 0
//! is the underflow bin, `nbins + 1` the overflow bin. `NaN` lands in the
//! underflow bin.

use crate::wire::{ByteReader, ByteWriter, DecodeError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HistError {
    #[error("histogram needs at least one bin")]
    NoBins,
    #[error("invalid axis [{xmin}, {xmax})")]
    InvalidAxis { xmin: f64, xmax: f64 },
    #[error("non-finite weight {0}")]
    NonFiniteWeight(f64),
    #[error("cannot merge '{left}' with '{right}': {reason}")]
    Incompatible {
        left: String,
        right: String,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histo1D {
    name: String,
    nbins: u32,
    xmin: f64,
    xmax: f64,
    sumw: Vec<f64>,
    sumw2: Vec<f64>,
    entries: u64,
}

impl Histo1D {
    pub fn new(name: impl Into<String>, nbins: u32, xmin: f64, xmax: f64) -> Result<Self, HistError> {
        if nbins == 0 {
            return Err(HistError::NoBins);
        }
        if !(xmin.is_finite() && xmax.is_finite() && xmin < xmax) {
            return Err(HistError::InvalidAxis { xmin, xmax });
        }
        let n = nbins as usize + 2;
        Ok(Histo1D {
            name: name.into(),
            nbins,
            xmin,
            xmax,
            sumw: vec![0.0; n],
            sumw2: vec![0.0; n],
            entries: 0,
        })
    }

    /// Same axis, no content.
    pub fn empty_like(&self) -> Histo1D {
        Histo1D::new(self.name.clone(), self.nbins, self.xmin, self.xmax)
            .expect("axis already validated")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn nbins(&self) -> u32 {
        self.nbins
    }

    pub fn xmin(&self) -> f64 {
        self.xmin
    }

    pub fn xmax(&self) -> f64 {
        self.xmax
    }

    /// Per-bin weight sums including underflow (index 0) and overflow.
    pub fn sumw(&self) -> &[f64] {
        &self.sumw
    }

    pub fn sumw2(&self) -> &[f64] {
        &self.sumw2
    }

    pub fn entries(&self) -> u64 {
        self.entries
    }

    /// Storage index for `x`.
    pub fn storage_index(&self, x: f64) -> usize {
        if x.is_nan() || x < self.xmin {
            return 0;
        }
        if x >= self.xmax {
            return self.nbins as usize + 1;
        }
        let pos = ((x - self.xmin) / (self.xmax - self.xmin) * f64::from(self.nbins)).floor();
        let bin = (pos as i64).clamp(0, i64::from(self.nbins) - 1);
        bin as usize + 1
    }

    pub fn fill(&mut self, x: f64, w: f64) -> Result<(), HistError> {
        if !w.is_finite() {
            return Err(HistError::NonFiniteWeight(w));
        }
        let b = self.storage_index(x);
        self.sumw[b] += w;
        self.sumw2[b] += w * w;
        self.entries += 1;
        Ok(())
    }

    fn check_compatible(&self, other: &Histo1D) -> Result<(), HistError> {
        let reason = if self.name != other.name {
            Some("names differ")
        } else if self.nbins != other.nbins {
            Some("bin counts differ")
        } else if self.xmin.to_bits() != other.xmin.to_bits()
            || self.xmax.to_bits() != other.xmax.to_bits()
        {
            Some("axis ranges differ")
        } else {
            None
        };
        match reason {
            None => Ok(()),
            Some(r) => Err(HistError::Incompatible {
                left: self.name.clone(),
                right: other.name.clone(),
                reason: r.into(),
            }),
        }
    }

    /// Adds `other` into `self`.
    pub fn merge(&mut self, other: &Histo1D) -> Result<(), HistError> {
        self.check_compatible(other)?;
        for (a, b) in self.sumw.iter_mut().zip(&other.sumw) {
            *a += b;
        }
        for (a, b) in self.sumw2.iter_mut().zip(&other.sumw2) {
            *a += b;
        }
        self.entries += other.entries;
        Ok(())
    }

    pub fn merged(a: &Histo1D, b: &Histo1D) -> Result<Histo1D, HistError> {
        let mut out = a.clone();
        out.merge(b)?;
        Ok(out)
    }

    /// Σ sumw over all bins, under/overflow included.
    pub fn total_weight(&self) -> f64 {
        self.sumw.iter().sum()
    }

    /// Canonical little-endian form.
    pub fn encode(&self, w: &mut ByteWriter) {
        w.str(&self.name).expect("histogram name under 64 KiB");
        w.u32(self.nbins).f64(self.xmin).f64(self.xmax).u64(self.entries);
        for v in &self.sumw {
            w.f64(*v);
        }
        for v in &self.sumw2 {
            w.f64(*v);
        }
    }

    pub fn decode(r: &mut ByteReader<'_>) -> Result<Histo1D, DecodeError> {
        let name = r.str()?;
        let nbins = r.u32()?;
        let xmin = r.f64()?;
        let xmax = r.f64()?;
        let entries = r.u64()?;
        let n = nbins as usize + 2;
        if r.remaining() < n * 16 {
            return Err(crate::wire::Truncated.into());
        }
        let sumw = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        let sumw2 = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        Ok(Histo1D {
            name,
            nbins,
            xmin,
            xmax,
            sumw,
            sumw2,
            entries,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        self.encode(&mut w);
        w.into_inner()
    }

    /// Largest relative per-bin difference of sumw and sumw2 against
    /// `other`; `None` when the axes differ.
    pub fn max_relative_diff(&self, other: &Histo1D) -> Option<f64> {
        self.check_compatible(other).ok()?;
        let rel = |a: f64, b: f64| {
            if a == b {
                0.0
            } else {
                (a - b).abs() / a.abs().max(b.abs())
            }
        };
        let d = self
            .sumw
            .iter()
            .zip(&other.sumw)
            .chain(self.sumw2.iter().zip(&other.sumw2))
            .map(|(a, b)| rel(*a, *b))
            .fold(0.0, f64::max);
        Some(if self.entries == other.entries { d } else { d.max(1.0) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarKind {
    Count,
    Sum,
}

/// `Count` holds an integer-valued count; `Sum` a running sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarAccumulator {
    pub kind: ScalarKind,
    pub value: f64,
}

impl ScalarAccumulator {
    pub fn count() -> Self {
        ScalarAccumulator {
            kind: ScalarKind::Count,
            value: 0.0,
        }
    }

    pub fn sum() -> Self {
        ScalarAccumulator {
            kind: ScalarKind::Sum,
            value: 0.0,
        }
    }

    pub fn add(&mut self, v: f64) {
        self.value += v;
    }

    pub fn merge(&mut self, other: &ScalarAccumulator) -> Result<(), HistError> {
        if self.kind != other.kind {
            return Err(HistError::Incompatible {
                left: format!("{:?}", self.kind),
                right: format!("{:?}", other.kind),
                reason: "accumulator kinds differ".into(),
            });
        }
        self.value += other.value;
        Ok(())
    }
}

/// One named action result.
#[derive(Debug, Clone, PartialEq)]
pub enum ResultValue {
    Histo(Histo1D),
    Scalar(ScalarAccumulator),
}

impl ResultValue {
    pub fn merge(&mut self, other: &ResultValue) -> Result<(), HistError> {
        match (self, other) {
            (ResultValue::Histo(a), ResultValue::Histo(b)) => a.merge(b),
            (ResultValue::Scalar(a), ResultValue::Scalar(b)) => a.merge(b),
            _ => Err(HistError::Incompatible {
                left: "histogram".into(),
                right: "scalar".into(),
                reason: "result kinds differ".into(),
            }),
        }
    }

    /// Same shape, zero content.
    pub fn empty_like(&self) -> ResultValue {
        match self {
            ResultValue::Histo(h) => ResultValue::Histo(h.empty_like()),
            ResultValue::Scalar(s) => ResultValue::Scalar(ScalarAccumulator {
                kind: s.kind,
                value: 0.0,
            }),
        }
    }

    pub fn as_histo(&self) -> Option<&Histo1D> {
        match self {
            ResultValue::Histo(h) => Some(h),
            _ => None,
        }
    }

    pub fn as_scalar(&self) -> Option<&ScalarAccumulator> {
        match self {
            ResultValue::Scalar(s) => Some(s),
            _ => None,
        }
    }

    /// Relative difference used by the cross-mode comparisons.
    pub fn max_relative_diff(&self, other: &ResultValue) -> Option<f64> {
        match (self, other) {
            (ResultValue::Histo(a), ResultValue::Histo(b)) => a.max_relative_diff(b),
            (ResultValue::Scalar(a), ResultValue::Scalar(b)) if a.kind == b.kind => {
                Some(if a.value == b.value {
                    0.0
                } else {
                    (a.value - b.value).abs() / a.value.abs().max(b.value.abs())
                })
            }
            _ => None,
        }
    }

    pub fn encode(&self, w: &mut ByteWriter) {
        match self {
            ResultValue::Histo(h) => {
                w.u8(0);
                h.encode(w);
            }
            ResultValue::Scalar(s) => {
                w.u8(1).u8(match s.kind {
                    ScalarKind::Count => 0,
                    ScalarKind::Sum => 1,
                });
                w.f64(s.value);
            }
        }
    }

    pub fn decode(r: &mut ByteReader<'_>) -> Result<ResultValue, DecodeError> {
        match r.u8()? {
            0 => Ok(ResultValue::Histo(Histo1D::decode(r)?)),
            _ => {
                let kind = if r.u8()? == 0 {
                    ScalarKind::Count
                } else {
                    ScalarKind::Sum
                };
                Ok(ResultValue::Scalar(ScalarAccumulator {
                    kind,
                    value: r.f64()?,
                }))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h() -> Histo1D {
        Histo1D::new("h", 10, 0.0, 100.0).unwrap()
    }

    #[test]
    fn uniform_binning_and_edges() {
        let mut h = h();
        assert_eq!(h.storage_index(50.0), 6);
        assert_eq!(h.storage_index(100.0), 11);
        assert_eq!(h.storage_index(-0.1), 0);
        assert_eq!(h.storage_index(f64::NAN), 0);
        assert_eq!(h.storage_index(0.0), 1);
        assert_eq!(h.storage_index(99.999_999), 10);
        assert_eq!(h.storage_index(f64::INFINITY), 11);
        assert_eq!(h.storage_index(f64::NEG_INFINITY), 0);
        h.fill(42.0, 0.5).unwrap();
        h.fill(42.0, 0.5).unwrap();
        assert_eq!(h.sumw()[5], 1.0);
        assert_eq!(h.sumw2()[5], 0.5);
        assert_eq!(h.entries(), 2);
    }

    #[test]
    fn rejects_bad_axis_and_weight() {
        assert_eq!(Histo1D::new("x", 0, 0.0, 1.0), Err(HistError::NoBins));
        assert!(Histo1D::new("x", 1, 1.0, 1.0).is_err());
        assert!(Histo1D::new("x", 1, 0.0, f64::INFINITY).is_err());
        let mut h = h();
        assert!(h.fill(1.0, f64::NAN).is_err());
        assert!(h.fill(1.0, f64::INFINITY).is_err());
        assert_eq!(h.entries(), 0);
    }

    #[test]
    fn zero_weight_counts_as_entry() {
        let mut h = h();
        h.fill(10.0, 0.0).unwrap();
        assert_eq!(h.entries(), 1);
        assert_eq!(h.total_weight(), 0.0);
    }

    #[test]
    fn merge_identity_and_mismatch() {
        let mut a = h();
        a.fill(3.0, 2.0).unwrap();
        assert_eq!(Histo1D::merged(&a, &a.empty_like()).unwrap(), a);
        let other = Histo1D::new("h", 5, 0.0, 100.0).unwrap();
        assert!(a.merge(&other).is_err());
        let renamed = Histo1D::new("g", 10, 0.0, 100.0).unwrap();
        assert!(a.merge(&renamed).is_err());
    }

    #[test]
    fn canonical_layout() {
        let mut a = Histo1D::new("ab", 1, 0.0, 1.0).unwrap();
        a.fill(0.5, 2.0).unwrap();
        let bytes = a.to_bytes();
        // 2+2 name, 4 nbins, 8+8 axis, 8 entries, 3*8 sumw, 3*8 sumw2
        assert_eq!(bytes.len(), 4 + 4 + 16 + 8 + 48);
        assert_eq!(&bytes[..4], &[2, 0, b'a', b'b']);
        let back = Histo1D::decode(&mut ByteReader::new(&bytes)).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn scalar_accumulators() {
        let mut c = ScalarAccumulator::count();
        c.add(1.0);
        c.add(1.0);
        let mut s = ScalarAccumulator::sum();
        s.add(2.5);
        assert!(c.merge(&s).is_err());
        let mut c2 = ScalarAccumulator::count();
        c2.add(1.0);
        c.merge(&c2).unwrap();
        assert_eq!(c.value, 3.0);
    }
}
