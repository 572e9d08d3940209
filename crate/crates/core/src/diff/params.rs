//! Flat parameter storage with a named segment table.
//!
//! All trainable state lives in one `Vec<f64>` so optimizers, finite
//! differencing, checkpointing and Reptile-style interpolation can treat a
//! model as a single vector. Segments carve it into named tensors.

use crate::error::{Error, Result};

/// One named tensor inside a [`ParamVector`]. `dims` is row-major; `len`
/// is the product of `dims`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub dims: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat `f64` vector plus segment table. Segments are contiguous, in
/// order, and cover the whole vector exactly; the constructor enforces it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    segments: Vec<Segment>,
}

impl ParamVector {
    /// Builds a zeroed vector from `(name, dims)` pairs, assigning offsets
    /// in order.
    pub fn zeros(spec: &[(&str, Vec<usize>)]) -> Self {
        let mut segments = Vec::with_capacity(spec.len());
        let mut offset = 0;
        for (name, dims) in spec {
            let seg = Segment { name: (*name).to_string(), offset, dims: dims.clone() };
            offset += seg.len();
            segments.push(seg);
        }
        ParamVector { values: vec![0.0; offset], segments }
    }

    /// Wraps existing values in a segment table, checking coverage.
    pub fn from_parts(values: Vec<f64>, segments: Vec<Segment>) -> Result<Self> {
        let mut offset = 0;
        for seg in &segments {
            if seg.offset != offset {
                return Err(Error::numeric(format!(
                    "segment {} starts at {} but previous segments end at {}",
                    seg.name, seg.offset, offset
                )));
            }
            offset += seg.len();
        }
        if offset != values.len() {
            return Err(Error::numeric(format!(
                "segments cover {} values but vector holds {}",
                offset,
                values.len()
            )));
        }
        Ok(ParamVector { values, segments })
    }

    pub fn zeros_like(&self) -> Self {
        ParamVector { values: vec![0.0; self.values.len()], segments: self.segments.clone() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn get(&self, name: &str) -> &[f64] {
        let seg = self.segment(name).unwrap_or_else(|| panic!("no segment named {name}"));
        &self.values[seg.offset..seg.offset + seg.len()]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut [f64] {
        let seg = self
            .segments
            .iter()
            .find(|s| s.name == name)
            .cloned()
            .unwrap_or_else(|| panic!("no segment named {name}"));
        &mut self.values[seg.offset..seg.offset + seg.len()]
    }

    /// Name of the segment owning flat index `i` (for diagnostics).
    pub fn segment_of(&self, i: usize) -> &str {
        for seg in &self.segments {
            if i >= seg.offset && i < seg.offset + seg.len() {
                return &seg.name;
            }
        }
        "<out of range>"
    }

    /// `self += scale * other`. Panics if shapes differ.
    pub fn axpy(&mut self, scale: f64, other: &ParamVector) {
        assert_eq!(self.values.len(), other.values.len(), "axpy shape mismatch");
        for (v, o) in self.values.iter_mut().zip(&other.values) {
            *v += scale * o;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }

    /// `self += rate * (target - self)`: the interpolation used for both
    /// latent nudges and global decoder syncs. Rate 1 lands exactly on the
    /// target (bitwise), not one rounding step away from it.
    pub fn lerp_toward(&mut self, target: &ParamVector, rate: f64) {
        assert_eq!(self.values.len(), target.values.len(), "lerp shape mismatch");
        if rate == 1.0 {
            self.values.copy_from_slice(&target.values);
            return;
        }
        for (v, t) in self.values.iter_mut().zip(&target.values) {
            *v += rate * (t - *v);
        }
    }

    /// Errors with the offending segment name if any value is NaN or
    /// infinite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        for (i, v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::numeric(format!(
                    "{context}: non-finite value {v} at segment {} index {i}",
                    self.segment_of(i)
                )));
            }
        }
        Ok(())
    }
}
