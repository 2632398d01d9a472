//! Minimal dense-tensor substrate: forward and reverse-mode computation for
//! the layers both models need, plus Adam and finite-difference verification.
//!
//! Everything is generic over [`Real`] so the same code runs in f32 for
//! training and f64 for gradient checks. Parameters live in one flat vector
//! described by a [`ParamLayout`]; layers hold offset ranges into it, which
//! keeps the optimizer, checkpointing, and finite-difference probing trivial.
//!
//! Forward passes use a fixed summation order, so results are reproducible
//! bit-for-bit for a given parameter vector.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;

use std::fmt::{Debug, Display};
use std::ops::Range;

pub use adam::AdamState;

/// Float scalar for tensors: f32 in training, f64 in verification mode.
pub trait Real:
    num_traits::Float + num_traits::NumAssignOps + Send + Sync + Debug + Display + Default + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn from_f64(v: f64) -> f32 {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> f64 {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// A dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Real> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Tensor<S> {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match {} elements",
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor<S> {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![S::zero(); len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Dimensions of a [C, H, W] tensor.
    pub fn chw(&self) -> (usize, usize, usize) {
        assert_eq!(self.shape.len(), 3, "expected CHW tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2])
    }

    /// The H x W plane of channel `c` in a CHW tensor.
    #[inline]
    pub fn plane(&self, c: usize) -> &[S] {
        let (channels, h, w) = self.chw();
        debug_assert!(c < channels);
        &self.data[c * h * w..(c + 1) * h * w]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [S] {
        let (channels, h, w) = self.chw();
        debug_assert!(c < channels);
        &mut self.data[c * h * w..(c + 1) * h * w]
    }
}

/// One named tensor inside a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Describes how a model's parameters pack into one flat vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> ParamLayout {
        ParamLayout::default()
    }

    /// Append a named tensor and return its index range in the flat vector.
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>) -> Range<usize> {
        let entry = ParamEntry {
            name: name.into(),
            shape,
            offset: self.total,
        };
        let range = entry.range();
        self.total = range.end;
        self.entries.push(entry);
        range
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn find(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn zeros<S: Real>(&self) -> Vec<S> {
        vec![S::zero(); self.total]
    }
}

/// Fill a slice with uniform values in [-bound, bound].
///
/// Draws f64 and converts, so f32 and f64 models built from the same seed see
/// the same underlying sequence.
pub fn fill_uniform<S: Real>(slice: &mut [S], bound: f64, rng: &mut impl rand::Rng) {
    for v in slice.iter_mut() {
        let u: f64 = rng.random();
        *v = S::from_f64((2.0 * u - 1.0) * bound);
    }
}

/// Kaiming-uniform bound for relu fan-in scaling: sqrt(6 / fan_in).
pub fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layout_offsets_accumulate() {
        let mut layout = ParamLayout::new();
        let a = layout.push("a.w", vec![2, 3]);
        let b = layout.push("a.b", vec![2]);
        assert_eq!(a, 0..6);
        assert_eq!(b, 6..8);
        assert_eq!(layout.total(), 8);
        assert_eq!(layout.find("a.b").unwrap().offset, 6);
        assert!(layout.find("missing").is_none());
    }

    #[test]
    fn uniform_fill_matches_across_precisions() {
        let mut a = vec![0.0f32; 16];
        let mut b = vec![0.0f64; 16];
        fill_uniform(&mut a, 0.5, &mut ChaCha8Rng::seed_from_u64(9));
        fill_uniform(&mut b, 0.5, &mut ChaCha8Rng::seed_from_u64(9));
        for (x, y) in a.iter().zip(&b) {
            assert!((f64::from(*x) - y).abs() < 1e-7);
            assert!(x.abs() <= 0.5);
        }
    }

    #[test]
    #[should_panic(expected = "does not match")]
    fn tensor_shape_mismatch_panics() {
        Tensor::new(vec![2, 2], vec![1.0f32; 3]);
    }
}
