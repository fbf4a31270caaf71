//! Sparse feature vectors, dense growable weight vectors and the hinge loss.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::WatError;

/// Binary class label, `+1` or `-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Pos,
    Neg,
}

impl Label {
    /// The label as a signed real, `+1.0` or `-1.0`.
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Label::Pos => 1.0,
            Label::Neg => -1.0,
        }
    }

    pub fn from_sign(v: f64) -> Label {
        if v > 0.0 {
            Label::Pos
        } else {
            Label::Neg
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Pos => Label::Neg,
            Label::Neg => Label::Pos,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Pos => f.write_str("+1"),
            Label::Neg => f.write_str("-1"),
        }
    }
}

/// Feature vector stored as parallel index/value arrays.
///
/// Indices are 0-based and strictly increasing; explicit zeros are never stored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector {
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseVector {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a vector from `(index, value)` pairs.
    ///
    /// Zero values are dropped. Indices must be strictly increasing and values finite.
    pub fn from_pairs<I>(pairs: I) -> Result<Self, WatError>
    where
        I: IntoIterator<Item = (usize, f64)>,
    {
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for (i, v) in pairs {
            if let Some(&last) = indices.last() {
                if i <= last {
                    return Err(WatError::InvalidVector(format!(
                        "index {i} does not follow {last}"
                    )));
                }
            }
            if !v.is_finite() {
                return Err(WatError::InvalidVector(format!(
                    "non-finite value at index {i}"
                )));
            }
            if v != 0.0 {
                indices.push(i);
                values.push(v);
            }
        }
        Ok(Self { indices, values })
    }

    /// Gathers the nonzero entries of a dense slice.
    pub fn from_dense(dense: &[f64]) -> Self {
        let (indices, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .unzip();
        Self { indices, values }
    }

    #[inline]
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    /// Highest stored index, if any.
    pub fn max_index(&self) -> Option<usize> {
        self.indices.last().copied()
    }

    /// Squared Euclidean norm.
    pub fn sq_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Dense model coefficients that grow on demand.
///
/// Reads past the allocated length return 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightVector {
    coeffs: Vec<f64>,
}

impl WeightVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Zero vector with `dim` allocated coordinates.
    pub fn zeros(dim: usize) -> Self {
        Self {
            coeffs: vec![0.0; dim],
        }
    }

    pub fn from_vec(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.coeffs.get(i).copied().unwrap_or(0.0)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.coeffs
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coeffs
    }

    /// Grows the allocated length to at least `len`, zero-filling.
    pub fn ensure_len(&mut self, len: usize) {
        if len > self.coeffs.len() {
            self.coeffs.resize(len, 0.0);
        }
    }

    /// Mutable access to coordinate `i`, growing if needed.
    #[inline]
    pub fn get_mut(&mut self, i: usize) -> &mut f64 {
        self.ensure_len(i + 1);
        &mut self.coeffs[i]
    }

    /// Inner product with a sparse vector.
    #[inline]
    pub fn dot(&self, x: &SparseVector) -> f64 {
        x.iter().map(|(i, v)| self.get(i) * v).sum()
    }

    /// `self[i] += alpha * v` for every entry `(i, v)` of `x`.
    pub fn axpy_sparse(&mut self, alpha: f64, x: &SparseVector) {
        if alpha == 0.0 {
            return;
        }
        if let Some(m) = x.max_index() {
            self.ensure_len(m + 1);
        }
        for (i, v) in x.iter() {
            self.coeffs[i] += alpha * v;
        }
    }

    /// Number of coordinates that are not exactly zero.
    pub fn nnz(&self) -> usize {
        self.coeffs.iter().filter(|v| **v != 0.0).count()
    }

    /// Overwrites `self` with `other`, reusing the existing allocation when large enough.
    pub fn copy_from(&mut self, other: &WeightVector) {
        self.coeffs.clone_from(&other.coeffs);
    }
}

/// Hinge loss `max(1 - y * w.x, 0)`.
#[inline]
pub fn hinge_loss(w: &WeightVector, x: &SparseVector, y: Label) -> f64 {
    hinge_from_margin(w.dot(x), y)
}

/// Hinge loss given a precomputed score `w.x`.
#[inline]
pub fn hinge_from_margin(score: f64, y: Label) -> f64 {
    (1.0 - y.sign() * score).max(0.0)
}
