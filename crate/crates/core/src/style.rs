//! Style vectors: points in the encoder's output space read at the CLS slot.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A raw (unnormalized) style vector of length `d_model`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StyleVector<T>(Vec<T>);

impl<T: Scalar> StyleVector<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![T::zero(); dim])
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn into_values(self) -> Vec<T> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// True when every entry is exactly zero (either sign).
    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == T::zero())
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if self.0.len() != dim {
            return Err(Error::Shape { expected: dim, got: self.0.len() });
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.len(), other.len(), "style vector length mismatch");
        Self(self.0.iter().zip(&other.0).map(|(&a, &b)| a - b).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.len(), other.len(), "style vector length mismatch");
        Self(self.0.iter().zip(&other.0).map(|(&a, &b)| a + b).collect())
    }

    pub fn scale(&self, c: T) -> Self {
        Self(self.0.iter().map(|&a| a * c).collect())
    }

    pub fn neg(&self) -> Self {
        Self(self.0.iter().map(|&a| -a).collect())
    }

    pub fn norm(&self) -> T {
        self.0.iter().map(|&a| a * a).sum::<T>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> T {
        self.0.iter().zip(&other.0).map(|(&a, &b)| a * b).sum()
    }

    /// Arithmetic mean; `None` for an empty slice.
    pub fn mean(vs: &[Self]) -> Option<Self> {
        let first = vs.first()?;
        let mut acc = vec![T::zero(); first.len()];
        for v in vs {
            assert_eq!(v.len(), acc.len(), "style vector length mismatch");
            for (a, &x) in acc.iter_mut().zip(&v.0) {
                *a += x;
            }
        }
        let n = T::from_usize(vs.len()).unwrap();
        Some(Self(acc.into_iter().map(|a| a / n).collect()))
    }

    /// Cosine similarity, or `None` when either vector has zero norm.
    pub fn cosine(&self, other: &Self) -> Option<T> {
        let (na, nb) = (self.norm(), other.norm());
        if na == T::zero() || nb == T::zero() {
            return None;
        }
        let c = self.dot(other) / (na * nb);
        Some(c.max(-T::one()).min(T::one()))
    }

    pub fn cast<U: Scalar>(&self) -> StyleVector<U> {
        StyleVector(self.0.iter().map(|&v| U::from_f64_lossy(v.as_f64())).collect())
    }
}
