//! Dense embedding vectors and cosine similarity.

use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum VectorError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("cosine is undefined for the zero vector")]
    ZeroVector,
    #[error("vector has no components")]
    Empty,
    #[error("vector component {0} is not finite")]
    NonFinite(usize),
}

/// A finite, non-empty real vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(components: Vec<f64>) -> Result<Self, VectorError> {
        if components.is_empty() {
            return Err(VectorError::Empty);
        }
        if let Some(i) = components.iter().position(|c| !c.is_finite()) {
            return Err(VectorError::NonFinite(i));
        }
        Ok(Self(components))
    }

    /// Like [`Vector::new`] but scaled to unit L2 norm. The zero vector is
    /// returned unchanged.
    pub fn normalized(components: Vec<f64>) -> Result<Self, VectorError> {
        let mut v = Self::new(components)?;
        v.normalize();
        Ok(v)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(alloc::vec![0.0; dim.max(1)])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.0.iter().map(|c| c * c).sum())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0.0)
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            for c in &mut self.0 {
                *c /= n;
            }
        }
    }

    pub fn dot(&self, other: &Vector) -> Result<f64, VectorError> {
        check_dims(self, other)?;
        Ok(dot(&self.0, &other.0))
    }
}

impl AsRef<[f64]> for Vector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

fn check_dims(a: &Vector, b: &Vector) -> Result<(), VectorError> {
    if a.dim() != b.dim() {
        return Err(VectorError::DimMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// `dot(a, b) / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine(a: &Vector, b: &Vector) -> Result<f64, VectorError> {
    check_dims(a, b)?;
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(VectorError::ZeroVector);
    }
    Ok((dot(&a.0, &b.0) / (na * nb)).clamp(-1.0, 1.0))
}
