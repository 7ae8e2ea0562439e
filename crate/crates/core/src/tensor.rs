//! Numeric primitives: token matrices, cosine similarity, frame descriptors.
//!
//! Values are stored and accumulated in `f64`. Streams on disk are `f32`,
//! which converts exactly.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms below this are treated as degenerate.
pub const NORM_FLOOR: f64 = 1e-12;

/// An `N x D` matrix of token embeddings, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenMatrix {
    tokens: usize,
    dims: usize,
    data: Vec<f64>,
}

impl TokenMatrix {
    pub fn new(tokens: usize, dims: usize, data: Vec<f64>) -> Result<Self> {
        if tokens == 0 || dims == 0 {
            return Err(Error::EmptyShape);
        }
        if data.len() != tokens * dims {
            return Err(Error::DimensionMismatch { expected: tokens * dims, found: data.len() });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { tokens, dims, data })
    }

    pub fn from_f32(tokens: usize, dims: usize, data: &[f32]) -> Result<Self> {
        Self::new(tokens, dims, data.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dims = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dims);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dims {
                return Err(Error::DimensionMismatch { expected: dims, found: row.len() });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), dims, data)
    }

    pub fn filled(tokens: usize, dims: usize, value: f64) -> Result<Self> {
        Self::new(tokens, dims, alloc::vec![value; tokens * dims])
    }

    /// Number of token rows (N).
    pub fn tokens(&self) -> usize {
        self.tokens
    }

    /// Embedding width (D).
    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.tokens, self.dims)
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.dims..(j + 1) * self.dims]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dims)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub(crate) fn ensure_shape(&self, expected: (usize, usize)) -> Result<()> {
        if self.shape() != expected {
            return Err(Error::ShapeMismatch { expected, found: self.shape() });
        }
        Ok(())
    }

    /// Mean over the token rows.
    pub fn token_mean(&self) -> Vec<f64> {
        let mut mean = alloc::vec![0.0; self.dims];
        for row in self.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.tokens as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// True when every token row has (near-)zero norm.
    pub fn is_degenerate(&self) -> bool {
        self.rows().all(|r| norm(r) < NORM_FLOOR)
    }
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    libm::sqrt(dot(u, u))
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), found: v.len() });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu < NORM_FLOOR || nv < NORM_FLOOR {
        return Err(Error::ZeroNorm { token: None });
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Returns `u / |u|`.
pub fn normalized(u: &[f64]) -> Result<Vec<f64>> {
    let n = norm(u);
    if n < NORM_FLOOR {
        return Err(Error::ZeroNorm { token: None });
    }
    Ok(u.iter().map(|v| v / n).collect())
}

/// Pooled frame descriptor: the token mean, L2-normalized.
pub fn frame_descriptor(x: &TokenMatrix) -> Result<Vec<f64>> {
    normalized(&x.token_mean())
}

/// Mean over token index `j` of `cosine(a[j], b[j])`.
pub fn token_similarity(a: &TokenMatrix, b: &TokenMatrix) -> Result<f64> {
    a.ensure_shape(b.shape())?;
    let mut total = 0.0;
    for (j, (ra, rb)) in a.rows().zip(b.rows()).enumerate() {
        total += cosine(ra, rb).map_err(|_| Error::ZeroNorm { token: Some(j) })?;
    }
    Ok(total / a.tokens as f64)
}

/// Mean over tokens of `cosine(x[j], q)`; the per-token alternative to
/// pooling the frame first.
pub fn token_average_cosine(x: &TokenMatrix, q: &[f64]) -> Result<f64> {
    if q.len() != x.dims {
        return Err(Error::DimensionMismatch { expected: x.dims, found: q.len() });
    }
    let mut total = 0.0;
    for (j, row) in x.rows().enumerate() {
        total += cosine(row, q).map_err(|e| match e {
            Error::ZeroNorm { .. } if norm(row) < NORM_FLOOR => Error::ZeroNorm { token: Some(j) },
            other => other,
        })?;
    }
    Ok(total / x.tokens as f64)
}
