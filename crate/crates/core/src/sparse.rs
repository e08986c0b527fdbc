//! Index/value sparse vectors used for samples, operator outputs and the
//! deltas exchanged between nodes.

use serde::{Deserialize, Serialize};

/// Sparse vector over `dim` coordinates. Indices are strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVec {
    dim: usize,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseVec {
    pub fn zeros(dim: usize) -> Self {
        SparseVec {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds a vector from parallel index/value arrays.
    ///
    /// Panics if the indices are not strictly increasing or fall outside `dim`.
    pub fn new(dim: usize, indices: Vec<usize>, values: Vec<f64>) -> Self {
        assert_eq!(indices.len(), values.len());
        assert!(
            indices.windows(2).all(|w| w[0] < w[1]),
            "indices must be strictly increasing"
        );
        assert!(indices.last().map_or(true, |&i| i < dim), "index out of range");
        SparseVec {
            dim,
            indices,
            values,
        }
    }

    pub fn from_dense(x: &[f64]) -> Self {
        let (indices, values) = x
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .unzip();
        SparseVec {
            dim: x.len(),
            indices,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn set_dim(&mut self, dim: usize) {
        assert!(self.indices.last().map_or(true, |&i| i < dim));
        self.dim = dim;
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dot_dense(&self, x: &[f64]) -> f64 {
        self.iter().map(|(i, v)| v * x[i]).sum()
    }

    /// `y += a * self`
    pub fn axpy_into(&self, a: f64, y: &mut [f64]) {
        for (i, v) in self.iter() {
            y[i] += a * v;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.values {
            *v *= a;
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.axpy_into(1.0, &mut out);
        out
    }

    /// Drops entries that are exactly zero.
    pub fn prune_zeros(&mut self) {
        let mut k = 0;
        for j in 0..self.indices.len() {
            if self.values[j] != 0.0 {
                self.indices[k] = self.indices[j];
                self.values[k] = self.values[j];
                k += 1;
            }
        }
        self.indices.truncate(k);
        self.values.truncate(k);
    }

    /// `self - other` over the union of both supports. Entries that cancel
    /// are kept as explicit zeros so the support stays structural.
    pub fn sub(&self, other: &SparseVec) -> SparseVec {
        assert_eq!(self.dim, other.dim);
        if self.indices == other.indices {
            let values = self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect();
            return SparseVec {
                dim: self.dim,
                indices: self.indices.clone(),
                values,
            };
        }
        let mut indices = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        let (mut a, mut b) = (0, 0);
        while a < self.nnz() || b < other.nnz() {
            let ia = self.indices.get(a).copied().unwrap_or(usize::MAX);
            let ib = other.indices.get(b).copied().unwrap_or(usize::MAX);
            if ia == ib {
                indices.push(ia);
                values.push(self.values[a] - other.values[b]);
                a += 1;
                b += 1;
            } else if ia < ib {
                indices.push(ia);
                values.push(self.values[a]);
                a += 1;
            } else {
                indices.push(ib);
                values.push(-other.values[b]);
                b += 1;
            }
        }
        SparseVec {
            dim: self.dim,
            indices,
            values,
        }
    }
}
