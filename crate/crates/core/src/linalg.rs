//! Compressed-row sparse storage and the few kernels the solvers need.

use nalgebra::{DMatrix, DVector};

/// A symmetric linear map applied into a caller-provided buffer.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    /// `out = self · v`
    fn apply(&self, v: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from unordered `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_offsets = vec![0usize; nrows + 1];
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_offsets[r + 1] += 1;
                col_indices.push(c);
                values.push(v);
                last = Some((r, c));
            }
        }
        for i in 0..nrows {
            row_offsets[i + 1] += row_offsets[i];
        }
        Self {
            nrows,
            ncols,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// Whether column `j` holds any stored entry.
    pub fn column_is_empty(&self, j: usize) -> bool {
        !self.col_indices.iter().zip(&self.values).any(|(&c, &v)| c == j && v != 0.0)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// `y += A x`
    pub fn mul_add(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.nrows) {
            let mut acc = 0.0;
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            *yi += acc;
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.nrows);
        self.mul_add(x.as_slice(), y.as_mut_slice());
        y
    }

    /// `Aᵀ x`
    pub fn tr_mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols);
        for i in 0..self.nrows {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for (j, v) in self.row(i) {
                out[j] += v * xi;
            }
        }
        out
    }

    /// `diag(d) + scale · AᵀA`, kept sparse. Accumulated row by row of `A`.
    pub fn gram_plus_diagonal(&self, scale: f64, diag: &DVector<f64>) -> CsrMatrix {
        let mut triplets = Vec::new();
        for i in 0..self.nrows {
            let span = self.row_offsets[i]..self.row_offsets[i + 1];
            let cols = &self.col_indices[span.clone()];
            let vals = &self.values[span];
            for (&ca, &va) in cols.iter().zip(vals) {
                for (&cb, &vb) in cols.iter().zip(vals) {
                    triplets.push((ca, cb, scale * va * vb));
                }
            }
        }
        for (i, &d) in diag.iter().enumerate() {
            if d != 0.0 {
                triplets.push((i, i, d));
            }
        }
        CsrMatrix::from_triplets(self.ncols, self.ncols, triplets)
    }
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.nrows
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        self.mul_add(v, out);
    }
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let n = self.nrows();
        out.fill(0.0);
        for (j, &vj) in v.iter().enumerate() {
            if vj == 0.0 {
                continue;
            }
            let col = &self.as_slice()[j * n..(j + 1) * n];
            for (o, &a) in out.iter_mut().zip(col) {
                *o += a * vj;
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
