//! Dense linear algebra, magnitude top-k selection, row-sparse gradient
//! containers and multiply-add accounting.
//!
//! Every kernel that participates in back propagation routes through
//! [`dot`] and [`axpy`] so that the sparse and dense paths perform the same
//! floating-point operations in the same order. That is what makes the
//! `k >= n` meProp path bit-identical to full back propagation.

use std::cmp::Ordering;
use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real vector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Self {
        Vector(data)
    }

    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl From<&[f64]> for Vector {
    fn from(v: &[f64]) -> Self {
        Vector(v.to_vec())
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Row-major dense matrix. Each row of a weight matrix is one neuron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                op: "Matrix::from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    op: "Matrix::from_rows",
                    left: (rows.len(), cols),
                    right: (1, r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Keeps only the listed rows, in order.
    pub fn gather_rows(&self, keep: &IndexSet) -> Matrix {
        let mut data = Vec::with_capacity(keep.len() * self.cols);
        for &i in keep.indices() {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: keep.len(),
            cols: self.cols,
            data,
        }
    }

    /// Keeps only the listed columns, in order.
    pub fn gather_cols(&self, keep: &IndexSet) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * keep.len());
        for i in 0..self.rows {
            let row = self.row(i);
            data.extend(keep.indices().iter().map(|&j| row[j]));
        }
        Matrix {
            rows: self.rows,
            cols: keep.len(),
            data,
        }
    }
}

/// Sorted, duplicate-free subset of `0..universe`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSet {
    indices: Vec<usize>,
    universe: usize,
}

impl IndexSet {
    pub fn new(indices: Vec<usize>, universe: usize) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::UnsortedIndices);
        }
        if let Some(&last) = indices.last() {
            if last >= universe {
                return Err(Error::IndexOutOfRange {
                    op: "IndexSet::new",
                    index: last,
                    universe,
                });
            }
        }
        Ok(IndexSet { indices, universe })
    }

    /// Builds from arbitrary (unsorted, possibly repeated) indices.
    pub fn from_unsorted(mut indices: Vec<usize>, universe: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        IndexSet::new(indices, universe)
    }

    pub fn full(universe: usize) -> Self {
        IndexSet {
            indices: (0..universe).collect(),
            universe,
        }
    }

    pub fn empty(universe: usize) -> Self {
        IndexSet {
            indices: Vec::new(),
            universe,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn universe(&self) -> usize {
        self.universe
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.indices.len() == self.universe
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    /// Indices of the universe not in this set.
    pub fn complement(&self) -> IndexSet {
        let mut out = Vec::with_capacity(self.universe - self.len());
        let mut it = self.indices.iter().peekable();
        for i in 0..self.universe {
            if it.peek() == Some(&&i) {
                it.next();
            } else {
                out.push(i);
            }
        }
        IndexSet {
            indices: out,
            universe: self.universe,
        }
    }

    pub fn into_indices(self) -> Vec<usize> {
        self.indices
    }
}

/// Approximate weight gradient that is nonzero only on the selected rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRowGradient {
    pub index_set: IndexSet,
    pub block: Matrix,
}

impl SparseRowGradient {
    pub fn new(index_set: IndexSet, block: Matrix) -> Result<Self> {
        if block.rows() != index_set.len() {
            return Err(Error::DimensionMismatch {
                op: "SparseRowGradient::new",
                left: (index_set.len(), block.cols()),
                right: block.shape(),
            });
        }
        Ok(SparseRowGradient { index_set, block })
    }

    /// Wraps a dense gradient as one covering every row.
    pub fn from_dense(dense: Matrix) -> Self {
        SparseRowGradient {
            index_set: IndexSet::full(dense.rows()),
            block: dense,
        }
    }

    pub fn nnz_rows(&self) -> usize {
        self.index_set.len()
    }
}

/// Counts multiply-adds performed by the linear-algebra kernels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlopCounter {
    multiply_adds: u64,
}

impl FlopCounter {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, n: u64) {
        self.multiply_adds += n;
    }

    pub fn get(&self) -> u64 {
        self.multiply_adds
    }

    pub fn reset(&mut self) {
        self.multiply_adds = 0;
    }
}

const LANES: usize = 8;

/// Dot product with a fixed 8-lane accumulation order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn check_len(op: &'static str, w: &Matrix, len: usize, along_rows: bool) -> Result<()> {
    let expected = if along_rows { w.rows() } else { w.cols() };
    if expected != len {
        return Err(Error::DimensionMismatch {
            op,
            left: w.shape(),
            right: (len, 1),
        });
    }
    Ok(())
}

/// `W x`.
pub fn matvec(w: &Matrix, x: &[f64], flops: &mut FlopCounter) -> Result<Vector> {
    check_len("matvec", w, x.len(), false)?;
    let out: Vec<f64> = (0..w.rows()).map(|i| dot(w.row(i), x)).collect();
    flops.add((w.rows() * w.cols()) as u64);
    Ok(Vector(out))
}

/// `Wᵀ v`, accumulated row by row in ascending row order.
pub fn transpose_matvec(w: &Matrix, v: &[f64], flops: &mut FlopCounter) -> Result<Vector> {
    check_len("transpose_matvec", w, v.len(), true)?;
    let mut out = vec![0.0; w.cols()];
    for (i, &vi) in v.iter().enumerate() {
        axpy(vi, w.row(i), &mut out);
    }
    flops.add((w.rows() * w.cols()) as u64);
    Ok(Vector(out))
}

/// Dense `v xᵀ`.
pub fn outer(v: &[f64], x: &[f64], flops: &mut FlopCounter) -> Matrix {
    let mut out = Matrix::zeros(v.len(), x.len());
    for (i, &vi) in v.iter().enumerate() {
        axpy(vi, x, out.row_mut(i));
    }
    flops.add((v.len() * x.len()) as u64);
    out
}

#[inline]
fn magnitude_order(v: &[f64], a: usize, b: usize) -> Ordering {
    // Larger magnitude first; equal magnitudes keep the lower index.
    v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b))
}

/// Writes the top-k magnitude indices of `v` into `out` (ascending),
/// reusing `scratch` for the selection.
pub fn top_k_into(v: &[f64], k: usize, scratch: &mut Vec<usize>, out: &mut Vec<usize>) {
    out.clear();
    let n = v.len();
    if k >= n {
        out.extend(0..n);
        return;
    }
    if k == 0 {
        return;
    }
    scratch.clear();
    scratch.extend(0..n);
    scratch.select_nth_unstable_by(k - 1, |&a, &b| magnitude_order(v, a, b));
    out.extend_from_slice(&scratch[..k]);
    out.sort_unstable();
}

/// Indices of the `k` entries of largest magnitude, ascending.
pub fn top_k_indices(v: &[f64], k: usize) -> Result<IndexSet> {
    if k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    let mut scratch = Vec::new();
    let mut out = Vec::with_capacity(k.min(v.len()));
    top_k_into(v, k, &mut scratch, &mut out);
    Ok(IndexSet {
        indices: out,
        universe: v.len(),
    })
}

/// `v` with everything outside the top-k magnitudes zeroed.
pub fn top_k_mask(v: &[f64], k: usize) -> Result<Vector> {
    let keep = top_k_indices(v, k)?;
    let mut out = vec![0.0; v.len()];
    for &i in keep.indices() {
        out[i] = v[i];
    }
    Ok(Vector(out))
}

/// Rows of `sigma_prime xᵀ` restricted to `selected`; only those rows are computed.
pub fn sparse_outer(
    sigma_prime: &[f64],
    x: &[f64],
    selected: &IndexSet,
    flops: &mut FlopCounter,
) -> Result<SparseRowGradient> {
    if selected.universe() != sigma_prime.len() {
        return Err(Error::DimensionMismatch {
            op: "sparse_outer",
            left: (selected.universe(), 1),
            right: (sigma_prime.len(), 1),
        });
    }
    let mut block = Matrix::zeros(selected.len(), x.len());
    for (r, &i) in selected.indices().iter().enumerate() {
        axpy(sigma_prime[i], x, block.row_mut(r));
    }
    flops.add((selected.len() * x.len()) as u64);
    Ok(SparseRowGradient {
        index_set: selected.clone(),
        block,
    })
}

/// `Wᵀ (sigma_prime masked to selected)`, visiting only the selected rows.
pub fn masked_transpose_matvec(
    w: &Matrix,
    sigma_prime: &[f64],
    selected: &IndexSet,
    flops: &mut FlopCounter,
) -> Result<Vector> {
    check_len("masked_transpose_matvec", w, sigma_prime.len(), true)?;
    if selected.universe() != w.rows() {
        return Err(Error::DimensionMismatch {
            op: "masked_transpose_matvec",
            left: w.shape(),
            right: (selected.universe(), 1),
        });
    }
    let mut out = vec![0.0; w.cols()];
    for &i in selected.indices() {
        axpy(sigma_prime[i], w.row(i), &mut out);
    }
    flops.add((selected.len() * w.cols()) as u64);
    Ok(Vector(out))
}

/// Scatters the block rows back into a full-size matrix.
pub fn densify(g: &SparseRowGradient) -> Matrix {
    let mut out = Matrix::zeros(g.index_set.universe(), g.block.cols());
    for (r, &i) in g.index_set.indices().iter().enumerate() {
        out.row_mut(i).copy_from_slice(g.block.row(r));
    }
    out
}
