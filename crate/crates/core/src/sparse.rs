//! Compressed sparse row matrices.
//!
//! Explicitly stored zeros are kept: operator constructors emit the full
//! structural pattern regardless of parameter values so that the pattern of
//! `K(θ)` (and of every precision matrix built from it) does not depend on
//! `θ`. Factorizations rely on this to reuse their symbolic analysis.

use nalgebra::DMatrix;

/// Real sparse matrix in CSR layout with sorted, unique column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed
    /// and zero values are stored explicitly.
    ///
    /// Panics if an index is out of bounds.
    pub fn from_triplets<I>(nrows: usize, ncols: usize, triplets: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut trip: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(i, j, _) in &trip {
            assert!(i < nrows && j < ncols, "triplet ({i}, {j}) out of bounds for {nrows}x{ncols}");
        }
        trip.sort_by_key(|t| (t.0, t.1));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(trip.len());
        let mut values: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in trip {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(j);
            values.push(v);
            indptr[i + 1] += 1;
            last = Some((i, j));
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        SparseMatrix { nrows, ncols, indptr, indices, values }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        SparseMatrix { nrows, ncols, indptr: vec![0; nrows + 1], indices: Vec::new(), values: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self::diag(&vec![1.0; n])
    }

    pub fn diag(d: &[f64]) -> Self {
        let n = d.len();
        SparseMatrix { nrows: n, ncols: n, indptr: (0..=n).collect(), indices: (0..n).collect(), values: d.to_vec() }
    }

    /// Dense to sparse, storing only entries that are not exactly zero.
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut trip = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    trip.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), trip)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_square(&self) -> bool {
        self.nrows == self.ncols
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Stored `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.indptr[i]..self.indptr[i + 1];
        self.indices[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    /// Position of `(i, j)` in the value array, if stored.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let lo = self.indptr[i];
        let hi = self.indptr[i + 1];
        self.indices[lo..hi].binary_search(&j).ok().map(|p| lo + p)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.find(i, j).map_or(0.0, |p| self.values[p])
    }

    /// True when both matrices store exactly the same positions.
    pub fn same_pattern(&self, other: &SparseMatrix) -> bool {
        self.nrows == other.nrows
            && self.ncols == other.ncols
            && self.indptr == other.indptr
            && self.indices == other.indices
    }

    /// True when every stored position of `self` is also stored in `other`.
    pub fn pattern_within(&self, other: &SparseMatrix) -> bool {
        self.shape() == other.shape() && self.triplets().all(|(i, j, _)| other.find(i, j).is_some())
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "dimension mismatch in mul_vec");
        (0..self.nrows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    /// `selfᵀ x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows, "dimension mismatch in tr_mul_vec");
        let mut out = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            for (j, v) in self.row(i) {
                out[j] += v * xi;
            }
        }
        out
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &j in &self.indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                let p = next[j];
                indices[p] = i;
                values[p] = v;
                next[j] += 1;
            }
        }
        SparseMatrix { nrows: self.ncols, ncols: self.nrows, indptr: counts, indices, values }
    }

    /// Sparse product `self * other`. The result stores every position that
    /// is structurally reachable, including numerically cancelled entries.
    pub fn matmul(&self, other: &SparseMatrix) -> SparseMatrix {
        assert_eq!(self.ncols, other.nrows, "dimension mismatch in matmul");
        let n = other.ncols;
        let mut acc = vec![0.0; n];
        let mut mark = vec![usize::MAX; n];
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut cols: Vec<usize> = Vec::new();
        for i in 0..self.nrows {
            cols.clear();
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = 0.0;
                        cols.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            cols.sort_unstable();
            for &j in &cols {
                indices.push(j);
                values.push(acc[j]);
            }
            indptr.push(indices.len());
        }
        SparseMatrix { nrows: self.nrows, ncols: n, indptr, indices, values }
    }

    /// `alpha * self + beta * other` on the union pattern.
    pub fn linear_combination(&self, alpha: f64, other: &SparseMatrix, beta: f64) -> SparseMatrix {
        assert_eq!(self.shape(), other.shape(), "dimension mismatch in add");
        let trip = self
            .triplets()
            .map(|(i, j, v)| (i, j, alpha * v))
            .chain(other.triplets().map(|(i, j, v)| (i, j, beta * v)));
        SparseMatrix::from_triplets(self.nrows, self.ncols, trip)
    }

    pub fn add(&self, other: &SparseMatrix) -> SparseMatrix {
        self.linear_combination(1.0, other, 1.0)
    }

    pub fn scale(&self, s: f64) -> SparseMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `diag(d) * self`.
    pub fn scale_rows(&self, d: &[f64]) -> SparseMatrix {
        assert_eq!(d.len(), self.nrows);
        let mut out = self.clone();
        for (i, di) in d.iter().enumerate() {
            for v in &mut out.values[self.indptr[i]..self.indptr[i + 1]] {
                *v *= di;
            }
        }
        out
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &SparseMatrix) -> SparseMatrix {
        let (m, n) = other.shape();
        let trip =
            self.triplets().flat_map(|(i, j, a)| other.triplets().map(move |(k, l, b)| (i * m + k, j * n + l, a * b)));
        SparseMatrix::from_triplets(self.nrows * m, self.ncols * n, trip)
    }

    pub fn block_diag(blocks: &[&SparseMatrix]) -> SparseMatrix {
        let nrows = blocks.iter().map(|b| b.nrows).sum();
        let ncols = blocks.iter().map(|b| b.ncols).sum();
        let mut trip = Vec::new();
        let (mut r0, mut c0) = (0, 0);
        for b in blocks {
            trip.extend(b.triplets().map(|(i, j, v)| (r0 + i, c0 + j, v)));
            r0 += b.nrows;
            c0 += b.ncols;
        }
        SparseMatrix::from_triplets(nrows, ncols, trip)
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(blocks: &[&SparseMatrix]) -> SparseMatrix {
        let ncols = blocks.first().map_or(0, |b| b.ncols);
        let mut trip = Vec::new();
        let mut r0 = 0;
        for b in blocks {
            assert_eq!(b.ncols, ncols, "column mismatch in vstack");
            trip.extend(b.triplets().map(|(i, j, v)| (r0 + i, j, v)));
            r0 += b.nrows;
        }
        SparseMatrix::from_triplets(r0, ncols, trip)
    }

    /// Keeps the rows listed in `rows`, in that order.
    pub fn select_rows(&self, rows: &[usize]) -> SparseMatrix {
        let trip = rows.iter().enumerate().flat_map(|(new, &old)| self.row(old).map(move |(j, v)| (new, j, v)));
        SparseMatrix::from_triplets(rows.len(), self.ncols, trip)
    }

    /// `selfᵀ diag(d) self`, the Gram form used for precision matrices.
    pub fn weighted_gram(&self, d: &[f64]) -> SparseMatrix {
        assert_eq!(d.len(), self.nrows);
        let scaled = self.scale_rows(d);
        self.transpose().matmul(&scaled)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SparseMatrix {
        SparseMatrix::from_triplets(2, 3, vec![(0, 0, 1.0), (0, 2, 2.0), (1, 1, 3.0), (0, 2, 1.0)])
    }

    #[test]
    fn duplicates_are_summed_and_zeros_kept() {
        let m = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0), (1, 0, 0.0)]);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 0), 3.0);
        assert!(m.find(1, 0).is_some());
    }

    #[test]
    fn products_match_dense() {
        let a = small();
        let b = a.transpose();
        let prod = a.matmul(&b).to_dense();
        let dense = a.to_dense() * b.to_dense();
        assert!((prod - dense).abs().max() < 1e-14);
        let x = [1.0, -2.0, 0.5];
        let y = a.mul_vec(&x);
        assert_eq!(y, vec![1.0 + 1.5, -6.0]);
        assert_eq!(a.tr_mul_vec(&[1.0, 1.0]), vec![1.0, 3.0, 3.0]);
    }

    #[test]
    fn kron_matches_definition() {
        let a = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (1, 0, 2.0), (1, 1, -1.0)]);
        let b = small();
        let k = a.kron(&b).to_dense();
        let (ad, bd) = (a.to_dense(), b.to_dense());
        assert!((k - ad.kronecker(&bd)).abs().max() < 1e-15);
    }

    #[test]
    fn weighted_gram_matches_dense() {
        let a = small();
        let d = [2.0, 0.5];
        let g = a.weighted_gram(&d).to_dense();
        let ad = a.to_dense();
        let dd = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&d));
        assert!((g - ad.transpose() * dd * ad).abs().max() < 1e-14);
    }

    #[test]
    fn block_diag_and_vstack() {
        let i2 = SparseMatrix::identity(2);
        let s = small();
        let bd = SparseMatrix::block_diag(&[&i2, &s]);
        assert_eq!(bd.shape(), (4, 5));
        assert_eq!(bd.get(2, 4), 3.0);
        let v = SparseMatrix::vstack(&[&s, &s]);
        assert_eq!(v.shape(), (4, 3));
        assert_eq!(v.get(3, 1), 3.0);
    }
}
