//! Sparse Cholesky factorization `P Q Pᵀ = L Lᵀ` of symmetric positive
//! definite matrices.
//!
//! The symbolic phase (ordering, elimination tree, pattern of `L`) depends
//! only on the sparsity pattern of `Q` and is shared across numeric
//! factorizations through [`FactorCache`]. The numeric phase is the
//! up-looking row-by-row algorithm. [`CholeskyFactor::selected_inverse`]
//! computes the entries of `Q⁻¹` on the pattern of `L` with the Takahashi
//! recursion.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

const NONE: usize = usize::MAX;

/// Pattern-only analysis of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymbolicCholesky {
    n: usize,
    /// `perm[i]` is the original index placed at position `i`.
    perm: Vec<usize>,
    /// Source pattern the analysis was computed for.
    pattern_indptr: Vec<usize>,
    pattern_indices: Vec<usize>,
    /// For permuted column `k`: entries `(i, p)` with `i <= k` where `p`
    /// indexes the value array of the source matrix.
    upper_ptr: Vec<usize>,
    upper: Vec<(usize, usize)>,
    /// Non-diagonal pattern of row `k` of `L`, in topological order.
    row_ptr: Vec<usize>,
    row_pattern: Vec<usize>,
    /// Column layout of `L`; the first entry of each column is the diagonal.
    lp: Vec<usize>,
    li: Vec<usize>,
}

impl SymbolicCholesky {
    /// Analyzes the pattern of `q`, choosing between the natural ordering and
    /// reverse Cuthill-McKee by predicted fill.
    pub fn analyze(q: &SparseMatrix) -> Result<Self> {
        if !q.is_square() {
            return Err(Error::Input(format!("cholesky needs a square matrix, got {:?}", q.shape())));
        }
        let natural: Vec<usize> = (0..q.nrows()).collect();
        let natural = Self::with_ordering(q, natural);
        let rcm = Self::with_ordering(q, reverse_cuthill_mckee(q));
        Ok(if rcm.nnz() < natural.nnz() { rcm } else { natural })
    }

    /// Symbolic analysis under a caller-supplied permutation.
    pub fn with_ordering(q: &SparseMatrix, perm: Vec<usize>) -> Self {
        let n = q.nrows();
        let mut pinv = vec![0usize; n];
        for (i, &p) in perm.iter().enumerate() {
            pinv[p] = i;
        }
        let mut upper_ptr = Vec::with_capacity(n + 1);
        let mut upper = Vec::new();
        upper_ptr.push(0);
        for (k, &orig) in perm.iter().enumerate() {
            let start = upper.len();
            for p in q.indptr()[orig]..q.indptr()[orig + 1] {
                let i = pinv[q.indices()[p]];
                if i <= k {
                    upper.push((i, p));
                }
            }
            upper[start..].sort_unstable();
            upper_ptr.push(upper.len());
        }

        // Elimination tree with path compression.
        let mut parent = vec![NONE; n];
        let mut ancestor = vec![NONE; n];
        for k in 0..n {
            for &(i0, _) in &upper[upper_ptr[k]..upper_ptr[k + 1]] {
                let mut i = i0;
                while i != NONE && i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == NONE {
                        parent[i] = k;
                    }
                    i = next;
                }
            }
        }

        // Row patterns via elimination-tree reaches.
        let mut mark = vec![NONE; n];
        let mut stack = vec![0usize; n];
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut row_pattern = Vec::new();
        let mut colcount = vec![1usize; n];
        row_ptr.push(0);
        for k in 0..n {
            mark[k] = k;
            let mut top = n;
            for &(i0, _) in &upper[upper_ptr[k]..upper_ptr[k + 1]] {
                let mut i = i0;
                let mut len = 0;
                while mark[i] != k {
                    stack[len] = i;
                    len += 1;
                    mark[i] = k;
                    i = parent[i];
                }
                while len > 0 {
                    top -= 1;
                    len -= 1;
                    stack[top] = stack[len];
                }
            }
            for &j in &stack[top..n] {
                colcount[j] += 1;
            }
            row_pattern.extend_from_slice(&stack[top..n]);
            row_ptr.push(row_pattern.len());
        }

        let mut lp = vec![0usize; n + 1];
        for j in 0..n {
            lp[j + 1] = lp[j] + colcount[j];
        }
        let mut li = vec![0usize; lp[n]];
        let mut next = lp.clone();
        for k in 0..n {
            for &j in &row_pattern[row_ptr[k]..row_ptr[k + 1]] {
                li[next[j]] = k;
                next[j] += 1;
            }
            li[next[k]] = k;
            next[k] += 1;
        }
        // Diagonal first; the remaining rows arrive in increasing order
        // except the diagonal, which was appended when its row was reached.
        for j in 0..n {
            let col = &mut li[lp[j]..lp[j + 1]];
            col.sort_unstable();
            debug_assert_eq!(col[0], j);
        }

        SymbolicCholesky {
            n,
            perm,
            pattern_indptr: q.indptr().to_vec(),
            pattern_indices: q.indices().to_vec(),
            upper_ptr,
            upper,
            row_ptr,
            row_pattern,
            lp,
            li,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored entries of `L`, diagonal included.
    pub fn nnz(&self) -> usize {
        self.lp[self.n]
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// True when `q` has exactly the pattern this analysis was built from.
    pub fn matches(&self, q: &SparseMatrix) -> bool {
        q.nrows() == self.n
            && q.indptr() == self.pattern_indptr.as_slice()
            && q.indices() == self.pattern_indices.as_slice()
    }

    /// Numeric factorization of a matrix with the analyzed pattern.
    pub fn factor(self: &Arc<Self>, q: &SparseMatrix) -> Result<CholeskyFactor> {
        if !self.matches(q) {
            return Err(Error::Input("matrix pattern differs from the symbolic analysis".into()));
        }
        let n = self.n;
        let qv = q.values();
        let lp = &self.lp;
        let li = &self.li;
        let mut lx = vec![0.0; lp[n]];
        let mut next: Vec<usize> = lp[..n].to_vec();
        let mut x = vec![0.0; n];
        for k in 0..n {
            for &(i, p) in &self.upper[self.upper_ptr[k]..self.upper_ptr[k + 1]] {
                x[i] += qv[p];
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &j in &self.row_pattern[self.row_ptr[k]..self.row_ptr[k + 1]] {
                let lkj = x[j] / lx[lp[j]];
                x[j] = 0.0;
                for p in lp[j] + 1..next[j] {
                    x[li[p]] -= lx[p] * lkj;
                }
                d -= lkj * lkj;
                lx[next[j]] = lkj;
                next[j] += 1;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Numerical(format!(
                    "matrix is not positive definite (pivot {k} of {n} is {d:e}); \
                     the precision may be singular or badly conditioned"
                )));
            }
            lx[next[k]] = d.sqrt();
            next[k] += 1;
        }
        Ok(CholeskyFactor { symbolic: Arc::clone(self), lx })
    }
}

/// Numeric Cholesky factor together with its symbolic analysis.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    symbolic: Arc<SymbolicCholesky>,
    lx: Vec<f64>,
}

impl CholeskyFactor {
    /// One-shot analysis plus factorization.
    pub fn new(q: &SparseMatrix) -> Result<Self> {
        Arc::new(SymbolicCholesky::analyze(q)?).factor(q)
    }

    pub fn dim(&self) -> usize {
        self.symbolic.n
    }

    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.symbolic
    }

    /// `log det Q = 2 Σ log L_jj`.
    pub fn log_det(&self) -> f64 {
        let s = &self.symbolic;
        2.0 * (0..s.n).map(|j| self.lx[s.lp[j]].ln()).sum::<f64>()
    }

    /// Solves `L y = b` in place (permuted coordinates).
    fn forward(&self, y: &mut [f64]) {
        let s = &self.symbolic;
        for j in 0..s.n {
            let yj = y[j] / self.lx[s.lp[j]];
            y[j] = yj;
            for p in s.lp[j] + 1..s.lp[j + 1] {
                y[s.li[p]] -= self.lx[p] * yj;
            }
        }
    }

    /// Solves `Lᵀ x = y` in place (permuted coordinates).
    fn backward(&self, x: &mut [f64]) {
        let s = &self.symbolic;
        for j in (0..s.n).rev() {
            let mut v = x[j];
            for p in s.lp[j] + 1..s.lp[j + 1] {
                v -= self.lx[p] * x[s.li[p]];
            }
            x[j] = v / self.lx[s.lp[j]];
        }
    }

    /// Solves `Q x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let perm = &self.symbolic.perm;
        let mut y: Vec<f64> = perm.iter().map(|&p| b[p]).collect();
        self.forward(&mut y);
        self.backward(&mut y);
        let mut x = vec![0.0; y.len()];
        for (i, &p) in perm.iter().enumerate() {
            x[p] = y[i];
        }
        x
    }

    /// Maps a standard normal vector `z` to a draw with covariance `Q⁻¹` by
    /// back substitution `Lᵀ u = z`.
    pub fn correlate(&self, z: &[f64]) -> Vec<f64> {
        let perm = &self.symbolic.perm;
        let mut u = z.to_vec();
        self.backward(&mut u);
        let mut x = vec![0.0; u.len()];
        for (i, &p) in perm.iter().enumerate() {
            x[p] = u[i];
        }
        x
    }

    /// Entries of `Q⁻¹` on the pattern of `L` (Takahashi recursion).
    pub fn selected_inverse(&self) -> SelectedInverse {
        let s = &self.symbolic;
        let (lp, li, lx) = (&s.lp, &s.li, &self.lx);
        let mut sigma = vec![0.0; lx.len()];
        let lookup = |sigma: &[f64], a: usize, b: usize| -> f64 {
            let (col, row) = if a < b { (a, b) } else { (b, a) };
            let range = lp[col]..lp[col + 1];
            let pos = li[range.clone()].binary_search(&row).expect("filled pattern is closed under the recursion");
            sigma[range.start + pos]
        };
        for j in (0..s.n).rev() {
            let ljj = lx[lp[j]];
            let off = lp[j] + 1..lp[j + 1];
            for pi in off.clone() {
                let i = li[pi];
                let mut acc = 0.0;
                for pk in off.clone() {
                    acc += lx[pk] * lookup(&sigma, li[pk], i);
                }
                sigma[pi] = -acc / ljj;
            }
            let acc: f64 = off.map(|pk| lx[pk] * sigma[pk]).sum();
            sigma[lp[j]] = (1.0 / ljj - acc) / ljj;
        }
        let mut pinv = vec![0usize; s.n];
        for (i, &p) in s.perm.iter().enumerate() {
            pinv[p] = i;
        }
        SelectedInverse { symbolic: Arc::clone(&self.symbolic), pinv, values: sigma }
    }

    /// Dense `Q⁻¹` from the factor; intended for small problems and tests.
    pub fn dense_inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut inv = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }
}

/// Entries of `Q⁻¹` restricted to the filled pattern of the factor. Every
/// position stored in `Q` is available.
#[derive(Debug, Clone)]
pub struct SelectedInverse {
    symbolic: Arc<SymbolicCholesky>,
    pinv: Vec<usize>,
    values: Vec<f64>,
}

impl SelectedInverse {
    /// `(Q⁻¹)_{ij}` in original indexing, or `None` outside the pattern.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let s = &self.symbolic;
        let (a, b) = (self.pinv[i], self.pinv[j]);
        let (col, row) = if a < b { (a, b) } else { (b, a) };
        let range = s.lp[col]..s.lp[col + 1];
        s.li[range.clone()].binary_search(&row).ok().map(|p| self.values[range.start + p])
    }

    /// Like [`get`](Self::get) but panics outside the pattern.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.get(i, j).unwrap_or_else(|| panic!("({i}, {j}) is outside the selected-inverse pattern"))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.symbolic.n).map(|i| self.at(i, i)).collect()
    }

    /// `tr(Q⁻¹ M)` for a matrix whose pattern lies within that of `Q`
    /// (or of `L + Lᵀ`).
    pub fn trace_product(&self, m: &SparseMatrix) -> f64 {
        m.triplets().map(|(i, j, v)| v * self.at(j, i)).sum()
    }

    /// Diagonal of `B Q⁻¹ Cᵀ`; the needed entries of `Q⁻¹` must be in the
    /// pattern, which holds when `BᵀC` is structurally contained in `Q`.
    pub fn diag_sandwich(&self, b: &SparseMatrix, c: &SparseMatrix) -> Vec<f64> {
        assert_eq!(b.nrows(), c.nrows());
        (0..b.nrows())
            .map(|r| {
                let mut acc = 0.0;
                for (j, bv) in b.row(r) {
                    for (l, cv) in c.row(r) {
                        acc += bv * cv * self.at(j, l);
                    }
                }
                acc
            })
            .collect()
    }
}

/// Caches the symbolic analysis for a recurring sparsity pattern.
#[derive(Debug, Default, Clone)]
pub struct FactorCache {
    symbolic: Option<Arc<SymbolicCholesky>>,
}

impl FactorCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn factor(&mut self, q: &SparseMatrix) -> Result<CholeskyFactor> {
        match &self.symbolic {
            Some(s) if s.matches(q) => s.factor(q),
            _ => {
                let s = Arc::new(SymbolicCholesky::analyze(q)?);
                self.symbolic = Some(Arc::clone(&s));
                s.factor(q)
            }
        }
    }
}

/// Reverse Cuthill-McKee ordering of the symmetric pattern of `q`.
pub fn reverse_cuthill_mckee(q: &SparseMatrix) -> Vec<usize> {
    let n = q.nrows();
    let adj: Vec<Vec<usize>> = (0..n).map(|i| q.row(i).map(|(j, _)| j).filter(|&j| j != i).collect()).collect();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| degree[i]);
    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let start = pseudo_peripheral(seed, &adj, &degree);
        visited[start] = true;
        let head = order.len();
        order.push(start);
        let mut cursor = head;
        while cursor < order.len() {
            let v = order[cursor];
            cursor += 1;
            let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            nbrs.sort_by_key(|&u| (degree[u], u));
            for u in nbrs {
                visited[u] = true;
                order.push(u);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(start: usize, adj: &[Vec<usize>]) -> (Vec<usize>, usize) {
    let mut level = vec![usize::MAX; adj.len()];
    level[start] = 0;
    let mut queue = vec![start];
    let mut cursor = 0;
    let mut last = start;
    while cursor < queue.len() {
        let v = queue[cursor];
        cursor += 1;
        last = v;
        for &u in &adj[v] {
            if level[u] == usize::MAX {
                level[u] = level[v] + 1;
                queue.push(u);
            }
        }
    }
    let depth = level[last];
    (queue, depth)
}

fn pseudo_peripheral(seed: usize, adj: &[Vec<usize>], degree: &[usize]) -> usize {
    let mut node = seed;
    let (_, mut depth) = bfs_levels(node, adj);
    for _ in 0..8 {
        let (queue, _) = bfs_levels(node, adj);
        let mut level = vec![0usize; adj.len()];
        // Recompute levels to find the farthest layer.
        let (_, d) = bfs_levels(node, adj);
        let mut lv = vec![usize::MAX; adj.len()];
        lv[node] = 0;
        for &v in &queue {
            for &u in &adj[v] {
                if lv[u] == usize::MAX {
                    lv[u] = lv[v] + 1;
                }
            }
        }
        for &v in &queue {
            level[v] = lv[v];
        }
        let candidate = queue.iter().copied().filter(|&v| level[v] == d).min_by_key(|&v| degree[v]).unwrap_or(node);
        let (_, cd) = bfs_levels(candidate, adj);
        if cd > depth {
            node = candidate;
            depth = cd;
        } else {
            break;
        }
    }
    node
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_2d(m: usize) -> SparseMatrix {
        let idx = |i: usize, j: usize| i * m + j;
        let mut trip = Vec::new();
        for i in 0..m {
            for j in 0..m {
                trip.push((idx(i, j), idx(i, j), 4.5));
                if i + 1 < m {
                    trip.push((idx(i, j), idx(i + 1, j), -1.0));
                    trip.push((idx(i + 1, j), idx(i, j), -1.0));
                }
                if j + 1 < m {
                    trip.push((idx(i, j), idx(i, j + 1), -1.0));
                    trip.push((idx(i, j + 1), idx(i, j), -1.0));
                }
            }
        }
        SparseMatrix::from_triplets(m * m, m * m, trip)
    }

    #[test]
    fn factor_solves_and_logdet_match_dense() {
        let q = laplacian_2d(5);
        let f = CholeskyFactor::new(&q).unwrap();
        let dense = q.to_dense();
        let b: Vec<f64> = (0..25).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = f.solve(&b);
        let r = &dense * nalgebra::DVector::from_vec(x) - nalgebra::DVector::from_vec(b);
        assert!(r.amax() < 1e-12);
        let ld = dense.clone().cholesky().unwrap().l().diagonal().map(|v| v.ln()).sum() * 2.0;
        assert!((f.log_det() - ld).abs() < 1e-10 * ld.abs());
    }

    #[test]
    fn selected_inverse_matches_dense_inverse() {
        let q = laplacian_2d(6);
        let f = CholeskyFactor::new(&q).unwrap();
        let inv = q.to_dense().try_inverse().unwrap();
        let sel = f.selected_inverse();
        for (i, j, _) in q.triplets() {
            assert!((sel.at(i, j) - inv[(i, j)]).abs() < 1e-12, "({i},{j})");
        }
    }

    #[test]
    fn correlate_has_target_covariance_structure() {
        // Lᵀ u = z gives Cov(u) = Q⁻¹; check through the identity
        // Q (L⁻ᵀ L⁻¹) = I applied column-wise.
        let q = laplacian_2d(3);
        let f = CholeskyFactor::new(&q).unwrap();
        let n = q.nrows();
        let mut cov = DMatrix::zeros(n, n);
        for k in 0..n {
            let mut z = vec![0.0; n];
            z[k] = 1.0;
            let u = nalgebra::DVector::from_vec(f.correlate(&z));
            cov += &u * u.transpose();
        }
        let id = q.to_dense() * cov;
        assert!((id - DMatrix::identity(n, n)).amax() < 1e-12);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let q = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]);
        assert!(matches!(CholeskyFactor::new(&q), Err(Error::Numerical(_))));
    }

    #[test]
    fn cache_reuses_symbolic_for_same_pattern() {
        let q = laplacian_2d(4);
        let mut cache = FactorCache::new();
        let f1 = cache.factor(&q).unwrap();
        let f2 = cache.factor(&q.scale(2.0)).unwrap();
        assert!(Arc::ptr_eq(f1.symbolic(), f2.symbolic()));
        assert!((f2.log_det() - f1.log_det() - 16.0 * 2f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn rcm_is_a_permutation_and_reduces_fill_on_shuffled_band() {
        // A tridiagonal matrix presented in a scrambled order.
        let n = 40;
        let shuffle: Vec<usize> = (0..n).map(|i| (i * 17) % n).collect();
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((shuffle[i], shuffle[i], 3.0));
            if i + 1 < n {
                trip.push((shuffle[i], shuffle[i + 1], -1.0));
                trip.push((shuffle[i + 1], shuffle[i], -1.0));
            }
        }
        let q = SparseMatrix::from_triplets(n, n, trip);
        let mut p = reverse_cuthill_mckee(&q);
        let natural = SymbolicCholesky::with_ordering(&q, (0..n).collect());
        let rcm = SymbolicCholesky::with_ordering(&q, p.clone());
        assert_eq!(rcm.nnz(), 2 * n - 1);
        assert!(natural.nnz() > rcm.nnz());
        p.sort_unstable();
        assert_eq!(p, (0..n).collect::<Vec<_>>());
    }
}
