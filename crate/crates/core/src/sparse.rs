//! Compressed-sparse-column matrices and a sparse Cholesky factorization for
//! the graph Laplacians that appear in the cost operator.
//!
//! The factorization follows the classic up-looking scheme: a fill-reducing
//! minimum-degree permutation, the elimination tree of the permuted matrix,
//! and a row-by-row numeric pass where the pattern of each row of `L` is the
//! reach of the row's nonzeros in the elimination tree.

use std::collections::BTreeSet;
use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CscMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CscMatrix {
    /// Assembles a matrix from `(row, col, value)` triplets. Duplicate entries
    /// are summed; explicit zeros are kept so the pattern reflects topology.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; ncols + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            counts[c + 1] += 1;
        }
        for c in 0..ncols {
            counts[c + 1] += counts[c];
        }
        let mut next = counts.clone();
        let mut rows = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let p = next[c];
            rows[p] = r;
            vals[p] = v;
            next[c] += 1;
        }
        let mut col_ptr = Vec::with_capacity(ncols + 1);
        let mut row_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        col_ptr.push(0);
        let mut entries: Vec<(usize, f64)> = Vec::new();
        for c in 0..ncols {
            entries.clear();
            entries.extend((counts[c]..counts[c + 1]).map(|p| (rows[p], vals[p])));
            entries.sort_by_key(|e| e.0);
            for &(r, v) in &entries {
                if row_idx.len() > *col_ptr.last().unwrap() && *row_idx.last().unwrap() == r {
                    *values.last_mut().unwrap() += v;
                } else {
                    row_idx.push(r);
                    values.push(v);
                }
            }
            col_ptr.push(row_idx.len());
        }
        CscMatrix { nrows, ncols, col_ptr, row_idx, values }
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

    /// Row indices and values of column `c`.
    pub fn column(&self, c: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.col_ptr[c]..self.col_ptr[c + 1];
        self.row_idx[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    /// Iterates over all stored entries as `(row, col, value)`.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols).flat_map(move |c| self.column(c).map(move |(r, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.col_ptr[c]..self.col_ptr[c + 1];
        match self.row_idx[range.clone()].binary_search(&r) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn transpose(&self) -> CscMatrix {
        let t: Vec<_> = self.triplets().map(|(r, c, v)| (c, r, v)).collect();
        CscMatrix::from_triplets(self.ncols, self.nrows, &t)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] += v;
        }
        m
    }

    /// `self · x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for c in 0..self.ncols {
            let xc = x[c];
            if xc != 0.0 {
                for (r, v) in self.column(c) {
                    y[r] += v * xc;
                }
            }
        }
        y
    }

    /// Dense-times-sparse product `Y · self` for `Y` with `nrows` columns.
    pub fn left_mul(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(y.ncols(), self.nrows, "left_mul: dimension mismatch");
        let mut out = DMatrix::zeros(y.nrows(), self.ncols);
        for c in 0..self.ncols {
            let mut oc = out.column_mut(c);
            for (r, v) in self.column(c) {
                oc.axpy(v, &y.column(r), 1.0);
            }
        }
        out
    }

    /// Dense-times-transpose product `Y · selfᵀ` for `Y` with `ncols` columns.
    pub fn left_mul_transpose(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(y.ncols(), self.ncols, "left_mul_transpose: dimension mismatch");
        let mut out = DMatrix::zeros(y.nrows(), self.nrows);
        for c in 0..self.ncols {
            let yc = y.column(c);
            for (r, v) in self.column(c) {
                out.column_mut(r).axpy(v, &yc, 1.0);
            }
        }
        out
    }

    /// Maximum absolute row sum; for symmetric matrices this bounds the
    /// spectral radius.
    pub fn norm_inf(&self) -> f64 {
        let mut sums = vec![0.0; self.nrows];
        for (r, _, v) in self.triplets() {
            sums[r] += v.abs();
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// Writes the matrix in Matrix Market coordinate format (1-based).
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (r, c, v) in self.triplets() {
            writeln!(w, "{} {} {:e}", r + 1, c + 1, v)?;
        }
        Ok(())
    }
}

/// Fill-reducing ordering by greedy minimum degree on the explicit
/// elimination graph. Ties are broken by the smaller index, so the ordering is
/// deterministic. Returns `perm` with `perm[k]` = original index of the k-th
/// eliminated node.
pub fn minimum_degree_ordering(a: &CscMatrix) -> Vec<usize> {
    let n = a.ncols();
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (r, c, _) in a.triplets() {
        if r != c {
            adj[r].insert(c);
            adj[c].insert(r);
        }
    }
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|v| (adj[v].len(), v)).collect();
    let mut perm = Vec::with_capacity(n);
    while let Some((_, v)) = queue.pop_first() {
        perm.push(v);
        let nbrs: Vec<usize> = std::mem::take(&mut adj[v]).into_iter().collect();
        for &u in &nbrs {
            queue.remove(&(adj[u].len(), u));
            adj[u].remove(&v);
        }
        for (k, &u) in nbrs.iter().enumerate() {
            for &w in &nbrs[k + 1..] {
                adj[u].insert(w);
                adj[w].insert(u);
            }
        }
        for &u in &nbrs {
            queue.insert((adj[u].len(), u));
        }
    }
    perm
}

/// Sparse Cholesky factor `P A Pᵀ = L Lᵀ` of a symmetric positive-definite
/// matrix.
#[derive(Clone, Debug)]
pub struct SparseCholesky {
    n: usize,
    /// `perm[k]` = original index of permuted index `k`.
    perm: Vec<usize>,
    /// Lower-triangular factor in the permuted ordering; the diagonal entry is
    /// stored first in each column.
    l: CscMatrix,
}

impl SparseCholesky {
    /// Factors a symmetric matrix; only the entries with row ≤ col after
    /// permutation are read, so either triangle (or both) may be stored.
    pub fn factor(a: &CscMatrix) -> Result<Self> {
        let perm = minimum_degree_ordering(a);
        Self::factor_with_ordering(a, perm)
    }

    pub fn factor_with_ordering(a: &CscMatrix, perm: Vec<usize>) -> Result<Self> {
        let n = a.ncols();
        if a.nrows() != n || perm.len() != n {
            return Err(Error::Dimension(format!(
                "cholesky needs a square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let mut inv = vec![0usize; n];
        for (k, &p) in perm.iter().enumerate() {
            inv[p] = k;
        }
        // Upper triangle of C = P A Pᵀ. When `a` stores both triangles only its
        // original upper triangle is read.
        let mut trip = Vec::with_capacity(a.nnz());
        let has_lower = a.triplets().any(|(r, c, _)| r > c);
        let has_upper = a.triplets().any(|(r, c, _)| r < c);
        for (r, c, v) in a.triplets() {
            let (pr, pc) = (inv[r], inv[c]);
            let (i, j) = if pr <= pc { (pr, pc) } else { (pc, pr) };
            let take = r == c || !(has_lower && has_upper) || r < c;
            if take {
                trip.push((i, j, v));
            }
        }
        let c = CscMatrix::from_triplets(n, n, &trip);

        let parent = etree(&c);

        // Symbolic pass: column counts of L.
        let mut counts = vec![1usize; n];
        let mut stack = vec![0usize; n];
        let mut mark = vec![false; n];
        for k in 0..n {
            let top = ereach(&c, k, &parent, &mut stack, &mut mark);
            for &i in &stack[top..] {
                counts[i] += 1;
            }
        }
        let mut lp = vec![0usize; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + counts[k];
        }
        let nnz = lp[n];
        let mut li = vec![0usize; nnz];
        let mut lx = vec![0.0f64; nnz];
        let mut cursor: Vec<usize> = lp[..n].to_vec();
        let mut x = vec![0.0f64; n];

        for k in 0..n {
            let top = ereach(&c, k, &parent, &mut stack, &mut mark);
            x[k] = 0.0;
            for (i, v) in c.column(k) {
                if i <= k {
                    x[i] += v;
                }
            }
            let mut diag = x[k];
            x[k] = 0.0;
            for &i in &stack[top..] {
                let lki = x[i] / lx[lp[i]];
                x[i] = 0.0;
                for p in lp[i] + 1..cursor[i] {
                    x[li[p]] -= lx[p] * lki;
                }
                diag -= lki * lki;
                let p = cursor[i];
                cursor[i] += 1;
                li[p] = k;
                lx[p] = lki;
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: perm[k] });
            }
            let p = cursor[k];
            cursor[k] += 1;
            li[p] = k;
            lx[p] = diag.sqrt();
        }

        let l = CscMatrix {
            nrows: n,
            ncols: n,
            col_ptr: lp,
            row_idx: li,
            values: lx,
        };
        Ok(SparseCholesky { n, perm, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// The lower-triangular factor (in permuted ordering).
    pub fn factor_l(&self) -> &CscMatrix {
        &self.l
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Diagonal of `L`, exposed for conditioning diagnostics.
    pub fn l_diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.l.values[self.l.col_ptr[k]]).collect()
    }

    /// Solves `L y = b` in place (permuted ordering).
    fn lsolve(&self, x: &mut [f64]) {
        for j in 0..self.n {
            let p0 = self.l.col_ptr[j];
            x[j] /= self.l.values[p0];
            let xj = x[j];
            for p in p0 + 1..self.l.col_ptr[j + 1] {
                x[self.l.row_idx[p]] -= self.l.values[p] * xj;
            }
        }
    }

    /// Solves `Lᵀ y = b` in place (permuted ordering).
    fn ltsolve(&self, x: &mut [f64]) {
        for j in (0..self.n).rev() {
            let p0 = self.l.col_ptr[j];
            let mut s = x[j];
            for p in p0 + 1..self.l.col_ptr[j + 1] {
                s -= self.l.values[p] * x[self.l.row_idx[p]];
            }
            x[j] = s / self.l.values[p0];
        }
    }

    /// Solves `A x = b`, overwriting `b` with `x`.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let mut work: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        self.lsolve(&mut work);
        self.ltsolve(&mut work);
        for (k, &p) in self.perm.iter().enumerate() {
            b[p] = work[k];
        }
    }

    /// Solves `X A = B` for a dense `B` with `n` columns, i.e. one solve per
    /// row of `B`.
    pub fn solve_rows(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(b.ncols(), self.n);
        let mut out = DMatrix::zeros(b.nrows(), self.n);
        let mut work = vec![0.0; self.n];
        for r in 0..b.nrows() {
            for (k, &p) in self.perm.iter().enumerate() {
                work[k] = b[(r, p)];
            }
            self.lsolve(&mut work);
            self.ltsolve(&mut work);
            for (k, &p) in self.perm.iter().enumerate() {
                out[(r, p)] = work[k];
            }
        }
        out
    }
}

/// Elimination tree of a symmetric matrix given by its upper triangle.
fn etree(c: &CscMatrix) -> Vec<Option<usize>> {
    let n = c.ncols();
    let mut parent = vec![None; n];
    let mut ancestor: Vec<Option<usize>> = vec![None; n];
    for k in 0..n {
        for (i0, _) in c.column(k) {
            let mut i = Some(i0);
            while let Some(ii) = i {
                if ii >= k {
                    break;
                }
                let next = ancestor[ii];
                ancestor[ii] = Some(k);
                if next.is_none() {
                    parent[ii] = Some(k);
                }
                i = next;
            }
        }
    }
    parent
}

/// Nonzero pattern of row `k` of `L` (excluding the diagonal), written to
/// `stack[top..]` in topological order. Returns `top`.
fn ereach(
    c: &CscMatrix,
    k: usize,
    parent: &[Option<usize>],
    stack: &mut [usize],
    mark: &mut [bool],
) -> usize {
    let n = c.ncols();
    let mut top = n;
    mark[k] = true;
    let mut path = Vec::new();
    for (i0, _) in c.column(k) {
        if i0 > k {
            continue;
        }
        let mut i = i0;
        path.clear();
        while !mark[i] {
            path.push(i);
            mark[i] = true;
            match parent[i] {
                Some(p) => i = p,
                None => break,
            }
        }
        while let Some(v) = path.pop() {
            top -= 1;
            stack[top] = v;
        }
    }
    for &v in &stack[top..] {
        mark[v] = false;
    }
    mark[k] = false;
    top
}
