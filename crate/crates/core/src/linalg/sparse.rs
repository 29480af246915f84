//! Compressed sparse row matrices.

use crate::linalg::dense::Mat;
use crate::scalar::Real;

/// Sparse matrix in CSR layout with sorted, duplicate-free column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr<T> {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<T>,
}

/// Accumulates `(row, col, value)` entries; duplicates are summed on build.
#[derive(Clone, Debug)]
pub struct Triplets<T> {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, T)>,
}

impl<T: Real> Triplets<T> {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Triplets {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Triplets {
            nrows,
            ncols,
            entries: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, i: usize, j: usize, v: T) {
        debug_assert!(i < self.nrows && j < self.ncols);
        self.entries.push((i, j, v));
    }

    /// Builds the CSR matrix. Explicit zeros are kept so that matrices built
    /// from the same insertion pattern share their sparsity pattern.
    pub fn build(mut self) -> Csr<T> {
        // stable sort keeps summation order deterministic
        self.entries.sort_by_key(|&(i, j, _)| (i, j));
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.entries.len());
        let mut values: Vec<T> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for &(i, j, v) in &self.entries {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(j);
                values.push(v);
                indptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..self.nrows {
            indptr[i + 1] += indptr[i];
        }
        Csr {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr,
            indices,
            values,
        }
    }
}

impl<T: Real> Csr<T> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Csr {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Csr {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![T::one(); n],
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let r = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => T::zero(),
        }
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            let mut s = T::zero();
            for (&j, &v) in cols.iter().zip(vals) {
                s += v * x[j];
            }
            *yi = s;
        }
    }

    /// `y += alpha * A x`
    pub fn matvec_acc(&self, alpha: T, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            let mut s = T::zero();
            for (&j, &v) in cols.iter().zip(vals) {
                s += v * x[j];
            }
            *yi += alpha * s;
        }
    }

    /// `Aᵀ x`
    pub fn matvec_t(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.ncols];
        self.matvec_t_acc(T::one(), x, &mut y);
        y
    }

    /// `y += alpha * Aᵀ x`
    pub fn matvec_t_acc(&self, alpha: T, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.nrows);
        assert_eq!(y.len(), self.ncols);
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            let a = alpha * xi;
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                y[j] += a * v;
            }
        }
    }

    pub fn transpose(&self) -> Csr<T> {
        let mut counts = vec![0usize; self.ncols + 1];
        for &j in &self.indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut indices = vec![0usize; self.nnz()];
        let mut values = vec![T::zero(); self.nnz()];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let p = next[j];
                indices[p] = i;
                values[p] = v;
                next[j] += 1;
            }
        }
        Csr {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr: counts,
            indices,
            values,
        }
    }

    pub fn same_pattern(&self, other: &Csr<T>) -> bool {
        self.nrows == other.nrows
            && self.ncols == other.ncols
            && self.indptr == other.indptr
            && self.indices == other.indices
    }

    /// `Σ c_k M_k` for matrices sharing one sparsity pattern.
    pub fn linear_combination(coeffs: &[T], mats: &[&Csr<T>]) -> Csr<T> {
        assert_eq!(coeffs.len(), mats.len());
        assert!(!mats.is_empty(), "empty linear combination");
        let first = mats[0];
        let mut out = Csr {
            nrows: first.nrows,
            ncols: first.ncols,
            indptr: first.indptr.clone(),
            indices: first.indices.clone(),
            values: vec![T::zero(); first.nnz()],
        };
        for (&c, m) in coeffs.iter().zip(mats) {
            assert!(first.same_pattern(m), "affine blocks must share a pattern");
            if c == T::zero() {
                continue;
            }
            for (o, &v) in out.values.iter_mut().zip(&m.values) {
                *o += c * v;
            }
        }
        out
    }

    pub fn scaled(&self, s: T) -> Csr<T> {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= s;
        }
        out
    }

    /// `diag(d) A`.
    pub fn mul_rows(&self, d: &[T]) -> Csr<T> {
        assert_eq!(d.len(), self.nrows);
        let mut out = self.clone();
        for i in 0..self.nrows {
            for p in out.indptr[i]..out.indptr[i + 1] {
                out.values[p] *= d[i];
            }
        }
        out
    }

    /// General sum `a A + b B` on the union pattern.
    pub fn add(&self, a: T, other: &Csr<T>, b: T) -> Csr<T> {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut t = Triplets::with_capacity(self.nrows, self.ncols, self.nnz() + other.nnz());
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (&j, &x) in c.iter().zip(v) {
                t.push(i, j, a * x);
            }
            let (c, v) = other.row(i);
            for (&j, &x) in c.iter().zip(v) {
                t.push(i, j, b * x);
            }
        }
        t.build()
    }

    /// Sparse product `A B` (Gustavson).
    pub fn matmul(&self, other: &Csr<T>) -> Csr<T> {
        assert_eq!(self.ncols, other.nrows);
        let n = other.ncols;
        let mut marker = vec![usize::MAX; n];
        let mut acc = vec![T::zero(); n];
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut row_cols: Vec<usize> = Vec::new();
        for i in 0..self.nrows {
            row_cols.clear();
            let (ac, av) = self.row(i);
            for (&k, &a) in ac.iter().zip(av) {
                let (bc, bv) = other.row(k);
                for (&j, &b) in bc.iter().zip(bv) {
                    if marker[j] != i {
                        marker[j] = i;
                        acc[j] = T::zero();
                        row_cols.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            row_cols.sort_unstable();
            for &j in &row_cols {
                indices.push(j);
                values.push(acc[j]);
            }
            indptr[i + 1] = indices.len();
        }
        Csr {
            nrows: self.nrows,
            ncols: n,
            indptr,
            indices,
            values,
        }
    }

    pub fn to_dense(&self) -> Mat<T> {
        let mut m = Mat::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (&j, &x) in c.iter().zip(v) {
                m[(i, j)] += x;
            }
        }
        m
    }

    /// `A X` for a dense matrix `X` given by columns.
    pub fn mul_columns(&self, cols: &[Vec<T>]) -> Vec<Vec<T>> {
        cols.iter().map(|c| self.matvec(c)).collect()
    }

    pub fn max_abs(&self) -> T {
        crate::scalar::max_abs(&self.values)
    }

    /// Largest `|A_ij - A_ji|`.
    pub fn symmetry_defect(&self) -> T {
        let mut d = T::zero();
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (&j, &x) in c.iter().zip(v) {
                d = d.max((x - self.get(j, i)).abs());
            }
        }
        d
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// Converts the value type, e.g. for mixed-precision experiments.
    pub fn cast<U: Real>(&self) -> Csr<U> {
        Csr {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
            values: self.values.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Csr<f64> {
        let mut t = Triplets::new(3, 4);
        t.push(0, 0, 1.0);
        t.push(0, 3, 2.0);
        t.push(1, 1, 3.0);
        t.push(2, 0, 4.0);
        t.push(2, 2, 5.0);
        t.push(2, 0, 1.0);
        t.build()
    }

    #[test]
    fn duplicates_are_summed() {
        let a = sample();
        assert_eq!(a.get(2, 0), 5.0);
        assert_eq!(a.nnz(), 5);
    }

    #[test]
    fn matvec_agrees_with_dense() {
        let a = sample();
        let x = [1.0, -1.0, 2.0, 0.5];
        assert_eq!(a.matvec(&x), a.to_dense().matvec(&x));
        let y = [1.0, 2.0, -3.0];
        assert_eq!(a.matvec_t(&y), a.to_dense().matvec_t(&y));
        assert_eq!(a.transpose().matvec(&y), a.matvec_t(&y));
    }

    #[test]
    fn product_agrees_with_dense() {
        let a = sample();
        let at = a.transpose();
        let p = a.matmul(&at).to_dense();
        let q = a.to_dense().matmul(&at.to_dense());
        assert_eq!(p, q);
        assert_eq!(a.matmul(&at).symmetry_defect(), 0.0);
    }

    #[test]
    fn linear_combination_shares_pattern() {
        let a = sample();
        let b = a.scaled(2.0);
        let c = Csr::linear_combination(&[1.0, -0.5], &[&a, &b]);
        assert!(c.values.iter().all(|&v| v == 0.0));
        assert!(c.same_pattern(&a));
    }

    #[test]
    fn general_add() {
        let a = sample();
        let i = Csr::<f64>::identity(4);
        let at = a.transpose();
        let s = at.matmul(&a).add(1.0, &i, 2.0).to_dense();
        let mut e = at.to_dense().matmul(&a.to_dense());
        e.add_scaled(2.0, &Mat::identity(4));
        assert_eq!(s, e);
    }
}
