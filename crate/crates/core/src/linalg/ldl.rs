//! Sparse `LDLᵀ` factorization (up-looking, elimination-tree based).
//!
//! Works for symmetric positive definite and for symmetric quasi-definite
//! matrices such as the augmented saddle systems; no pivoting is performed,
//! so the caller chooses an ordering for which all pivots are nonzero.

use crate::error::{Error, Result};
use crate::linalg::ordering::invert;
use crate::linalg::sparse::Csr;
use crate::scalar::Real;

#[derive(Clone, Debug)]
pub struct Ldl<T> {
    n: usize,
    perm: Vec<usize>,
    pinv: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<T>,
    d: Vec<T>,
}

impl<T: Real> Ldl<T> {
    /// Factors `P A Pᵀ = L D Lᵀ` where `perm[new] = old`.
    ///
    /// `a` must hold the full symmetric matrix (both triangles); only the
    /// upper triangle of the permuted matrix is read. A pivot with
    /// `|d| <= pivot_tol * max|A|` is reported as a factorization failure.
    pub fn factor(a: &Csr<T>, perm: Vec<usize>, pivot_tol: T) -> Result<Self> {
        assert_eq!(a.nrows, a.ncols, "LDL needs a square matrix");
        let n = a.nrows;
        assert_eq!(perm.len(), n);
        let pinv = invert(&perm);

        // symbolic: elimination tree and column counts
        let mut parent = vec![usize::MAX; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            let (cols, _) = a.row(perm[k]);
            for &c in cols {
                let mut i = pinv[c];
                if i < k {
                    while flag[i] != k {
                        if parent[i] == usize::MAX {
                            parent[i] = k;
                        }
                        lnz[i] += 1;
                        flag[i] = k;
                        i = parent[i];
                    }
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + lnz[k];
        }
        let total = lp[n];

        // numeric
        let mut li = vec![0usize; total];
        let mut lx = vec![T::zero(); total];
        let mut d = vec![T::zero(); n];
        let mut y = vec![T::zero(); n];
        let mut pattern = vec![0usize; n];
        let scale = a.max_abs().max(T::min_positive_value());
        lnz.iter_mut().for_each(|c| *c = 0);
        flag.iter_mut().for_each(|f| *f = usize::MAX);
        for k in 0..n {
            let mut top = n;
            flag[k] = k;
            let (cols, vals) = a.row(perm[k]);
            for (&c, &v) in cols.iter().zip(vals) {
                let mut i = pinv[c];
                if i <= k {
                    y[i] += v;
                    let mut len = 0;
                    while flag[i] != k {
                        pattern[len] = i;
                        len += 1;
                        flag[i] = k;
                        i = parent[i];
                    }
                    while len > 0 {
                        top -= 1;
                        len -= 1;
                        pattern[top] = pattern[len];
                    }
                }
            }
            let mut dk = y[k];
            y[k] = T::zero();
            for &i in &pattern[top..n] {
                let yi = y[i];
                y[i] = T::zero();
                let p2 = lp[i] + lnz[i];
                for p in lp[i]..p2 {
                    y[li[p]] -= lx[p] * yi;
                }
                let lki = yi / d[i];
                dk -= lki * yi;
                li[p2] = k;
                lx[p2] = lki;
                lnz[i] += 1;
            }
            if !(dk.abs() > pivot_tol * scale) {
                return Err(Error::Factorization {
                    row: perm[k],
                    pivot: dk.abs().to_f64_lossy(),
                });
            }
            d[k] = dk;
        }
        Ok(Ldl {
            n,
            perm,
            pinv,
            lp,
            li,
            lx,
            d,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz_l(&self) -> usize {
        self.lx.len()
    }

    pub fn diagonal(&self) -> &[T] {
        &self.d
    }

    /// Number of negative pivots (the inertia's negative count).
    pub fn negative_pivots(&self) -> usize {
        self.d.iter().filter(|&&v| v < T::zero()).count()
    }

    pub fn min_abs_pivot(&self) -> T {
        self.d.iter().fold(T::infinity(), |m, &v| m.min(v.abs()))
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        assert_eq!(b.len(), self.n);
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for j in 0..self.n {
            let xj = x[j];
            if xj != T::zero() {
                for p in self.lp[j]..self.lp[j + 1] {
                    x[self.li[p]] -= self.lx[p] * xj;
                }
            }
        }
        for j in 0..self.n {
            x[j] /= self.d[j];
        }
        for j in (0..self.n).rev() {
            let mut s = x[j];
            for p in self.lp[j]..self.lp[j + 1] {
                s -= self.lx[p] * x[self.li[p]];
            }
            x[j] = s;
        }
        let mut out = vec![T::zero(); self.n];
        for (new, &v) in x.iter().enumerate() {
            out[self.perm[new]] = v;
        }
        debug_assert!(self.pinv.len() == self.n);
        out
    }
}

/// Adjacency lists of a symmetric sparsity pattern.
pub fn adjacency<T: Real>(a: &Csr<T>) -> Vec<Vec<usize>> {
    (0..a.nrows)
        .map(|i| a.row(i).0.iter().copied().filter(|&j| j != i).collect())
        .collect()
}

/// Factors an SPD matrix with an RCM ordering.
pub fn factor_spd<T: Real>(a: &Csr<T>) -> Result<Ldl<T>> {
    let perm = crate::linalg::ordering::reverse_cuthill_mckee(&adjacency(a));
    let f = Ldl::factor(a, perm, T::epsilon() * T::lit(1e-2))?;
    if let Some((row, &p)) = f.d.iter().enumerate().find(|(_, &v)| v <= T::zero()) {
        return Err(Error::Factorization {
            row: f.perm[row],
            pivot: p.to_f64_lossy(),
        });
    }
    Ok(f)
}
