//! Reduced spaces built by greedy sampling, the Galerkin-projected affine
//! blocks, and the reduced optimal control model.
//!
//! The edge basis is orthonormal in `X_curl`, the nodal basis in `X_grad`.
//! Truth-size products `A_q z`, `MD_q z`, `B_q z`, `MU_q z` and `Π₀ z` are
//! cached per basis vector so that extension only computes the new rows and
//! columns of each projected block.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{ControlBox, ControlGeometry, OcpModel, OcpOptions, OcpSolution, solve_ocp};
use crate::error::{Error, Result};
use crate::estimator::{self, Online};
use crate::fespace::OperatorBlocks;
use crate::linalg::dense::sym_eigen;
use crate::linalg::{Csr, Lu, Mat};
use crate::model::Setup;
use crate::problem::{ConstantsLedger, Thetas};
use crate::scalar::{axpy, dot, Real};
use crate::truth::Truth;

/// Relative norm below which an orthogonalized candidate is dropped.
pub const DEFLATION_TOL: f64 = 1e-10;

/// Smallest acceptable reduced kernel coercivity eigenvalue and reduced
/// inf-sup constant.
pub const STABILITY_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
struct Products<T> {
    a: Vec<Vec<Vec<T>>>,
    md: Vec<Vec<Vec<T>>>,
    b: Vec<Vec<Vec<T>>>,
    mu: Vec<Vec<Vec<T>>>,
    pi0: Vec<Vec<T>>,
}

/// Orthonormal reduced spaces and the projected affine blocks.
#[derive(Clone, Debug)]
pub struct ReducedBasis<T> {
    z_e: Vec<Vec<T>>,
    xz_e: Vec<Vec<T>>,
    z_v: Vec<Vec<T>>,
    xz_v: Vec<Vec<T>>,
    prod: Products<T>,
    /// `Z_Eᵀ A_q Z_E` per `σ⁻¹` term.
    pub a_hat: Vec<Mat<T>>,
    /// `Z_Eᵀ MD_q Z_E` per `ε` term.
    pub md_hat: Vec<Mat<T>>,
    /// `Z_Vᵀ B_q Z_E` per `ε` term.
    pub b_hat: Vec<Mat<T>>,
    /// `Z_Vᵀ r_q` per `ρ` term.
    pub r_hat: Vec<Vec<T>>,
    /// `Z_Eᵀ (ε_q E_d,s, ·)_D` indexed `[q][s]`.
    pub ed_hat: Vec<Vec<Vec<T>>>,
    /// Parameters whose truth solutions were added, in order.
    pub snapshots: Vec<Vec<f64>>,
}

/// How many vectors an extension kept.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Extension {
    pub added_e: usize,
    pub added_v: usize,
}

impl<T: Real> ReducedBasis<T> {
    pub fn empty(blocks: &OperatorBlocks<T>) -> Self {
        let n = |k: usize| vec![Vec::new(); k];
        ReducedBasis {
            z_e: Vec::new(),
            xz_e: Vec::new(),
            z_v: Vec::new(),
            xz_v: Vec::new(),
            prod: Products {
                a: n(blocks.q_sigma()),
                md: n(blocks.q_eps()),
                b: n(blocks.q_eps()),
                mu: n(blocks.q_eps()),
                pi0: Vec::new(),
            },
            a_hat: vec![Mat::zeros(0, 0); blocks.q_sigma()],
            md_hat: vec![Mat::zeros(0, 0); blocks.q_eps()],
            b_hat: vec![Mat::zeros(0, 0); blocks.q_eps()],
            r_hat: vec![Vec::new(); blocks.q_rho()],
            ed_hat: vec![vec![Vec::new(); blocks.q_ed()]; blocks.q_eps()],
            snapshots: Vec::new(),
        }
    }

    pub fn n_e(&self) -> usize {
        self.z_e.len()
    }

    pub fn n_v(&self) -> usize {
        self.z_v.len()
    }

    pub fn edge_basis(&self) -> &[Vec<T>] {
        &self.z_e
    }

    pub fn node_basis(&self) -> &[Vec<T>] {
        &self.z_v
    }

    /// Orthonormalizes the candidates against the current spaces (nodal
    /// first) and updates every projected block.
    pub fn extend(&mut self, blocks: &OperatorBlocks<T>, e_cands: &[Vec<T>], v_cands: &[Vec<T>]) -> Extension {
        let mut ext = Extension::default();
        for v in v_cands {
            if let Some((z, xz)) = orthonormalize(&self.z_v, &self.xz_v, &blocks.x_grad, v) {
                self.push_v(blocks, z, xz);
                ext.added_v += 1;
            }
        }
        for v in e_cands {
            if let Some((z, xz)) = orthonormalize(&self.z_e, &self.xz_e, &blocks.x_curl, v) {
                self.push_e(blocks, z, xz);
                ext.added_e += 1;
            }
        }
        ext
    }

    /// Adds `G ζ` for every nodal basis vector `ζ`.
    pub fn add_gradient_supremizers(&mut self, blocks: &OperatorBlocks<T>) -> usize {
        let grads: Vec<Vec<T>> = self.z_v.iter().map(|z| blocks.g.matvec(z)).collect();
        self.extend(blocks, &grads, &[]).added_e
    }

    fn push_e(&mut self, bl: &OperatorBlocks<T>, z: Vec<T>, xz: Vec<T>) {
        let j = self.z_e.len();
        for (q, a) in bl.a.iter().enumerate() {
            self.prod.a[q].push(a.matvec(&z));
        }
        for q in 0..bl.q_eps() {
            self.prod.md[q].push(bl.md[q].matvec(&z));
            self.prod.b[q].push(bl.b[q].matvec(&z));
            self.prod.mu[q].push(bl.mu[q].matvec(&z));
        }
        self.prod.pi0.push(bl.pi0.matvec(&z));
        self.z_e.push(z);
        self.xz_e.push(xz);

        let ze = &self.z_e;
        for (q, m) in self.a_hat.iter_mut().enumerate() {
            let p = &self.prod.a[q];
            *m = grow_symmetric(m, |i| dot(&ze[i], &p[j]));
        }
        for (q, m) in self.md_hat.iter_mut().enumerate() {
            let p = &self.prod.md[q];
            *m = grow_symmetric(m, |i| dot(&ze[i], &p[j]));
        }
        for (q, m) in self.b_hat.iter_mut().enumerate() {
            let p = &self.prod.b[q];
            *m = grow(m, self.z_v.len(), j + 1, |i, _| dot(&self.z_v[i], &p[j]));
        }
        for (q, row) in self.ed_hat.iter_mut().enumerate() {
            for (s, v) in row.iter_mut().enumerate() {
                v.push(dot(&ze[j], &bl.ed_load[q][s]));
            }
        }
    }

    fn push_v(&mut self, bl: &OperatorBlocks<T>, z: Vec<T>, xz: Vec<T>) {
        let i = self.z_v.len();
        for (q, m) in self.b_hat.iter_mut().enumerate() {
            let p = &self.prod.b[q];
            *m = grow(m, i + 1, self.z_e.len(), |_, j| dot(&z, &p[j]));
        }
        for (q, r) in self.r_hat.iter_mut().enumerate() {
            r.push(dot(&z, &bl.r[q]));
        }
        self.z_v.push(z);
        self.xz_v.push(xz);
    }

    /// The basis spanned by the first `n_e` edge and `n_v` nodal vectors.
    pub fn truncated(&self, blocks: &OperatorBlocks<T>, n_e: usize, n_v: usize) -> Result<Self> {
        if n_e > self.n_e() || n_v > self.n_v() {
            return Err(Error::InvalidArgument(format!(
                "cannot truncate a ({}, {}) basis to ({n_e}, {n_v})",
                self.n_e(),
                self.n_v()
            )));
        }
        let mut rb = Self::empty(blocks);
        for (z, xz) in self.z_v.iter().zip(&self.xz_v).take(n_v) {
            rb.push_v(blocks, z.clone(), xz.clone());
        }
        for (z, xz) in self.z_e.iter().zip(&self.xz_e).take(n_e) {
            rb.push_e(blocks, z.clone(), xz.clone());
        }
        rb.snapshots = self.snapshots.clone();
        Ok(rb)
    }

    /// `Z_E c`.
    pub fn lift_e(&self, c: &[T]) -> Result<Vec<T>> {
        lift(&self.z_e, c)
    }

    /// `Z_V c`.
    pub fn lift_v(&self, c: &[T]) -> Result<Vec<T>> {
        lift(&self.z_v, c)
    }

    /// `Σ_q θ_q Σ_j c_j A_q z_j`, from the cached products.
    pub fn a_lift(&self, sig: &[T], c: &[T]) -> Vec<T> {
        combine(&self.prod.a, sig, c)
    }

    /// `Σ_q θ_q Σ_j c_j B_q z_j`.
    pub fn b_lift(&self, eps: &[T], c: &[T]) -> Vec<T> {
        combine(&self.prod.b, eps, c)
    }

    /// `‖Z_Eᵀ X Z_E − I‖_max` and `‖Z_Vᵀ X Z_V − I‖_max`.
    pub fn orthonormality_defect(&self) -> (T, T) {
        let defect = |z: &[Vec<T>], xz: &[Vec<T>]| {
            let mut m = T::zero();
            for i in 0..z.len() {
                for j in 0..z.len() {
                    let id = if i == j { T::one() } else { T::zero() };
                    m = m.max((dot(&z[i], &xz[j]) - id).abs());
                }
            }
            m
        };
        (defect(&self.z_e, &self.xz_e), defect(&self.z_v, &self.xz_v))
    }

    /// Reduced model at `mu`.
    pub fn model<'a>(&'a self, setup: &'a Setup<T>, mu: &[f64]) -> Result<ReducedModel<'a, T>> {
        let th = setup.thetas(mu)?;
        ReducedModel::new(self, &setup.truth.blocks, &th, setup.control_box, setup.alpha).map_err(|e| e.at(mu))
    }

    /// Reduced optimal control at `mu`.
    pub fn solve<'a>(
        &'a self,
        setup: &'a Setup<T>,
        mu: &[f64],
        opts: &OcpOptions<T>,
    ) -> Result<(ReducedModel<'a, T>, OcpSolution<T>)> {
        let m = self.model(setup, mu)?;
        let sol = solve_ocp(&m, opts).map_err(|e| e.at(mu))?;
        Ok((m, sol))
    }

    pub fn to_archive(&self, config_hash: &str) -> Archive {
        let cast = |v: &[Vec<T>]| -> Vec<Vec<f64>> {
            v.iter().map(|z| z.iter().map(|x| x.to_f64_lossy()).collect()).collect()
        };
        Archive {
            config_hash: config_hash.to_string(),
            n_edge: self.z_e.first().map_or(0, Vec::len),
            n_node: self.z_v.first().map_or(0, Vec::len),
            edge_basis: cast(&self.z_e),
            node_basis: cast(&self.z_v),
            a_hat: self.a_hat.iter().map(mat_rows).collect(),
            md_hat: self.md_hat.iter().map(mat_rows).collect(),
            b_hat: self.b_hat.iter().map(mat_rows).collect(),
            snapshots: self.snapshots.clone(),
        }
    }

    /// Rebuilds a basis from an archive, recomputing every projection and
    /// checking it against the stored blocks.
    pub fn from_archive(blocks: &OperatorBlocks<T>, ar: &Archive) -> Result<Self> {
        let mut rb = Self::empty(blocks);
        let to_t = |v: &[f64]| -> Vec<T> { v.iter().map(|&x| T::lit(x)).collect() };
        for (name, basis, n) in [
            ("edge", &ar.edge_basis, blocks.x_curl.nrows),
            ("node", &ar.node_basis, blocks.x_grad.nrows),
        ] {
            if let Some(z) = basis.iter().find(|z| z.len() != n) {
                return Err(Error::Config(format!(
                    "archive {name} basis vector of length {} for {n} dofs",
                    z.len()
                )));
            }
        }
        // Stored vectors are already orthonormal; push them without
        // re-orthogonalization so the archive round-trips exactly.
        for z in &ar.node_basis {
            let z = to_t(z);
            let xz = blocks.x_grad.matvec(&z);
            rb.push_v(blocks, z, xz);
        }
        for z in &ar.edge_basis {
            let z = to_t(z);
            let xz = blocks.x_curl.matvec(&z);
            rb.push_e(blocks, z, xz);
        }
        rb.snapshots = ar.snapshots.clone();
        let tol = T::lit(1e-8);
        let (de, dv) = rb.orthonormality_defect();
        if de > tol || dv > tol {
            return Err(Error::Config(format!(
                "archive basis not orthonormal (defects {:e}, {:e})",
                de.to_f64_lossy(),
                dv.to_f64_lossy()
            )));
        }
        let stored = [&ar.a_hat, &ar.md_hat, &ar.b_hat];
        let fresh = [&rb.a_hat, &rb.md_hat, &rb.b_hat];
        for (k, (s, f)) in stored.iter().zip(fresh).enumerate() {
            if s.len() != f.len() {
                return Err(Error::Config(format!("archive block family {k} has {} terms, expected {}", s.len(), f.len())));
            }
            for (sm, fm) in s.iter().zip(f) {
                let rows = mat_rows(fm);
                let diff = sm
                    .iter()
                    .flatten()
                    .zip(rows.iter().flatten())
                    .fold(0f64, |m, (a, b)| m.max((a - b).abs()));
                if sm.len() != rows.len() || diff > 1e-8 {
                    return Err(Error::Config(format!(
                        "archive projected block family {k} disagrees with recomputation ({diff:e})"
                    )));
                }
            }
        }
        Ok(rb)
    }
}

/// Serializable reduced basis. Projected blocks are stored for inspection
/// and re-verified on load.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Archive {
    pub config_hash: String,
    pub n_edge: usize,
    pub n_node: usize,
    pub edge_basis: Vec<Vec<f64>>,
    pub node_basis: Vec<Vec<f64>>,
    pub a_hat: Vec<Vec<Vec<f64>>>,
    pub md_hat: Vec<Vec<Vec<f64>>>,
    pub b_hat: Vec<Vec<Vec<f64>>>,
    pub snapshots: Vec<Vec<f64>>,
}

fn mat_rows<T: Real>(m: &Mat<T>) -> Vec<Vec<f64>> {
    (0..m.rows).map(|i| m.row(i).iter().map(|x| x.to_f64_lossy()).collect()).collect()
}

/// Modified Gram–Schmidt with one reorthogonalization pass in the geometry
/// of `gram`. Returns the normalized vector and its image under `gram`.
fn orthonormalize<T: Real>(z: &[Vec<T>], xz: &[Vec<T>], gram: &Csr<T>, v: &[T]) -> Option<(Vec<T>, Vec<T>)> {
    let n0 = dot(v, &gram.matvec(v)).max(T::zero()).sqrt();
    if !(n0 > T::zero()) || !n0.is_finite() {
        return None;
    }
    let mut w = v.to_vec();
    for _ in 0..2 {
        for (zj, xzj) in z.iter().zip(xz) {
            let c = dot(xzj, &w);
            axpy(-c, zj, &mut w);
        }
    }
    let xw = gram.matvec(&w);
    let n = dot(&w, &xw).max(T::zero()).sqrt();
    if n < T::lit(DEFLATION_TOL) * n0 {
        return None;
    }
    let inv = T::one() / n;
    Some((w.iter().map(|&x| x * inv).collect(), xw.iter().map(|&x| x * inv).collect()))
}

fn lift<T: Real>(z: &[Vec<T>], c: &[T]) -> Result<Vec<T>> {
    if c.len() != z.len() {
        return Err(Error::DimensionMismatch {
            expected: z.len(),
            got: c.len(),
        });
    }
    let n = z.first().map_or(0, Vec::len);
    let mut out = vec![T::zero(); n];
    for (zj, &cj) in z.iter().zip(c) {
        axpy(cj, zj, &mut out);
    }
    Ok(out)
}

fn combine<T: Real>(prod: &[Vec<Vec<T>>], theta: &[T], c: &[T]) -> Vec<T> {
    let n = prod.iter().flat_map(|p| p.first()).next().map_or(0, Vec::len);
    let mut out = vec![T::zero(); n];
    for (p, &t) in prod.iter().zip(theta) {
        for (v, &cj) in p.iter().zip(c) {
            axpy(t * cj, v, &mut out);
        }
    }
    out
}

/// Copies `m` into a `rows × cols` matrix and fills the new entries.
fn grow<T: Real>(m: &Mat<T>, rows: usize, cols: usize, f: impl Fn(usize, usize) -> T) -> Mat<T> {
    let mut out = Mat::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            out[(i, j)] = if i < m.rows && j < m.cols { m[(i, j)] } else { f(i, j) };
        }
    }
    out
}

/// Adds one row and column to a symmetric matrix; `f(i)` is the entry
/// coupling basis vector `i` with the new one.
fn grow_symmetric<T: Real>(m: &Mat<T>, f: impl Fn(usize) -> T) -> Mat<T> {
    let n = m.rows;
    let col: Vec<T> = (0..=n).map(f).collect();
    grow(m, n + 1, n + 1, |i, j| if i == n { col[j] } else { col[i] })
}

fn combine_mats<T: Real>(mats: &[Mat<T>], theta: &[T], rows: usize, cols: usize) -> Mat<T> {
    let mut out = Mat::zeros(rows, cols);
    for (m, &t) in mats.iter().zip(theta) {
        out.add_scaled(t, m);
    }
    out
}

/// The reduced saddle systems and data at one parameter. The control stays
/// in the full piecewise-constant space.
pub struct ReducedModel<'a, T> {
    pub rb: &'a ReducedBasis<T>,
    pub theta: Thetas,
    pub sig: Vec<T>,
    pub eps: Vec<T>,
    pub a: Mat<T>,
    pub b: Mat<T>,
    pub md: Mat<T>,
    /// `Z_Vᵀ(−r(μ))`.
    pub g: Vec<T>,
    /// `Z_Eᵀ (ε E_d, ·)_D`.
    pub l: Vec<T>,
    pub ed_norm2: T,
    pub u_d: Vec<T>,
    pub control: ControlGeometry<T>,
    pub control_box: ControlBox<T>,
    pub alpha: T,
    saddle: Mat<T>,
    lu: Lu<T>,
    /// `MU(μ) z_j` in control layout.
    muz: Vec<Vec<T>>,
}

impl<'a, T: Real> ReducedModel<'a, T> {
    pub fn new(
        rb: &'a ReducedBasis<T>,
        bl: &OperatorBlocks<T>,
        theta: &Thetas,
        control_box: ControlBox<T>,
        alpha: T,
    ) -> Result<Self> {
        let counts = [
            (theta.sigma.len(), rb.a_hat.len()),
            (theta.eps.len(), rb.b_hat.len()),
            (theta.rho.len(), rb.r_hat.len()),
            (theta.u_d.len(), bl.q_ud()),
            (theta.e_d.len(), bl.q_ed()),
        ];
        for (got, expected) in counts {
            if got != expected {
                return Err(Error::DimensionMismatch { expected, got });
            }
        }
        let (ne, nv) = (rb.n_e(), rb.n_v());
        if ne == 0 {
            return Err(Error::ReducedInfSup("empty edge basis".into()));
        }
        let sig = Thetas::cast::<T>(&theta.sigma);
        let eps = Thetas::cast::<T>(&theta.eps);
        let rho = Thetas::cast::<T>(&theta.rho);
        let ud = Thetas::cast::<T>(&theta.u_d);
        let ed = Thetas::cast::<T>(&theta.e_d);

        let a = combine_mats(&rb.a_hat, &sig, ne, ne);
        let b = combine_mats(&rb.b_hat, &eps, nv, ne);
        let md = combine_mats(&rb.md_hat, &eps, ne, ne);
        let mut g = vec![T::zero(); nv];
        for (r, &t) in rb.r_hat.iter().zip(&rho) {
            axpy(-t, r, &mut g);
        }
        let mut l = vec![T::zero(); ne];
        let mut ed_norm2 = T::zero();
        for (q, &tq) in eps.iter().enumerate() {
            for (s, &ts) in ed.iter().enumerate() {
                axpy(tq * ts, &rb.ed_hat[q][s], &mut l);
                for (t, &tt) in ed.iter().enumerate() {
                    ed_norm2 += tq * ts * tt * bl.ed_gram[q][s][t];
                }
            }
        }
        let mut u_d = vec![T::zero(); bl.pi0.nrows];
        for (v, &t) in bl.u_d.iter().zip(&ud) {
            axpy(t, v, &mut u_d);
        }
        let muz = (0..ne)
            .map(|j| {
                let mut v = vec![T::zero(); bl.pi0.nrows];
                for (q, &t) in eps.iter().enumerate() {
                    axpy(t, &rb.prod.mu[q][j], &mut v);
                }
                v
            })
            .collect();

        let n = ne + nv;
        let mut saddle = Mat::zeros(n, n);
        for i in 0..ne {
            for j in 0..ne {
                saddle[(i, j)] = a[(i, j)];
            }
        }
        for i in 0..nv {
            for j in 0..ne {
                saddle[(ne + i, j)] = b[(i, j)];
                saddle[(j, ne + i)] = b[(i, j)];
            }
        }
        let lu = Lu::new(&saddle, T::lit(1e-13).max(T::epsilon() * T::lit(100.0))).map_err(|e| match e {
            Error::Factorization { row, pivot } => {
                Error::ReducedInfSup(format!("zero pivot at reduced row {row} (|pivot| {pivot:e})"))
            }
            other => other,
        })?;
        let control = ControlGeometry::new(bl, &eps)?;
        Ok(ReducedModel {
            rb,
            theta: theta.clone(),
            sig,
            eps,
            a,
            b,
            md,
            g,
            l,
            ed_norm2,
            u_d,
            control,
            control_box,
            alpha,
            saddle,
            lu,
            muz,
        })
    }

    /// Solves the reduced saddle system with one refinement step; returns
    /// field and multiplier coordinates.
    pub fn solve_saddle(&self, f: &[T], g: &[T]) -> (Vec<T>, Vec<T>) {
        let ne = self.rb.n_e();
        let rhs: Vec<T> = f.iter().chain(g).copied().collect();
        let mut x = self.lu.solve(&rhs);
        let ax = self.saddle.matvec(&x);
        let r: Vec<T> = rhs.iter().zip(&ax).map(|(&p, &q)| p - q).collect();
        let dx = self.lu.solve(&r);
        axpy(T::one(), &dx, &mut x);
        let mult = x.split_off(ne);
        (x, mult)
    }

    /// `Z_Eᵀ MU(μ)ᵀ u`.
    pub fn control_load(&self, u: &[T]) -> Vec<T> {
        self.muz.iter().map(|v| dot(v, u)).collect()
    }

    /// `max_i |(B̂ e − ĝ)_i|`.
    pub fn divergence_defect(&self, e: &[T]) -> T {
        let be = self.b.matvec(e);
        be.iter().zip(&self.g).fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()))
    }

    /// Smallest eigenvalue of `Â(μ)` on the kernel of `B̂(μ)` and the
    /// reduced inf-sup constant `β_N = σ_min(B̂(μ))`. Both bases are
    /// orthonormal, so no Gram matrices enter.
    pub fn stability(&self) -> Result<(T, T)> {
        let (ne, nv) = (self.rb.n_e(), self.rb.n_v());
        let beta = if nv == 0 {
            T::infinity()
        } else {
            let bbt = self.b.matmul(&self.b.transpose());
            sym_eigen(&bbt)?.0[0].max(T::zero()).sqrt()
        };
        let btb = self.b.transpose().matmul(&self.b);
        let (vals, vecs) = sym_eigen(&btb)?;
        let top = vals.last().copied().unwrap_or(T::zero()).max(T::one());
        let cut = T::lit(1e-10) * top;
        let kernel: Vec<Vec<T>> = (0..ne).filter(|&k| vals[k] <= cut).map(|k| vecs.column(k)).collect();
        let coercivity = if kernel.is_empty() {
            T::infinity()
        } else {
            let q = Mat::from_columns(&kernel);
            let aq = q.transpose().matmul(&self.a).matmul(&q);
            sym_eigen(&aq)?.0[0]
        };
        Ok((coercivity, beta))
    }
}

impl<T: Real> OcpModel<T> for ReducedModel<'_, T> {
    fn geometry(&self) -> &ControlGeometry<T> {
        &self.control
    }

    fn control_box(&self) -> &ControlBox<T> {
        &self.control_box
    }

    fn alpha(&self) -> T {
        self.alpha
    }

    fn desired_control(&self) -> &[T] {
        &self.u_d
    }

    fn state(&self, u: &[T]) -> Result<Vec<T>> {
        Ok(self.solve_saddle(&self.control_load(u), &self.g).0)
    }

    fn adjoint(&self, e: &[T]) -> Result<Vec<T>> {
        let mut rhs = self.md.matvec(e);
        axpy(-T::one(), &self.l, &mut rhs);
        Ok(self.solve_saddle(&rhs, &vec![T::zero(); self.rb.n_v()]).0)
    }

    fn adjoint_mean(&self, f: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.u_d.len()];
        for (p, &c) in self.rb.prod.pi0.iter().zip(f) {
            axpy(c, p, &mut out);
        }
        out
    }

    fn cost(&self, u: &[T], e: &[T]) -> T {
        let half = T::lit(0.5);
        let track = self.md.bilinear(e, e) - T::lit(2.0) * dot(e, &self.l) + self.ed_norm2;
        let d = self.control.dist(u, &self.u_d);
        half * track.max(T::zero()) + half * self.alpha * d * d
    }
}

// ---------------------------------------------------------------------------
// greedy

#[derive(Clone, Debug)]
pub struct GreedyOptions<T> {
    pub tol: f64,
    /// Largest number of snapshot parameters.
    pub n_max: usize,
    pub truth: OcpOptions<T>,
    pub reduced: OcpOptions<T>,
}

impl<T: Real> GreedyOptions<T> {
    pub fn new(tol: f64, n_max: usize) -> Self {
        GreedyOptions {
            tol,
            n_max,
            truth: OcpOptions::truth(),
            reduced: OcpOptions::reduced(),
        }
    }
}

/// One greedy iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyStep {
    pub iteration: usize,
    /// Parameter whose truth solution was added.
    pub mu: Vec<f64>,
    pub n_e: usize,
    pub n_v: usize,
    /// `max Δ^ab` over the training set after the extension.
    pub max_delta: f64,
    /// Training index attaining it (lowest on ties).
    pub argmax: usize,
    /// Smallest reduced kernel coercivity eigenvalue over the training set.
    pub min_coercivity: f64,
    /// Smallest reduced inf-sup constant over the training set.
    pub min_beta: f64,
    /// Gradient supremizers added to restore stability.
    pub supremizers: usize,
}

/// Result of a greedy run.
pub struct Greedy<T> {
    pub basis: ReducedBasis<T>,
    pub log: Vec<GreedyStep>,
    /// Estimator evaluations of the final basis over the training set.
    pub final_sweep: Vec<Online<T>>,
    pub converged: bool,
}

/// Truth snapshot data for one parameter: the optimal state and adjoint,
/// their unit-weight Helmholtz potentials, and the adjoint multiplier.
pub fn snapshot_candidates<T: Real>(setup: &Setup<T>, mu: &[f64], opts: &OcpOptions<T>) -> Result<(Vec<Vec<T>>, Vec<Vec<T>>)> {
    let m = setup.truth_model(mu)?;
    let sol = solve_ocp(&m, opts).map_err(|e| e.at(mu))?;
    let eta = m.at.solve_adjoint_full(&sol.e).map_err(|e| e.at(mu))?.multiplier;
    let truth: &Truth<T> = &setup.truth;
    let (_, h_e) = truth.helmholtz(&sol.e);
    let (_, h_f) = truth.helmholtz(&sol.f);
    let g = &truth.blocks.g;
    let e_cands = vec![sol.e.clone(), sol.f.clone(), g.matvec(&h_e), g.matvec(&h_f), g.matvec(&eta)];
    let v_cands = vec![h_e, h_f, eta];
    Ok((e_cands, v_cands))
}

/// Greedy sampling driven by the absolute control-error estimator.
///
/// Starts from `training[0]`, adds the truth snapshot at the current
/// parameter, checks reduced stability over the training set (adding
/// gradient supremizers when it degrades), evaluates the estimator in
/// parallel and moves to its argmax. Stops once the largest estimate is at
/// most `tol` or `n_max` snapshots have been taken.
pub fn greedy<T: Real>(
    setup: &Setup<T>,
    training: &[Vec<f64>],
    ledger: &ConstantsLedger,
    opts: &GreedyOptions<T>,
) -> Result<Greedy<T>> {
    if training.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if opts.n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    for mu in training {
        setup.problem.domain.check(mu)?;
    }
    let blocks = &setup.truth.blocks;
    let mut rb = ReducedBasis::empty(blocks);
    let mut log = Vec::new();
    let mut next = 0usize;
    loop {
        let mu = training[next].clone();
        let (e_cands, v_cands) = snapshot_candidates(setup, &mu, &opts.truth)?;
        let ext = rb.extend(blocks, &e_cands, &v_cands);
        if ext.added_e == 0 && ext.added_v == 0 {
            log::warn!("snapshot at {mu:?} added nothing to the reduced spaces");
        }
        rb.snapshots.push(mu.clone());

        let mut supremizers = 0;
        let (mut min_c, mut min_b) = stability_sweep(&rb, setup, training)?;
        if (min_c < STABILITY_FLOOR || min_b < STABILITY_FLOOR) && rb.n_v() > 0 {
            supremizers = rb.add_gradient_supremizers(blocks);
            (min_c, min_b) = stability_sweep(&rb, setup, training)?;
        }
        if min_c < STABILITY_FLOOR || min_b < STABILITY_FLOOR {
            return Err(Error::ReducedInfSup(format!(
                "after {} snapshots: kernel coercivity {min_c:e}, inf-sup {min_b:e}",
                rb.snapshots.len()
            )));
        }

        let sweep = estimator::sweep(&rb, setup, training, ledger, &opts.reduced)?;
        let (argmax, max_delta) = argmax(sweep.iter().map(|o| o.certificate.delta_ab));
        log::info!(
            "greedy {}: added {mu:?}, N_E = {}, N_V = {}, max Δ = {max_delta:e} at {:?}",
            log.len(),
            rb.n_e(),
            rb.n_v(),
            training[argmax]
        );
        log.push(GreedyStep {
            iteration: log.len(),
            mu,
            n_e: rb.n_e(),
            n_v: rb.n_v(),
            max_delta,
            argmax,
            min_coercivity: min_c,
            min_beta: min_b,
            supremizers,
        });
        let converged = max_delta <= opts.tol;
        if converged || rb.snapshots.len() >= opts.n_max {
            return Ok(Greedy {
                basis: rb,
                log,
                final_sweep: sweep,
                converged,
            });
        }
        next = argmax;
    }
}

/// Lowest index attaining the maximum; NaN counts as +∞.
pub fn argmax(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Smallest reduced kernel coercivity and inf-sup constants over `sample`.
pub fn stability_sweep<T: Real>(rb: &ReducedBasis<T>, setup: &Setup<T>, sample: &[Vec<f64>]) -> Result<(f64, f64)> {
    let vals: Vec<(f64, f64)> = sample
        .par_iter()
        .map(|mu| -> Result<(f64, f64)> {
            let (c, b) = rb.model(setup, mu)?.stability().map_err(|e| e.at(mu))?;
            Ok((c.to_f64_lossy(), b.to_f64_lossy()))
        })
        .collect::<Result<_>>()?;
    Ok(vals
        .iter()
        .fold((f64::INFINITY, f64::INFINITY), |(c, b), &(x, y)| (c.min(x), b.min(y))))
}
