//! Projection onto the admissible controls (box ∩ ε-divergence-free) and
//! the damped projected fixed-point solver for the optimality system.

use crate::error::{Error, Result};
use crate::fespace::OperatorBlocks;
use crate::linalg::ldl::factor_spd;
use crate::linalg::{Csr, Ldl};
use crate::scalar::{max_abs, Real};

/// Componentwise control bounds; infinite entries disable a side.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlBox<T> {
    pub lower: [T; 3],
    pub upper: [T; 3],
}

impl<T: Real> ControlBox<T> {
    pub fn new(lower: [T; 3], upper: [T; 3]) -> Result<Self> {
        if (0..3).any(|d| !(lower[d] <= upper[d])) {
            return Err(Error::InvalidArgument(format!(
                "control bounds {lower:?} > {upper:?}"
            )));
        }
        Ok(ControlBox { lower, upper })
    }

    pub fn unbounded() -> Self {
        ControlBox {
            lower: [T::neg_infinity(); 3],
            upper: [T::infinity(); 3],
        }
    }

    pub fn from_f64(lower: [f64; 3], upper: [f64; 3]) -> Result<Self> {
        Self::new(lower.map(T::lit), upper.map(T::lit))
    }

    pub fn is_unbounded(&self) -> bool {
        (0..3).all(|d| self.lower[d] == T::neg_infinity() && self.upper[d] == T::infinity())
    }

    /// Componentwise `median(lower, w, upper)`.
    pub fn clamp(&self, w: &[T]) -> Vec<T> {
        w.iter()
            .enumerate()
            .map(|(i, &x)| x.max(self.lower[i % 3]).min(self.upper[i % 3]))
            .collect()
    }

    /// Corners of the box with infinite sides replaced by `±cap`.
    pub fn vertices(&self, cap: T) -> Vec<[T; 3]> {
        let lo = self.lower.map(|v| if v.is_finite() { v } else { -cap });
        let hi = self.upper.map(|v| if v.is_finite() { v } else { cap });
        (0..8)
            .map(|m| [0, 1, 2].map(|d| if m >> d & 1 == 1 { hi[d] } else { lo[d] }))
            .collect()
    }

    pub fn contains(&self, w: &[T]) -> bool {
        w.iter()
            .enumerate()
            .all(|(i, &x)| x >= self.lower[i % 3] && x <= self.upper[i % 3])
    }
}

/// The ε(μ)-weighted control geometry at one parameter: weights
/// `ε_T |T|` per control dof, the divergence operator and the factored
/// ε-weighted nodal Laplacian `K(μ) = GUᵀ W GU`.
pub struct ControlGeometry<T> {
    pub weights: Vec<T>,
    pub volumes: Vec<T>,
    gu: Csr<T>,
    k: Ldl<T>,
    k_diag_sqrt: Vec<T>,
}

impl<T: Real> ControlGeometry<T> {
    /// Builds the geometry for ε-term coefficients `eps`.
    pub fn new(blocks: &OperatorBlocks<T>, eps: &[T]) -> Result<Self> {
        if eps.len() != blocks.q_eps() {
            return Err(Error::DimensionMismatch {
                expected: blocks.q_eps(),
                got: eps.len(),
            });
        }
        let nt = blocks.volumes.len();
        let mut eps_tet = vec![T::zero(); nt];
        for (q, &t) in eps.iter().enumerate() {
            crate::scalar::axpy(t, &blocks.eps_tet[q], &mut eps_tet);
        }
        Self::from_tet_weights(&blocks.gu, &blocks.volumes, &eps_tet)
    }

    pub fn from_tet_weights(gu: &Csr<T>, volumes: &[T], eps_tet: &[T]) -> Result<Self> {
        if let Some(k) = eps_tet.iter().position(|&e| !(e > T::zero())) {
            return Err(Error::InvalidArgument(format!(
                "ε must be positive; tet {k} has {}",
                eps_tet[k]
            )));
        }
        let weights: Vec<T> = (0..3 * volumes.len())
            .map(|i| eps_tet[i / 3] * volumes[i / 3])
            .collect();
        let wgu = gu.mul_rows(&weights);
        let k = gu.transpose().matmul(&wgu);
        let k_diag_sqrt = k.diagonal().into_iter().map(|v| v.sqrt()).collect();
        let k = factor_spd(&k).map_err(|e| match e {
            Error::Factorization { row, pivot } => Error::InfSup { row, pivot },
            other => other,
        })?;
        Ok(ControlGeometry {
            weights,
            volumes: volumes.to_vec(),
            gu: gu.clone(),
            k,
            k_diag_sqrt,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `(ε a, b)`.
    pub fn inner(&self, a: &[T], b: &[T]) -> T {
        let mut s = T::zero();
        for i in 0..self.weights.len() {
            s += self.weights[i] * a[i] * b[i];
        }
        s
    }

    /// `‖√ε (a − b)‖`.
    pub fn dist(&self, a: &[T], b: &[T]) -> T {
        let mut s = T::zero();
        for i in 0..self.weights.len() {
            let d = a[i] - b[i];
            s += self.weights[i] * d * d;
        }
        s.sqrt()
    }

    /// Unweighted `‖a − b‖_{L²}`.
    pub fn l2_dist(&self, a: &[T], b: &[T]) -> T {
        let mut s = T::zero();
        for i in 0..a.len() {
            let d = a[i] - b[i];
            s += self.volumes[i / 3] * d * d;
        }
        s.sqrt()
    }

    pub fn l2_norm(&self, a: &[T]) -> T {
        let mut s = T::zero();
        for (i, &x) in a.iter().enumerate() {
            s += self.volumes[i / 3] * x * x;
        }
        s.sqrt()
    }

    /// `(ε u, ∇φ)` for every nodal `φ`.
    pub fn divergence(&self, u: &[T]) -> Vec<T> {
        let wu: Vec<T> = u.iter().zip(&self.weights).map(|(&x, &w)| x * w).collect();
        self.gu.matvec_t(&wu)
    }

    /// `max_φ |(ε u, ∇φ)| / ‖√ε ∇φ‖` over the nodal basis.
    pub fn div_residual(&self, u: &[T]) -> T {
        self.divergence(u)
            .iter()
            .zip(&self.k_diag_sqrt)
            .fold(T::zero(), |m, (&d, &s)| m.max(d.abs() / s))
    }

    pub fn solve_laplace(&self, rhs: &[T]) -> Vec<T> {
        self.k.solve(rhs)
    }

    /// Per-tet gradients of a nodal function.
    pub fn gradient(&self, psi: &[T]) -> Vec<T> {
        self.gu.matvec(psi)
    }

    /// ε-weighted L² projection onto the discrete ε-divergence-free
    /// controls: `w − ∇ψ` with `(ε∇ψ, ∇φ) = (ε w, ∇φ)`.
    pub fn project_divfree(&self, w: &[T]) -> Vec<T> {
        let psi = self.k.solve(&self.divergence(w));
        let mut out = w.to_vec();
        self.gu.matvec_acc(-T::one(), &psi, &mut out);
        out
    }

    /// Dykstra's alternating projections between the divergence-free
    /// subspace and the box, in the ε-weighted geometry. The box step comes
    /// last, so the result is always inside the box.
    pub fn project_admissible(&self, w: &[T], bx: &ControlBox<T>, opts: &ProjectionOptions<T>) -> Projection<T> {
        if bx.is_unbounded() {
            let u = self.project_divfree(w);
            let div = self.div_residual(&u);
            return Projection {
                u,
                sweeps: 1,
                change: T::zero(),
                div_residual: div,
                converged: true,
            };
        }
        let mut x = w.to_vec();
        let mut q = vec![T::zero(); w.len()];
        let mut change = T::infinity();
        let mut div = T::infinity();
        let mut sweeps = 0;
        while sweeps < opts.max_sweeps {
            sweeps += 1;
            let y = self.project_divfree(&x);
            let yq: Vec<T> = y.iter().zip(&q).map(|(&a, &b)| a + b).collect();
            let next = bx.clamp(&yq);
            for i in 0..q.len() {
                q[i] = yq[i] - next[i];
            }
            change = x
                .iter()
                .zip(&next)
                .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));
            x = next;
            if change < opts.tol {
                div = self.div_residual(&x);
                if div <= T::lit(10.0) * opts.tol {
                    break;
                }
            }
        }
        if !(change < opts.tol && div <= T::lit(10.0) * opts.tol) {
            div = self.div_residual(&x);
        }
        let converged = change < opts.tol && div <= T::lit(10.0) * opts.tol;
        Projection {
            u: x,
            sweeps,
            change,
            div_residual: div,
            converged,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ProjectionOptions<T> {
    pub max_sweeps: usize,
    pub tol: T,
}

impl<T: Real> Default for ProjectionOptions<T> {
    fn default() -> Self {
        ProjectionOptions {
            max_sweeps: 20_000,
            tol: T::lit(1e-11).max(T::epsilon() * T::lit(10.0)),
        }
    }
}

/// Result of a projection onto the admissible set.
#[derive(Clone, Debug)]
pub struct Projection<T> {
    pub u: Vec<T>,
    pub sweeps: usize,
    pub change: T,
    pub div_residual: T,
    pub converged: bool,
}

impl<T: Real> Projection<T> {
    pub fn into_result(self) -> Result<Vec<T>> {
        if self.converged {
            Ok(self.u)
        } else {
            Err(Error::ProjectionNotConverged {
                sweeps: self.sweeps,
                change: self.change.to_f64_lossy(),
                div_residual: self.div_residual.to_f64_lossy(),
            })
        }
    }
}

/// What the fixed-point solver needs from a state/adjoint model at one
/// parameter. Implemented by the truth and the reduced solvers.
pub trait OcpModel<T: Real> {
    fn geometry(&self) -> &ControlGeometry<T>;
    fn control_box(&self) -> &ControlBox<T>;
    fn alpha(&self) -> T;
    /// Desired control `u_d(μ)`.
    fn desired_control(&self) -> &[T];
    /// State coefficients for control `u`.
    fn state(&self, u: &[T]) -> Result<Vec<T>>;
    /// Adjoint coefficients for state `e`.
    fn adjoint(&self, e: &[T]) -> Result<Vec<T>>;
    /// Per-tet mean `Π₀ F` of an adjoint, in control layout.
    fn adjoint_mean(&self, f: &[T]) -> Vec<T>;
    /// Cost `J(u, E)`.
    fn cost(&self, u: &[T], e: &[T]) -> T;
}

#[derive(Clone, Copy, Debug)]
pub struct OcpOptions<T> {
    pub tol: T,
    pub max_iter: usize,
    pub omega: T,
    pub projection: ProjectionOptions<T>,
    /// Treat an unconverged projection as an error.
    pub strict_projection: bool,
    /// Run the sampled variational-inequality check after convergence.
    pub kkt_check: bool,
}

impl<T: Real> OcpOptions<T> {
    /// Defaults for truth solves.
    pub fn truth() -> Self {
        OcpOptions {
            tol: T::lit(1e-9).max(T::epsilon() * T::lit(100.0)),
            max_iter: 500,
            omega: T::lit(0.7),
            projection: ProjectionOptions::default(),
            strict_projection: true,
            kkt_check: true,
        }
    }

    /// Defaults for reduced solves.
    pub fn reduced() -> Self {
        OcpOptions {
            tol: T::lit(1e-10).max(T::epsilon() * T::lit(100.0)),
            ..Self::truth()
        }
    }
}

/// One fixed-point iteration record.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow<T> {
    pub iteration: usize,
    pub increment: T,
    pub cost: T,
    pub omega: T,
    pub sweeps: usize,
}

#[derive(Clone, Debug)]
pub struct OcpSolution<T> {
    pub u: Vec<T>,
    pub e: Vec<T>,
    pub f: Vec<T>,
    pub iterations: usize,
    /// Final fixed-point residual `‖u − P(u_d − Π₀F/α)‖_{L²}`.
    pub increment: T,
    /// Largest sampled value of `(ε(v − u), u_d − Π₀F/α − u)`, `v ∈ U_ad`.
    pub kkt: Option<T>,
    pub cost: T,
    pub trace: Vec<TraceRow<T>>,
    pub unconverged_projections: usize,
}

/// `u_d − Π₀F/α`.
fn target<T: Real, M: OcpModel<T>>(model: &M, f: &[T]) -> Vec<T> {
    let pf = model.adjoint_mean(f);
    let inv = T::one() / model.alpha();
    model
        .desired_control()
        .iter()
        .zip(&pf)
        .map(|(&d, &p)| d - inv * p)
        .collect()
}

/// Damped projected fixed point
/// `u ← (1−ω)u + ω P_Uad(u_d − Π₀F(u)/α)`, with `ω` halved whenever the
/// fixed-point residual grows.
pub fn solve_ocp<T: Real, M: OcpModel<T>>(model: &M, opts: &OcpOptions<T>) -> Result<OcpSolution<T>> {
    let geo = model.geometry();
    let bx = model.control_box();
    let mut bad_proj = 0usize;
    let mut project = |w: &[T]| -> Result<(Vec<T>, usize)> {
        let p = geo.project_admissible(w, bx, &opts.projection);
        let sweeps = p.sweeps;
        if !p.converged {
            if opts.strict_projection {
                return p.into_result().map(|u| (u, sweeps));
            }
            bad_proj += 1;
        }
        Ok((p.u, sweeps))
    };
    let (mut u, _) = project(model.desired_control())?;
    let mut omega = opts.omega;
    let mut trace = Vec::new();
    let mut history = Vec::new();
    let mut prev = T::infinity();
    for it in 0..opts.max_iter {
        let e = model.state(&u)?;
        let f = model.adjoint(&e)?;
        let (v, sweeps) = project(&target(model, &f))?;
        let inc = geo.l2_dist(&u, &v);
        let cost = model.cost(&u, &e);
        trace.push(TraceRow {
            iteration: it,
            increment: inc,
            cost,
            omega,
            sweeps,
        });
        history.push(inc.to_f64_lossy());
        if inc <= opts.tol {
            let kkt = if opts.kkt_check {
                Some(kkt_residual(model, &u, &f, &mut project)?)
            } else {
                None
            };
            return Ok(OcpSolution {
                u,
                e,
                f,
                iterations: it,
                increment: inc,
                kkt,
                cost,
                trace,
                unconverged_projections: bad_proj,
            });
        }
        if inc > prev {
            omega = omega * T::lit(0.5);
        }
        prev = inc;
        for i in 0..u.len() {
            u[i] = (T::one() - omega) * u[i] + omega * v[i];
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        last_increment: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

/// Largest sampled `(ε(v − u), u_d − Π₀F/α − u)` over `v` at the projected
/// box vertices and at projected perturbations of `u`; nonpositive (up to
/// the projection tolerance) when the variational inequality holds.
fn kkt_residual<T: Real, M: OcpModel<T>>(
    model: &M,
    u: &[T],
    f: &[T],
    project: &mut impl FnMut(&[T]) -> Result<(Vec<T>, usize)>,
) -> Result<T> {
    let geo = model.geometry();
    let g: Vec<T> = target(model, f).iter().zip(u).map(|(&t, &x)| t - x).collect();
    let scale = max_abs(u).max(T::one());
    let mut samples: Vec<Vec<T>> = model
        .control_box()
        .vertices(T::lit(2.0) * scale)
        .into_iter()
        .map(|c| (0..u.len()).map(|i| c[i % 3]).collect())
        .collect();
    for s in 0..4 {
        let amp = T::lit(0.1) * scale * if s % 2 == 0 { T::one() } else { -T::one() };
        samples.push(
            u.iter()
                .enumerate()
                .map(|(i, &x)| x + amp * T::lit(((i * (s + 3)) as f64 * 0.754_877_666).fract() - 0.5))
                .collect(),
        );
    }
    let mut worst = T::neg_infinity();
    for w in samples {
        let (v, _) = project(&w)?;
        let d: Vec<T> = v.iter().zip(u).map(|(&a, &b)| a - b).collect();
        worst = worst.max(geo.inner(&d, &g));
    }
    Ok(worst)
}
