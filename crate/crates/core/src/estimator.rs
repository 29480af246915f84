//! Online residuals of a reduced solution, their dual norms, and the
//! certified error and cost bounds.
//!
//! Reduced states are lifted to the truth space and corrected by a gradient
//! so that they satisfy the truth divergence constraint exactly; the
//! residuals are then measured in the dual of the discrete
//! ε(μ)-divergence-free subspace, where the coercivity constant lives.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{ControlGeometry, OcpOptions, OcpSolution};
use crate::error::{Error, Result};
use crate::model::Setup;
use crate::problem::{ConstantsLedger, ParameterDomain};
use crate::rbm::{ReducedBasis, ReducedModel};
use crate::scalar::{axpy, sub, Real};
use crate::truth::Affine;

/// Truth-space lifts of a reduced solution and the residual functionals.
#[derive(Clone, Debug)]
pub struct Residuals<T> {
    /// `Z_E ê + Gψ` with `B(μ)(·) = −r(μ)`.
    pub e: Vec<T>,
    /// `Z_E f̂ + Gψ` with `B(μ)(·) = 0`.
    pub f: Vec<T>,
    /// `MU(μ)ᵀu − A(μ)Z_E ê`.
    pub r_e: Vec<T>,
    /// `MD(μ)E − (εE_d, ·)_D − A(μ)Z_E f̂`, with `E` the corrected state.
    pub r_f: Vec<T>,
}

/// Residuals of the reduced solution `sol` computed by `model`.
pub fn residuals<T: Real>(
    rb: &ReducedBasis<T>,
    aff: &Affine<'_, T>,
    control: &ControlGeometry<T>,
    sol: &OcpSolution<T>,
) -> Result<Residuals<T>> {
    let g = &aff.truth.blocks.g;
    let correct = |coords: &[T], target: &[T]| -> Result<Vec<T>> {
        let mut z = rb.lift_e(coords)?;
        let mut rhs = target.to_vec();
        axpy(-T::one(), &rb.b_lift(&aff.eps, coords), &mut rhs);
        let psi = control.solve_laplace(&rhs);
        g.matvec_acc(T::one(), &psi, &mut z);
        Ok(z)
    };
    let e = correct(&sol.e, &aff.g_rho)?;
    let f = correct(&sol.f, &vec![T::zero(); aff.truth.n_node()])?;
    let mut r_e = aff.control_load(&sol.u);
    axpy(-T::one(), &rb.a_lift(&aff.sig, &sol.e), &mut r_e);
    let mut r_f = aff.md_matvec(&e);
    axpy(-T::one(), &aff.ed_load, &mut r_f);
    axpy(-T::one(), &rb.a_lift(&aff.sig, &sol.f), &mut r_f);
    Ok(Residuals { e, f, r_e, r_f })
}

/// A certified reduced solution at one parameter.
#[derive(Clone, Debug)]
pub struct Online<T> {
    pub mu: Vec<f64>,
    pub solution: OcpSolution<T>,
    /// Corrected truth-space lifts of the reduced state and adjoint.
    pub e: Vec<T>,
    pub f: Vec<T>,
    /// `J(u_N, E_N; μ)` with the corrected state.
    pub cost: T,
    pub certificate: ErrorCertificate,
}

/// Solves the reduced problem at `mu`, lifts it, and certifies it.
pub fn evaluate<T: Real>(
    rb: &ReducedBasis<T>,
    setup: &Setup<T>,
    mu: &[f64],
    ledger: &ConstantsLedger,
    opts: &OcpOptions<T>,
) -> Result<Online<T>> {
    let (model, solution) = rb.solve(setup, mu, opts)?;
    finish(rb, setup, mu, &model, solution, ledger).map_err(|e| e.at(mu))
}

fn finish<T: Real>(
    rb: &ReducedBasis<T>,
    setup: &Setup<T>,
    mu: &[f64],
    model: &ReducedModel<'_, T>,
    solution: OcpSolution<T>,
    ledger: &ConstantsLedger,
) -> Result<Online<T>> {
    let aff = setup.truth.affine(&model.theta)?;
    let res = residuals(rb, &aff, &model.control, &solution)?;
    let kn = setup.truth.kernel_norm(&aff.eps)?;
    let r_e = kn.dual_norm(&res.r_e).to_f64_lossy();
    let r_f = kn.dual_norm(&res.r_f).to_f64_lossy();
    let d = model.control.dist(&solution.u, &model.u_d);
    let cost = aff.tracking(&res.e) + T::lit(0.5) * model.alpha * d * d;
    let u_norm = model.control.l2_norm(&solution.u).to_f64_lossy();
    Ok(Online {
        mu: mu.to_vec(),
        solution,
        e: res.e,
        f: res.f,
        cost,
        certificate: certify(ledger, mu, r_e, r_f, u_norm),
    })
}

/// [`evaluate`] over `sample` in parallel; results keep the input order.
pub fn sweep<T: Real>(
    rb: &ReducedBasis<T>,
    setup: &Setup<T>,
    sample: &[Vec<f64>],
    ledger: &ConstantsLedger,
    opts: &OcpOptions<T>,
) -> Result<Vec<Online<T>>> {
    sample
        .par_iter()
        .map(|mu| evaluate(rb, setup, mu, ledger, opts))
        .collect()
}

/// All certified quantities at one parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorCertificate {
    pub mu: Vec<f64>,
    /// Dual norms of the state and adjoint residuals.
    pub r_e: f64,
    pub r_f: f64,
    /// Bound on `‖u_h − u_N‖_{L²}`.
    pub delta_ab: f64,
    /// `2Δ^ab/‖u_N‖`, only when that ratio is at most one.
    pub delta_re: Option<f64>,
    /// Lower and upper bounds on the sum of the control, state and adjoint
    /// errors.
    pub lower: f64,
    pub upper: f64,
    /// Bound on `|J_h − J_N|`.
    pub delta_j: f64,
    pub u_norm: f64,
}

impl ErrorCertificate {
    pub fn relative_valid(&self) -> bool {
        self.delta_re.is_some()
    }
}

/// Evaluates every bound from the ledger constants and the residual dual
/// norms.
pub fn certify(ledger: &ConstantsLedger, mu: &[f64], r_e: f64, r_f: f64, u_norm: f64) -> ErrorCertificate {
    let (r_e, r_f) = (r_e.max(0.0), r_f.max(0.0));
    let delta_ab = ledger.ab_e * r_e + ledger.ab_f * r_f;
    let ratio = 2.0 * delta_ab / u_norm;
    let delta_re = if ratio <= 1.0 { Some(ratio) } else { None };
    ErrorCertificate {
        mu: mu.to_vec(),
        r_e,
        r_f,
        delta_ab,
        delta_re,
        lower: ledger.delta_lo_e * r_e + ledger.delta_lo_f * r_f,
        upper: ledger.delta_up_e * r_e + ledger.delta_up_f * r_f,
        delta_j: ledger.delta_j_e * r_e + ledger.delta_j_f * r_f,
        u_norm,
    }
}

/// Errors of a reduced solution against the truth solution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Measured {
    /// `‖u_h − u_N‖_{L²}`.
    pub u: f64,
    /// `‖E_h − E_N‖_{H(curl)}`.
    pub e: f64,
    /// `‖F_h − F_N‖_{H(curl)}`.
    pub f: f64,
    pub cost_gap: f64,
}

impl Measured {
    pub fn sum(&self) -> f64 {
        self.u + self.e + self.f
    }
}

pub fn measure<T: Real>(setup: &Setup<T>, online: &Online<T>, truth: &OcpSolution<T>) -> Measured {
    let vol = &setup.truth.blocks.volumes;
    let du = truth
        .u
        .iter()
        .zip(&online.solution.u)
        .enumerate()
        .map(|(i, (&a, &b))| {
            let d = (a - b).to_f64_lossy();
            vol[i / 3].to_f64_lossy() * d * d
        })
        .sum::<f64>()
        .sqrt();
    let x = |a: &[T], b: &[T]| setup.truth.x_norm(&sub(a, b)).to_f64_lossy();
    Measured {
        u: du,
        e: x(&truth.e, &online.e),
        f: x(&truth.f, &online.f),
        cost_gap: (truth.cost - online.cost).abs().to_f64_lossy(),
    }
}

/// The cost bound, and the measured gap when a truth solution is given.
pub fn cost_gap(cert: &ErrorCertificate, measured: Option<&Measured>) -> (Option<f64>, f64) {
    (measured.map(|m| m.cost_gap), cert.delta_j)
}

/// Names of the bounds the measured errors violate.
pub fn violations(cert: &ErrorCertificate, m: &Measured) -> Vec<&'static str> {
    let mut out = Vec::new();
    if m.u > cert.delta_ab {
        out.push("control error above delta_ab");
    }
    if m.sum() < cert.lower {
        out.push("error sum below lower bound");
    }
    if m.sum() > cert.upper {
        out.push("error sum above upper bound");
    }
    if m.cost_gap > cert.delta_j {
        out.push("cost gap above delta_j");
    }
    out
}

/// `Δ^ab / ‖u_h − u_N‖`, when the error is resolvable.
pub fn effectivity(cert: &ErrorCertificate, m: &Measured) -> Option<f64> {
    (m.u > 1e-12).then(|| cert.delta_ab / m.u)
}

/// Corners of the parameter box followed by `extra`.
pub fn validation_sample(domain: &ParameterDomain, extra: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p = domain.dim();
    let mut out: Vec<Vec<f64>> = (0..1usize << p)
        .map(|mask| {
            (0..p)
                .map(|i| if mask >> i & 1 == 1 { domain.upper[i] } else { domain.lower[i] })
                .collect()
        })
        .collect();
    out.extend(extra.iter().cloned());
    out
}

/// Coercivity and inf-sup estimates per parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub mu: Vec<f64>,
    pub coercivity: f64,
    pub infsup: f64,
}

/// Builds the constants ledger with the largest coercivity constant and the
/// smallest inf-sup constant over `sample`. A coercivity override in the
/// problem replaces the computed maximum.
pub fn build_ledger<T: Real>(setup: &Setup<T>, sample: &[Vec<f64>]) -> Result<(ConstantsLedger, Vec<StabilityRow>)> {
    if sample.is_empty() {
        return Err(Error::InvalidArgument("empty validation sample".into()));
    }
    let rows: Vec<StabilityRow> = sample
        .par_iter()
        .map(|mu| -> Result<StabilityRow> {
            let th = setup.thetas(mu)?;
            let at = setup.truth.at(&th).map_err(|e| e.at(mu))?;
            let c = at.estimate_coercivity(300, T::lit(1e-10)).map_err(|e| e.at(mu))?;
            let b = setup.truth.inf_sup(&th).map_err(|e| e.at(mu))?;
            Ok(StabilityRow {
                mu: mu.clone(),
                coercivity: c.to_f64_lossy(),
                infsup: b.to_f64_lossy(),
            })
        })
        .collect::<Result<_>>()?;
    let c = match setup.problem.data.coercivity_override {
        Some(c) => c,
        None => rows.iter().map(|r| r.coercivity).fold(0.0, f64::max),
    };
    let beta = rows.iter().map(|r| r.infsup).fold(f64::INFINITY, f64::min);
    let bl = &setup.truth.blocks;
    let ledger = ConstantsLedger::build(&setup.problem.data, c, beta, setup.omega_volume(), bl.q_ud(), bl.q_ed())?;
    Ok((ledger, rows))
}
