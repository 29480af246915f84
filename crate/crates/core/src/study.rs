//! Convergence studies: mesh refinement of the truth state solver against a
//! manufactured solution, and reduced-basis error against the fill distance
//! of the snapshot set.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::control::{OcpOptions, OcpSolution};
use crate::error::{Error, Result};
use crate::fespace::{assemble_blocks, CoefficientFields, Spaces, StateField};
use crate::mesh::{generate_structured_cube, RegionBox};
use crate::model::Setup;
use crate::problem::{fill_distance, Thetas};
use crate::quadrature::TetRule;
use crate::rbm::{GreedyStep, ReducedBasis};
use crate::truth::Truth;

/// Divergence-free field with vanishing tangential trace on the unit cube.
pub fn manufactured_field(x: [f64; 3]) -> [f64; 3] {
    let s = |t: f64| (PI * t).sin();
    [s(x[1]) * s(x[2]), s(x[2]) * s(x[0]), s(x[0]) * s(x[1])]
}

pub fn manufactured_curl(x: [f64; 3]) -> [f64; 3] {
    let (s, c) = (|t: f64| (PI * t).sin(), |t: f64| (PI * t).cos());
    [
        PI * s(x[0]) * (c(x[1]) - c(x[2])),
        PI * s(x[1]) * (c(x[2]) - c(x[0])),
        PI * s(x[2]) * (c(x[0]) - c(x[1])),
    ]
}

/// Error of the discrete state on one mesh.
#[derive(Clone, Debug, Serialize)]
pub struct HRow {
    pub n: usize,
    pub h: f64,
    pub n_edge: usize,
    pub l2: f64,
    pub curl: f64,
    pub hcurl: f64,
}

/// Solves `curl curl E + ∇λ = 2π² E†`, `(E, ∇φ) = 0` on the structured
/// `n`-mesh with unit coefficients, where `E†` is [`manufactured_field`],
/// and measures `‖E† − E_h‖`.
pub fn manufactured_state(n: usize) -> Result<HRow> {
    let mesh = generate_structured_cube::<f64>(n, &RegionBox::Whole)?;
    let sp = Spaces::new(mesh)?;
    let nt = sp.n_tet();
    let fields = CoefficientFields {
        sigma_inv: vec![vec![1.0; nt]],
        eps: vec![vec![1.0; nt]],
        rho: vec![],
        u_d: vec![vec![[0.0; 3]; nt]],
        e_d: vec![StateField::PerTet(vec![[0.0; 3]; nt])],
    };
    let blocks = assemble_blocks(&sp, &fields)?;
    let truth = Truth::new(sp, blocks)?;
    let at = truth.at(&Thetas {
        sigma: vec![1.0],
        eps: vec![1.0],
        rho: vec![],
        u_d: vec![1.0],
        e_d: vec![1.0],
    })?;
    let rule = TetRule::collapsed_gauss(4);
    let k = 2.0 * PI * PI;
    let f = truth.spaces.edge_load_fn(
        |x| {
            let e = manufactured_field(x);
            [k * e[0], k * e[1], k * e[2]]
        },
        &rule,
    );
    let sol = at.solve_saddle(&f, &at.g_rho)?;
    let (l2, cc) = truth
        .spaces
        .hcurl_error(&sol.field, manufactured_field, manufactured_curl, &rule);
    Ok(HRow {
        n,
        h: truth.spaces.mesh.h,
        n_edge: truth.n_edge(),
        l2: l2.sqrt(),
        curl: cc.sqrt(),
        hcurl: (l2 + cc).sqrt(),
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidArgument("slope fit needs at least two points".into()));
    }
    if x.iter().chain(y).any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument("slope fit needs positive data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    Ok(sxy / sxx)
}

/// One row of the reduced-basis convergence table.
#[derive(Clone, Debug, Serialize)]
pub struct NRow {
    /// Number of snapshots.
    pub n: usize,
    pub n_e: usize,
    pub n_v: usize,
    /// Fill distance of the snapshot set over the test sample.
    pub kappa: f64,
    /// `max ‖u_h − u_N‖_{L²}` over the test sample.
    pub max_error: f64,
}

/// Fixed-point tolerance of the truth solutions the reduced errors are
/// measured against, well below the errors being compared.
pub const REFERENCE_TOL: f64 = 1e-12;

/// Errors of the nested bases recorded in a greedy log against truth
/// solutions on `test`.
pub fn n_study(
    setup: &Setup<f64>,
    basis: &ReducedBasis<f64>,
    log: &[GreedyStep],
    test: &[Vec<f64>],
    opts: &OcpOptions<f64>,
) -> Result<Vec<NRow>> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test sample".into()));
    }
    let reference = OcpOptions {
        tol: REFERENCE_TOL,
        ..OcpOptions::truth()
    };
    let truth: Vec<OcpSolution<f64>> = test
        .par_iter()
        .map(|mu| setup.solve_truth(mu, &reference))
        .collect::<Result<_>>()?;
    let vol = &setup.truth.blocks.volumes;
    let l2 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(i, (x, y))| vol[i / 3] * (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut rows = Vec::with_capacity(log.len());
    for (k, step) in log.iter().enumerate() {
        let rb = basis.truncated(&setup.truth.blocks, step.n_e, step.n_v)?;
        let errs: Vec<f64> = test
            .par_iter()
            .zip(&truth)
            .map(|(mu, t)| -> Result<f64> {
                let (_, sol) = rb.solve(setup, mu, opts)?;
                Ok(l2(&t.u, &sol.u))
            })
            .collect::<Result<_>>()?;
        rows.push(NRow {
            n: k + 1,
            n_e: step.n_e,
            n_v: step.n_v,
            kappa: fill_distance(&basis.snapshots[..=k], test)?,
            max_error: errs.iter().copied().fold(0.0, f64::max),
        });
    }
    Ok(rows)
}
