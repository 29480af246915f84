//! Subcommand implementations.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use maxrb::control::{solve_ocp, OcpOptions, OcpSolution};
use maxrb::estimator::{self, build_ledger, validation_sample, Measured, Online};
use maxrb::mesh::generate_structured_cube;
use maxrb::model::Setup;
use maxrb::rbm::{self, GreedyOptions, ReducedBasis};
use maxrb::scalar::max_abs;
use maxrb::study;
use maxrb::vtk::write_vtk;

use crate::io::{
    config_hash, create_dir, f, load_problem, load_setup, mu_fields, mu_header, opt, parse_grid, parse_mus, sample,
    usage, write_json, Failure, RbFile, Table,
};
use crate::{CertifyArgs, GreedyArgs, HStudyArgs, MeshGenArgs, NStudyArgs, OcpSolveArgs, TruthSolveArgs};

/// Slack for monotonicity checks on measured errors, ten times the reduced
/// fixed-point tolerance.
const MEASUREMENT_FLOOR: f64 = 1e-9;

fn header(fixed: &[&str], mu: &[String], rest: &[&str]) -> Vec<String> {
    fixed
        .iter()
        .map(|s| s.to_string())
        .chain(mu.iter().cloned())
        .chain(rest.iter().map(|s| s.to_string()))
        .collect()
}

pub fn mesh_gen(a: &MeshGenArgs) -> Result<()> {
    if a.n == 0 {
        return Err(usage("--n must be positive"));
    }
    let problem = load_problem(a.problem.as_deref())?;
    let mesh = generate_structured_cube::<f64>(a.n, &problem.data.region.region())?;
    mesh.write(&a.out)?;
    println!(
        "wrote {} ({} nodes, {} tets, {} edges)",
        a.out.display(),
        mesh.num_nodes(),
        mesh.num_tets(),
        mesh.num_edges()
    );
    Ok(())
}

fn write_fields(setup: &Setup<f64>, path: &Path, u: &[f64], e: &[f64], fld: &[f64]) -> Result<()> {
    let sp = &setup.truth.spaces;
    let (ec, fc) = (sp.edge_at_centroids(e), sp.edge_at_centroids(fld));
    write_vtk(path, &sp.mesh, &[("control", u), ("state", &ec), ("adjoint", &fc)])?;
    Ok(())
}

fn write_trace(path: &Path, sol: &OcpSolution<f64>) -> Result<()> {
    let cols = ["iteration", "increment", "cost", "omega", "sweeps"].map(String::from);
    let mut t = Table::create(path, &cols)?;
    for r in &sol.trace {
        t.row(&[r.iteration.to_string(), f(r.increment), f(r.cost), f(r.omega), r.sweeps.to_string()])?;
    }
    t.finish()
}

#[derive(Serialize)]
struct BlockInfo {
    name: String,
    rows: usize,
    cols: usize,
    nnz: usize,
    symmetry_defect: Option<f64>,
}

#[derive(Serialize)]
struct OpsDump {
    n_tet: usize,
    n_edge: usize,
    n_node: usize,
    n_control: usize,
    h: f64,
    blocks: Vec<BlockInfo>,
    /// `max |A_q G|` per curl-curl term.
    curl_grad_annihilation: Vec<f64>,
}

fn dump_ops(setup: &Setup<f64>, path: &Path) -> Result<()> {
    let bl = &setup.truth.blocks;
    let mut blocks = Vec::new();
    let mut add = |name: String, m: &maxrb::linalg::Csr<f64>, square: bool| {
        blocks.push(BlockInfo {
            name,
            rows: m.nrows,
            cols: m.ncols,
            nnz: m.nnz(),
            symmetry_defect: square.then(|| m.symmetry_defect()),
        })
    };
    for (q, m) in bl.a.iter().enumerate() {
        add(format!("a{q}"), m, true);
    }
    for q in 0..bl.q_eps() {
        add(format!("m{q}"), &bl.m[q], true);
        add(format!("md{q}"), &bl.md[q], true);
        add(format!("b{q}"), &bl.b[q], false);
        add(format!("mu{q}"), &bl.mu[q], false);
        add(format!("k{q}"), &bl.k[q], true);
    }
    add("x_curl".into(), &bl.x_curl, true);
    add("x_grad".into(), &bl.x_grad, true);
    add("g".into(), &bl.g, false);
    add("pi0".into(), &bl.pi0, false);
    let dump = OpsDump {
        n_tet: setup.truth.spaces.n_tet(),
        n_edge: setup.truth.n_edge(),
        n_node: setup.truth.n_node(),
        n_control: setup.truth.n_control(),
        h: setup.truth.spaces.mesh.h,
        blocks,
        curl_grad_annihilation: bl.a.iter().map(|a| a.matmul(&bl.g).max_abs()).collect(),
    };
    write_json(path, &dump)
}

pub fn truth_solve(a: &TruthSolveArgs) -> Result<()> {
    if !(a.omega > 0.0 && a.omega <= 1.0) {
        return Err(usage("--omega must lie in (0, 1]"));
    }
    if !(a.tol > 0.0) {
        return Err(usage("--tol must be positive"));
    }
    let setup = load_setup(&a.problem)?;
    let mus = parse_mus(&a.mu, &setup.problem.domain)?;
    create_dir(&a.out)?;
    if a.dump_ops {
        dump_ops(&setup, &a.out.join("ops.json"))?;
    }
    let opts = OcpOptions {
        tol: a.tol,
        omega: a.omega,
        ..OcpOptions::truth()
    };
    let results: Vec<(OcpSolution<f64>, f64, f64)> = mus
        .par_iter()
        .map(|mu| -> maxrb::Result<_> {
            let m = setup.truth_model(mu)?;
            let sol = solve_ocp(&m, &opts).map_err(|e| e.at(mu))?;
            let div_e = max_abs(&m.at.divergence_residual(&sol.e));
            let div_u = m.at.control.div_residual(&sol.u);
            Ok((sol, div_e, div_u))
        })
        .collect::<maxrb::Result<_>>()?;
    let names = mu_header(&setup.problem.domain);
    let cols = header(
        &["index"],
        &names,
        &["cost", "iterations", "increment", "kkt", "div_state", "div_control", "unconverged_projections"],
    );
    let mut t = Table::create(&a.out.join("truth.csv"), &cols)?;
    for (i, (mu, (sol, de, du))) in mus.iter().zip(&results).enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(mu_fields(mu));
        row.extend([
            f(sol.cost),
            sol.iterations.to_string(),
            f(sol.increment),
            opt(sol.kkt),
            f(*de),
            f(*du),
            sol.unconverged_projections.to_string(),
        ]);
        t.row(&row)?;
        if a.vtk {
            write_fields(&setup, &a.out.join(format!("truth_{i:03}.vtk")), &sol.u, &sol.e, &sol.f)?;
        }
        if a.trace {
            write_trace(&a.out.join(format!("trace_{i:03}.csv")), sol)?;
        }
        println!("{mu:?}: J = {:e}, {} iterations", sol.cost, sol.iterations);
    }
    t.finish()
}

fn load_basis(setup: &Setup<f64>, path: &Path) -> Result<(RbFile, ReducedBasis<f64>)> {
    let file = RbFile::load(path, setup)?;
    let basis = ReducedBasis::from_archive(&setup.truth.blocks, &file.archive)
        .with_context(|| format!("loading {}", path.display()))?;
    Ok((file, basis))
}

const CERT_COLUMNS: [&str; 9] = ["r_e", "r_f", "delta_ab", "delta_re", "relative_valid", "lower", "upper", "delta_j", "u_norm"];

fn cert_fields(c: &estimator::ErrorCertificate) -> Vec<String> {
    vec![
        f(c.r_e),
        f(c.r_f),
        f(c.delta_ab),
        opt(c.delta_re),
        c.relative_valid().to_string(),
        f(c.lower),
        f(c.upper),
        f(c.delta_j),
        f(c.u_norm),
    ]
}

pub fn ocp_solve(a: &OcpSolveArgs) -> Result<()> {
    let setup = load_setup(&a.problem)?;
    let (file, basis) = load_basis(&setup, &a.rb)?;
    let mus = parse_mus(&a.mu, &setup.problem.domain)?;
    create_dir(&a.out)?;
    let online = estimator::sweep(&basis, &setup, &mus, &file.ledger, &OcpOptions::reduced())?;
    let names = mu_header(&setup.problem.domain);
    let mut rest = vec!["cost", "iterations"];
    rest.extend(CERT_COLUMNS);
    let mut t = Table::create(&a.out.join("reduced.csv"), &header(&["index"], &names, &rest))?;
    for (i, on) in online.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(mu_fields(&on.mu));
        row.extend([f(on.cost), on.solution.iterations.to_string()]);
        row.extend(cert_fields(&on.certificate));
        t.row(&row)?;
        if a.vtk {
            write_fields(&setup, &a.out.join(format!("reduced_{i:03}.vtk")), &on.solution.u, &on.e, &on.f)?;
        }
        if a.trace {
            write_trace(&a.out.join(format!("trace_{i:03}.csv")), &on.solution)?;
        }
        println!("{:?}: J_N = {:e}, delta_ab = {:e}", on.mu, on.cost, on.certificate.delta_ab);
    }
    t.finish()
}

fn default_log(out: &Path) -> PathBuf {
    let mut name = out.file_stem().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".log.csv");
    out.with_file_name(name)
}

pub fn greedy(a: &GreedyArgs) -> Result<()> {
    if a.nmax == 0 {
        return Err(usage("--nmax must be at least 1"));
    }
    if !(a.tol > 0.0) {
        return Err(usage("--tol must be positive"));
    }
    let setup = load_setup(&a.problem)?;
    let domain = &setup.problem.domain;
    let training = parse_grid(&a.train_grid, domain)?;
    let (ledger, stability) = build_ledger(&setup, &validation_sample(domain, &training))?;
    log::info!(
        "ledger: coercivity {:e}, inf-sup {:e}",
        ledger.c_omega_sigma,
        ledger.beta
    );
    let g = rbm::greedy(&setup, &training, &ledger, &GreedyOptions::new(a.tol, a.nmax))?;

    let names = mu_header(domain);
    let log_path = a.log.clone().unwrap_or_else(|| default_log(&a.out));
    let cols = header(
        &["iteration"],
        &names,
        &["n_e", "n_v", "max_delta", "argmax", "min_coercivity", "min_beta", "supremizers"],
    );
    let mut t = Table::create(&log_path, &cols)?;
    for s in &g.log {
        let mut row = vec![s.iteration.to_string()];
        row.extend(mu_fields(&s.mu));
        row.extend([
            s.n_e.to_string(),
            s.n_v.to_string(),
            f(s.max_delta),
            s.argmax.to_string(),
            f(s.min_coercivity),
            f(s.min_beta),
            s.supremizers.to_string(),
        ]);
        t.row(&row)?;
    }
    t.finish()?;

    let last = g.log.last().expect("greedy runs at least once");
    let file = RbFile {
        training,
        tol: a.tol,
        n_max: a.nmax,
        converged: g.converged,
        ledger,
        stability,
        log: g.log.clone(),
        archive: g.basis.to_archive(&config_hash(&setup)),
    };
    write_json(&a.out, &file)?;
    println!(
        "{} snapshots, N_E = {}, N_V = {}, max delta_ab = {:e} ({})",
        g.log.len(),
        last.n_e,
        last.n_v,
        last.max_delta,
        if g.converged { "converged" } else { "snapshot limit reached" }
    );
    if !g.converged {
        log::warn!("tolerance {:e} not reached within {} snapshots", a.tol, a.nmax);
    }
    Ok(())
}

#[derive(Serialize)]
struct CertifySummary {
    points: usize,
    max_delta_ab: f64,
    max_delta_j: f64,
    relative_valid: usize,
    with_truth: bool,
    max_error: Option<f64>,
    min_effectivity: Option<f64>,
    max_effectivity: Option<f64>,
    violations: Vec<String>,
}

pub fn certify(a: &CertifyArgs) -> Result<()> {
    let setup = load_setup(&a.problem)?;
    let (file, basis) = load_basis(&setup, &a.rb)?;
    let test = sample(&a.sample, &setup.problem.domain)?;
    create_dir(&a.out)?;
    let online: Vec<Online<f64>> = estimator::sweep(&basis, &setup, &test, &file.ledger, &OcpOptions::reduced())?;
    let measured: Option<Vec<Measured>> = if a.with_truth {
        Some(
            test.par_iter()
                .zip(&online)
                .map(|(mu, on)| -> maxrb::Result<Measured> {
                    let t = setup.solve_truth(mu, &OcpOptions::truth())?;
                    Ok(estimator::measure(&setup, on, &t))
                })
                .collect::<maxrb::Result<_>>()?,
        )
    } else {
        None
    };

    let names = mu_header(&setup.problem.domain);
    let mut rest: Vec<&str> = CERT_COLUMNS.to_vec();
    if a.with_truth {
        rest.extend(["err_u", "err_e", "err_f", "err_sum", "cost_gap", "effectivity", "violations"]);
    }
    let mut t = Table::create(&a.out.join("certificates.csv"), &header(&["index"], &names, &rest))?;
    let mut violations = Vec::new();
    let mut eff = Vec::new();
    for (i, on) in online.iter().enumerate() {
        let c = &on.certificate;
        let mut row = vec![i.to_string()];
        row.extend(mu_fields(&on.mu));
        row.extend(cert_fields(c));
        if let Some(ms) = &measured {
            let m = &ms[i];
            let v = estimator::violations(c, m);
            let e = estimator::effectivity(c, m);
            eff.extend(e);
            row.extend([f(m.u), f(m.e), f(m.f), f(m.sum()), f(m.cost_gap), opt(e), v.join("; ")]);
            violations.extend(v.iter().map(|s| format!("{:?}: {s}", on.mu)));
        }
        t.row(&row)?;
    }
    t.finish()?;
    let fold = |it: &mut dyn Iterator<Item = f64>, init: f64, op: fn(f64, f64) -> f64| it.fold(init, op);
    let summary = CertifySummary {
        points: online.len(),
        max_delta_ab: fold(&mut online.iter().map(|o| o.certificate.delta_ab), 0.0, f64::max),
        max_delta_j: fold(&mut online.iter().map(|o| o.certificate.delta_j), 0.0, f64::max),
        relative_valid: online.iter().filter(|o| o.certificate.relative_valid()).count(),
        with_truth: a.with_truth,
        max_error: measured.as_ref().map(|ms| ms.iter().map(|m| m.u).fold(0.0, f64::max)),
        min_effectivity: (!eff.is_empty()).then(|| eff.iter().copied().fold(f64::INFINITY, f64::min)),
        max_effectivity: (!eff.is_empty()).then(|| eff.iter().copied().fold(0.0, f64::max)),
        violations: violations.clone(),
    };
    write_json(&a.out.join("summary.json"), &summary)?;
    println!(
        "{} points, max delta_ab = {:e}{}",
        summary.points,
        summary.max_delta_ab,
        match summary.max_error {
            Some(e) => format!(", max control error = {e:e}, {} violations", violations.len()),
            None => String::new(),
        }
    );
    if !violations.is_empty() {
        return Err(Failure::Certification(violations.join("\n")).into());
    }
    Ok(())
}

#[derive(Serialize)]
struct HSummary {
    slope: f64,
    strictly_decreasing: bool,
    /// Error ratio over the finest pair of meshes with `n` doubling.
    halving_ratio: Option<f64>,
}

pub fn h_study(a: &HStudyArgs) -> Result<()> {
    let ns: Vec<usize> = a
        .ns
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| usage(format!("invalid mesh size list {:?}", a.ns))))
        .collect::<Result<_>>()?;
    if ns.len() < 2 || ns.windows(2).any(|w| w[0] >= w[1]) || ns[0] == 0 {
        return Err(usage("--ns needs at least two increasing positive sizes"));
    }
    create_dir(&a.out)?;
    let rows: Vec<study::HRow> = ns.iter().map(|&n| study::manufactured_state(n)).collect::<maxrb::Result<_>>()?;
    let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let e: Vec<f64> = rows.iter().map(|r| r.hcurl).collect();
    let slope = study::loglog_slope(&h, &e)?;
    let mut t = Table::create(
        &a.out.join("h_study.csv"),
        &["n", "h", "n_edge", "err_l2", "err_curl", "err_hcurl", "rate"].map(String::from),
    )?;
    for (i, r) in rows.iter().enumerate() {
        let rate = (i > 0).then(|| (e[i - 1] / e[i]).ln() / (h[i - 1] / h[i]).ln());
        t.row(&[r.n.to_string(), f(r.h), r.n_edge.to_string(), f(r.l2), f(r.curl), f(r.hcurl), opt(rate)])?;
    }
    t.finish()?;
    let halving_ratio = (0..rows.len())
        .rev()
        .find_map(|j| (0..j).find(|&i| 2 * ns[i] == ns[j]).map(|i| e[i] / e[j]));
    let summary = HSummary {
        slope,
        strictly_decreasing: e.windows(2).all(|w| w[1] < w[0]),
        halving_ratio,
    };
    write_json(&a.out.join("summary.json"), &summary)?;
    println!("fitted H(curl) rate {slope:.3}");
    if !summary.strictly_decreasing {
        return Err(Failure::Certification("H(curl) error not strictly decreasing under refinement".into()).into());
    }
    Ok(())
}

#[derive(Serialize)]
struct NSummary {
    gamma: f64,
    errors_non_increasing: bool,
    kappa_non_increasing: bool,
    final_error: f64,
    tol: f64,
}

pub fn n_study(a: &NStudyArgs) -> Result<()> {
    let setup = load_setup(&a.problem)?;
    let (file, basis) = load_basis(&setup, &a.rb)?;
    let test = sample(&a.sample, &setup.problem.domain)?;
    create_dir(&a.out)?;
    let rows = study::n_study(&setup, &basis, &file.log, &test, &OcpOptions::reduced())?;
    let gamma = setup.problem.gamma_exponent()?;
    let mut t = Table::create(
        &a.out.join("n_study.csv"),
        &["n", "n_e", "n_v", "kappa", "kappa_pow_gamma", "max_error"].map(String::from),
    )?;
    for r in &rows {
        t.row(&[
            r.n.to_string(),
            r.n_e.to_string(),
            r.n_v.to_string(),
            f(r.kappa),
            f(r.kappa.powf(gamma)),
            f(r.max_error),
        ])?;
    }
    t.finish()?;
    let summary = NSummary {
        gamma,
        errors_non_increasing: rows.windows(2).all(|w| w[1].max_error <= w[0].max_error + MEASUREMENT_FLOOR),
        kappa_non_increasing: rows.windows(2).all(|w| w[1].kappa <= w[0].kappa),
        final_error: rows.last().map_or(f64::NAN, |r| r.max_error),
        tol: a.tol,
    };
    write_json(&a.out.join("summary.json"), &summary)?;
    println!("final sup error {:e} after {} snapshots", summary.final_error, rows.len());
    let mut bad = Vec::new();
    if !summary.errors_non_increasing {
        bad.push("sup error increased with N".to_string());
    }
    if !(summary.final_error <= a.tol) {
        bad.push(format!("final sup error {:e} above {:e}", summary.final_error, a.tol));
    }
    if !bad.is_empty() {
        return Err(Failure::Certification(bad.join("; ")).into());
    }
    Ok(())
}
