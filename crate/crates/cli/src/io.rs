//! Argument parsing, problem loading, files and exit-code mapping.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use maxrb::estimator::StabilityRow;
use maxrb::mesh::{generate_structured_cube, Mesh};
use maxrb::model::{benchmark_problem, Setup};
use maxrb::problem::{ConstantsLedger, ParameterDomain, Problem};
use maxrb::rbm::{Archive, GreedyStep};
use maxrb::Error;

use crate::{ProblemArgs, SampleArgs, EXIT_CERTIFICATION, EXIT_SOLVER, EXIT_USAGE};

pub const DEFAULT_N: usize = 3;

/// Errors carrying their own exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Certification(String),
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(s) => write!(f, "{s}"),
            Failure::Certification(s) => write!(f, "certification failed: {s}"),
        }
    }
}

impl std::error::Error for Failure {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Failure::Usage(msg.into()).into()
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(f) = e.downcast_ref::<Failure>() {
        return match f {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Certification(_) => EXIT_CERTIFICATION,
        };
    }
    match e.downcast_ref::<Error>() {
        Some(err) => core_exit_code(err),
        None => EXIT_SOLVER,
    }
}

fn core_exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_)
        | Error::Parse(_)
        | Error::Config(_)
        | Error::Domain { .. }
        | Error::MeshValidation(_)
        | Error::Io(_) => EXIT_USAGE,
        Error::AtParameter { source, .. } => core_exit_code(source),
        _ => EXIT_SOLVER,
    }
}

pub fn load_problem(path: Option<&Path>) -> Result<Problem> {
    Ok(match path {
        Some(p) => Problem::load(p)?,
        None => benchmark_problem()?,
    })
}

pub fn load_setup(args: &ProblemArgs) -> Result<Setup<f64>> {
    let problem = load_problem(args.problem.as_deref())?;
    let setup = match &args.mesh {
        Some(path) => Setup::new(problem, Mesh::load(path)?)?,
        None => {
            let n = args.n.unwrap_or(DEFAULT_N);
            let region = problem.data.region.region();
            Setup::new(problem, generate_structured_cube(n, &region)?)?
        }
    };
    log::info!(
        "mesh: {} tets, {} edge dofs, {} nodal dofs",
        setup.truth.spaces.n_tet(),
        setup.truth.n_edge(),
        setup.truth.n_node()
    );
    Ok(setup)
}

/// SHA-256 of the normalized problem and the mesh.
pub fn config_hash(setup: &Setup<f64>) -> String {
    let mut h = Sha256::new();
    h.update(setup.problem.normalized().as_bytes());
    h.update(b"\n--mesh--\n");
    h.update(setup.truth.spaces.mesh.to_ascii().as_bytes());
    h.finalize().iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn parse_mu(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| usage(format!("invalid parameter component {t:?} in {s:?}"))))
        .collect()
}

pub fn parse_mus(list: &[String], domain: &ParameterDomain) -> Result<Vec<Vec<f64>>> {
    let mus: Vec<Vec<f64>> = list.iter().map(|s| parse_mu(s)).collect::<Result<_>>()?;
    for mu in &mus {
        if mu.len() != domain.dim() {
            return Err(usage(format!("parameter {mu:?} has {} components, expected {}", mu.len(), domain.dim())));
        }
        if !domain.contains(mu) {
            return Err(usage(format!("parameter {mu:?} outside the parameter domain")));
        }
    }
    Ok(mus)
}

/// `9x9`, or a single count used for every axis.
pub fn parse_grid(spec: &str, domain: &ParameterDomain) -> Result<Vec<Vec<f64>>> {
    let counts: Vec<usize> = spec
        .split('x')
        .map(|t| t.trim().parse::<usize>().map_err(|_| usage(format!("invalid grid spec {spec:?}"))))
        .collect::<Result<_>>()?;
    let counts = if counts.len() == 1 { vec![counts[0]; domain.dim()] } else { counts };
    if counts.iter().any(|&c| c == 0) {
        return Err(usage(format!("empty grid {spec:?}")));
    }
    domain.grid(&counts).map_err(|e| usage(e.to_string()))
}

pub fn random_sample(domain: &ParameterDomain, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let t: Vec<f64> = (0..domain.dim()).map(|_| rng.random::<f64>()).collect();
            domain.from_unit(&t)
        })
        .collect()
}

pub fn sample(args: &SampleArgs, domain: &ParameterDomain) -> Result<Vec<Vec<f64>>> {
    let s = match (&args.test_grid, args.test_random) {
        (Some(g), _) => parse_grid(g, domain)?,
        (None, Some(k)) => random_sample(domain, k, args.seed),
        (None, None) => random_sample(domain, 50, args.seed),
    };
    if s.is_empty() {
        return Err(usage("empty test sample"));
    }
    Ok(s)
}

/// Everything `greedy` writes: the basis and the data needed to certify it.
#[derive(Serialize, Deserialize)]
pub struct RbFile {
    pub training: Vec<Vec<f64>>,
    pub tol: f64,
    pub n_max: usize,
    pub converged: bool,
    pub ledger: ConstantsLedger,
    pub stability: Vec<StabilityRow>,
    pub log: Vec<GreedyStep>,
    pub archive: Archive,
}

impl RbFile {
    pub fn load(path: &Path, setup: &Setup<f64>) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let rb: RbFile = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        if rb.archive.config_hash != config_hash(setup) {
            return Err(usage(format!(
                "{} was built for a different problem or mesh",
                path.display()
            )));
        }
        Ok(rb)
    }
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// CSV writer over string records.
pub struct Table {
    w: csv::Writer<fs::File>,
}

impl Table {
    pub fn create(path: &Path, header: &[String]) -> Result<Self> {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(header)?;
        Ok(Table { w })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        self.w.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

pub fn f(x: f64) -> String {
    format!("{x:e}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(f).unwrap_or_default()
}

pub fn mu_header(domain: &ParameterDomain) -> Vec<String> {
    domain.names.clone()
}

pub fn mu_fields(mu: &[f64]) -> Vec<String> {
    mu.iter().map(|&x| f(x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn domain() -> ParameterDomain {
        ParameterDomain::new(vec![0.0, 1.0], vec![1.0, 3.0], vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn grids_and_parameters() {
        let d = domain();
        assert_eq!(parse_grid("3x2", &d).unwrap().len(), 6);
        assert_eq!(parse_grid("3", &d).unwrap().len(), 9);
        assert!(parse_grid("0x2", &d).is_err());
        assert!(parse_grid("ax2", &d).is_err());
        assert_eq!(parse_mu("0.5, 2").unwrap(), vec![0.5, 2.0]);
        assert!(parse_mus(&["0.5".into()], &d).is_err());
        assert!(parse_mus(&["0.5,5".into()], &d).is_err());
    }

    #[test]
    fn random_sample_is_seeded_and_inside() {
        let d = domain();
        let a = random_sample(&d, 10, 1);
        assert_eq!(a, random_sample(&d, 10, 1));
        assert_ne!(a, random_sample(&d, 10, 2));
        assert!(a.iter().all(|m| d.contains(m)));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&usage("x")), EXIT_USAGE);
        assert_eq!(exit_code(&Failure::Certification("x".into()).into()), EXIT_CERTIFICATION);
        let e: anyhow::Error = Error::ReducedInfSup("x".into()).at(&[0.5]).into();
        assert_eq!(exit_code(&e), EXIT_SOLVER);
        let e: anyhow::Error = Error::Domain { mu: vec![] }.into();
        assert_eq!(exit_code(&e), EXIT_USAGE);
    }
}
