//! `maxrb`: truth solves, greedy reduced-basis training, certification and
//! convergence studies for parameterized Maxwell optimal control problems.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit codes.
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_SOLVER: u8 = 3;
pub const EXIT_CERTIFICATION: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "maxrb", version, about = "Certified reduced basis optimal control for parameterized Maxwell problems")]
struct Cli {
    /// Worker threads for parameter sweeps (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a structured tetrahedral mesh of the unit cube.
    MeshGen(MeshGenArgs),
    /// Solve the truth optimal control problem at given parameters.
    TruthSolve(TruthSolveArgs),
    /// Solve and certify the reduced problem at given parameters.
    OcpSolve(OcpSolveArgs),
    /// Build a reduced basis by greedy sampling.
    Greedy(GreedyArgs),
    /// Certify the reduced model over a test sample.
    Certify(CertifyArgs),
    /// Mesh-refinement study against a manufactured solution.
    HStudy(HStudyArgs),
    /// Reduced-basis error against the snapshot fill distance.
    NStudy(NStudyArgs),
}

/// Problem file and mesh.
#[derive(Args, Debug, Clone)]
pub struct ProblemArgs {
    /// Problem TOML; the built-in benchmark when omitted.
    #[arg(long)]
    pub problem: Option<PathBuf>,
    /// Mesh file in the ASCII mesh format.
    #[arg(long, conflicts_with = "n")]
    pub mesh: Option<PathBuf>,
    /// Cells per side of the structured unit-cube mesh.
    #[arg(long)]
    pub n: Option<usize>,
}

/// A parameter sample: an explicit grid or seeded uniform draws.
#[derive(Args, Debug, Clone)]
pub struct SampleArgs {
    /// Uniform grid, points per axis, e.g. `5x5` (or `5` for every axis).
    #[arg(long, conflicts_with = "test_random")]
    pub test_grid: Option<String>,
    /// Number of uniform random parameters.
    #[arg(long)]
    pub test_random: Option<usize>,
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct MeshGenArgs {
    #[arg(long)]
    pub n: usize,
    /// Problem whose observation region tags the mesh.
    #[arg(long)]
    pub problem: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TruthSolveArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Parameter as comma-separated components (repeatable).
    #[arg(long = "mu", required = true)]
    pub mu: Vec<String>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Write legacy VTK fields per parameter.
    #[arg(long)]
    pub vtk: bool,
    /// Write the fixed-point iteration history per parameter.
    #[arg(long)]
    pub trace: bool,
    /// Write operator dimensions and consistency checks.
    #[arg(long)]
    pub dump_ops: bool,
    /// Damping of the fixed-point iteration.
    #[arg(long, default_value_t = 0.7)]
    pub omega: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
}

#[derive(Args, Debug)]
pub struct OcpSolveArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Reduced basis file written by `greedy`.
    #[arg(long)]
    pub rb: PathBuf,
    #[arg(long = "mu", required = true)]
    pub mu: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub vtk: bool,
    #[arg(long)]
    pub trace: bool,
}

#[derive(Args, Debug)]
pub struct GreedyArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Training grid, points per axis.
    #[arg(long, default_value = "9x9")]
    pub train_grid: String,
    /// Stop once the largest estimate is at most this.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Largest number of snapshots.
    #[arg(long, default_value_t = 15)]
    pub nmax: usize,
    /// Reduced basis file.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-iteration log (CSV); next to `--out` when omitted.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long)]
    pub rb: PathBuf,
    #[command(flatten)]
    pub sample: SampleArgs,
    /// Also solve the truth problem and check every bound.
    #[arg(long)]
    pub with_truth: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct HStudyArgs {
    /// Mesh sizes, comma-separated.
    #[arg(long, default_value = "2,3,4,6")]
    pub ns: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct NStudyArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long)]
    pub rb: PathBuf,
    #[command(flatten)]
    pub sample: SampleArgs,
    /// Required final sup error.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(w) = cli.workers {
        if w == 0 {
            eprintln!("error: --workers must be positive");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let result = match cli.command {
        Command::MeshGen(a) => commands::mesh_gen(&a),
        Command::TruthSolve(a) => commands::truth_solve(&a),
        Command::OcpSolve(a) => commands::ocp_solve(&a),
        Command::Greedy(a) => commands::greedy(&a),
        Command::Certify(a) => commands::certify(&a),
        Command::HStudy(a) => commands::h_study(&a),
        Command::NStudy(a) => commands::n_study(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(io::exit_code(&e))
        }
    }
}
