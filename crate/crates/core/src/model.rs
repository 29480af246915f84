//! Glue between a parsed problem, a mesh and the truth solver, plus the
//! truth implementation of [`OcpModel`].

use crate::control::{solve_ocp, ControlBox, ControlGeometry, OcpModel, OcpOptions, OcpSolution};
use crate::error::{Error, Result};
use crate::fespace::{assemble_blocks, Spaces};
use crate::mesh::{generate_structured_cube, Mesh};
use crate::problem::{Problem, Thetas};
use crate::scalar::Real;
use crate::truth::{Truth, TruthAtMu};

/// The reference benchmark problem file.
pub const BENCHMARK_TOML: &str = include_str!("../../../configs/benchmark.toml");

/// Loads the reference benchmark problem.
pub fn benchmark_problem() -> Result<Problem> {
    Problem::from_toml_str(BENCHMARK_TOML, std::path::Path::new("."))
}

/// A problem discretized on one mesh.
pub struct Setup<T> {
    pub problem: Problem,
    pub truth: Truth<T>,
    pub control_box: ControlBox<T>,
    pub alpha: T,
}

impl<T: Real> Setup<T> {
    /// Tags the observation region on `mesh` from the problem and
    /// assembles every affine block.
    pub fn new(problem: Problem, mut mesh: Mesh<T>) -> Result<Self> {
        mesh.tag_region(&problem.data.region.region());
        if !mesh.region_is_nonempty() {
            return Err(Error::Config("observation region contains no tets".into()));
        }
        let spaces = Spaces::new(mesh)?;
        let fields = problem.resolve_fields(&spaces.mesh, spaces.n_edge())?;
        let blocks = assemble_blocks(&spaces, &fields)?;
        let truth = Truth::new(spaces, blocks)?;
        let control_box = ControlBox::from_f64(problem.data.u_lower, problem.data.u_upper)?;
        let alpha = T::lit(problem.data.alpha);
        Ok(Setup {
            problem,
            truth,
            control_box,
            alpha,
        })
    }

    /// Uses the structured unit-cube mesh with `n` cells per side.
    pub fn structured(problem: Problem, n: usize) -> Result<Self> {
        let region = problem.data.region.region();
        Self::new(problem, generate_structured_cube(n, &region)?)
    }

    pub fn thetas(&self, mu: &[f64]) -> Result<Thetas> {
        self.problem.thetas(mu)
    }

    pub fn truth_model(&self, mu: &[f64]) -> Result<TruthModel<'_, T>> {
        let th = self.thetas(mu)?;
        let at = self.truth.at(&th).map_err(|e| e.at(mu))?;
        Ok(TruthModel {
            at,
            control_box: self.control_box,
            alpha: self.alpha,
        })
    }

    /// Truth optimal control at `mu`.
    pub fn solve_truth(&self, mu: &[f64], opts: &OcpOptions<T>) -> Result<OcpSolution<T>> {
        let m = self.truth_model(mu)?;
        solve_ocp(&m, opts).map_err(|e| e.at(mu))
    }

    /// `|Ω|`.
    pub fn omega_volume(&self) -> f64 {
        self.truth.spaces.mesh.total_volume().to_f64_lossy()
    }
}

/// Truth state/adjoint solves at one parameter.
pub struct TruthModel<'a, T> {
    pub at: TruthAtMu<'a, T>,
    pub control_box: ControlBox<T>,
    pub alpha: T,
}

impl<T: Real> OcpModel<T> for TruthModel<'_, T> {
    fn geometry(&self) -> &ControlGeometry<T> {
        &self.at.control
    }

    fn control_box(&self) -> &ControlBox<T> {
        &self.control_box
    }

    fn alpha(&self) -> T {
        self.alpha
    }

    fn desired_control(&self) -> &[T] {
        &self.at.u_d
    }

    fn state(&self, u: &[T]) -> Result<Vec<T>> {
        self.at.solve_state(u)
    }

    fn adjoint(&self, e: &[T]) -> Result<Vec<T>> {
        self.at.solve_adjoint(e)
    }

    fn adjoint_mean(&self, f: &[T]) -> Vec<T> {
        self.at.truth.blocks.pi0.matvec(f)
    }

    fn cost(&self, u: &[T], e: &[T]) -> T {
        self.at.cost(self.alpha, u, e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_parses_and_solves() {
        let setup = Setup::<f64>::structured(benchmark_problem().unwrap(), 2).unwrap();
        let sol = setup.solve_truth(&[0.5, 0.5], &OcpOptions::truth()).unwrap();
        assert!(sol.increment <= 1e-9);
        assert!(setup.control_box.contains(&sol.u));
        assert!(sol.kkt.unwrap() <= 1e-8);
    }
}
