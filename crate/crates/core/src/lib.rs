//! Certified reduced basis methods for control-constrained optimal control
//! of the parameterized stationary Maxwell system with a Gauss law
//! constraint.
//!
//! The numerical core is generic over [`Real`] (`f32`, `f64`); the aliases
//! below fix `f64`, which the solver tolerances assume.

pub mod control;
pub mod error;
pub mod fespace;
pub mod linalg;
pub mod mesh;
pub mod model;
pub mod problem;
pub mod quadrature;
pub mod rbm;
pub mod estimator;
pub mod scalar;
pub mod study;
pub mod truth;
pub mod vtk;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision instantiations of the generic types.
pub type Mesh = mesh::Mesh<f64>;
pub type Spaces = fespace::Spaces<f64>;
pub type OperatorBlocks = fespace::OperatorBlocks<f64>;
pub type Truth = truth::Truth<f64>;
pub type Setup = model::Setup<f64>;
pub type ControlBox = control::ControlBox<f64>;
pub type OcpOptions = control::OcpOptions<f64>;
pub type OcpSolution = control::OcpSolution<f64>;
pub type ReducedBasis = rbm::ReducedBasis<f64>;
pub type GreedyOptions = rbm::GreedyOptions<f64>;
pub type Online = estimator::Online<f64>;

/// Single-precision instantiations, for geometry and assembly.
pub type MeshF32 = mesh::Mesh<f32>;
pub type SpacesF32 = fespace::Spaces<f32>;
