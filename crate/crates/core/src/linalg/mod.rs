//! Hand-written dense and sparse linear algebra used by the solvers.

pub mod dense;
pub mod ldl;
pub mod ordering;
pub mod sparse;

pub use dense::{Cholesky, Lu, Mat};
pub use ldl::Ldl;
pub use sparse::{Csr, Triplets};
