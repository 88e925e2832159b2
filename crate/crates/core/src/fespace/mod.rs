//! Finite element spaces, quadrature and assembly.

pub mod assembly;
pub mod basis;
pub mod norms;
pub mod quadrature;
pub mod space;
pub mod sparse;

pub use assembly::{assemble, default_rule, DiscreteOperators};
pub use quadrature::{QuadratureRule, TriangleRule};
pub use space::{ElementGeometry, ScalarSpace, VectorSpace};
pub use sparse::{CsrMatrix, SparseLu};
