//! Identification of the fractional order `s` and the interaction horizon `δ`
//! of a truncated fractional Laplacian on an interval.
//!
//! The pipeline: [`assembly`] builds stiffness matrices, [`cheb`] schedules
//! Chebyshev interpolation in `s`, [`opfamily`] combines both into a cheap
//! affine operator family, [`solve`] computes states and adjoints, and
//! [`control`] runs BFGS on the reduced cost.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail parameter checks

pub mod assembly;
pub mod cheb;
pub mod control;
pub mod error;
pub mod experiments;
pub mod mesh;
pub mod opfamily;
pub mod oracle;
pub mod quad;
pub mod solve;
pub mod toeplitz;

pub use assembly::{MatrixKind, ParamPoint, QuadratureConfig, StiffnessMatrix};
pub use error::{Error, Result};
pub use mesh::{build_mesh, FieldVector, Mesh1D};
