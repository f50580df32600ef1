//! Finite element solver for obstacle problems driven by `ι·L + β·∇ + (−Δ)^s`
//! on bounded 1D/2D domains.
//!
//! The integral fractional Laplacian is handled through its Dunford–Taylor
//! representation: sinc quadrature in the resolvent parameter, truncation of
//! each whole-space resolvent solve to a dilated ball, and finite elements on
//! exponentially graded extension meshes. The discrete variational inequality
//! is solved with a primal–dual active set method.
//!
//! Module map:
//!
//! * [`mesh`] – base meshes, uniform refinement, graded extension meshes
//! * [`fespace`] – P1/Q1 spaces, assembly, extension/restriction, prolongation
//! * [`sparse`], [`cholesky`] – CSR storage and skyline Cholesky
//! * [`fraclap`] – sinc scheme and the matrix-free fractional operator
//! * [`linsolve`] – CG/BiCGSTAB and the two preconditioners
//! * [`obstacle`] – PDAS, Schur complement step, penalized cross-check
//! * [`oracle`] – independent references used by the test suites
//! * [`rates`] – predicted regularity and convergence exponents
//! * [`harness`] – experiment driver behind the `fracobstacle` CLI

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cholesky;
pub mod error;
pub mod fespace;
pub mod fraclap;
pub mod harness;
pub mod linsolve;
pub mod mesh;
pub mod obstacle;
pub mod oracle;
pub mod rates;
pub mod sparse;

pub use error::{Error, Result};
