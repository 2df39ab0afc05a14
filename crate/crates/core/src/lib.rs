//! Reconstruction of a piecewise-constant conductivity in the stationary heat
//! equation `div(sigma grad u) = 1`, `u = 0` on the boundary of the unit
//! square, from a noisy interior measurement of `u`.
//!
//! Two solvers are provided: the damped nonlinear Landweber iteration with
//! discrepancy-principle stopping, and the reduced basis Landweber method,
//! which runs most Landweber steps on small adaptively enriched primal and
//! dual reduced spaces guarded by a rigorous a posteriori error estimator.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fem;
pub mod forward;
pub mod harness;
pub mod inversion;
pub mod mesh;
pub mod reduced;
pub mod sparse;

pub use error::{Error, Result};
pub use fem::{ComponentSystem, Rect};
pub use forward::{ForwardCache, LandweberStep, LinearSolver, SolveCounts};
pub use inversion::{landweber, rbl, ClampPolicy, Measurement, Omega, RunOutcome, RunTrace, SolverConfig};
pub use mesh::{FeFunction, Grid, ParameterField, Partition};
pub use reduced::{EstimatorWorkspace, ReducedModel};
