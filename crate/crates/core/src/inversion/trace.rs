use serde::{Deserialize, Serialize};

use crate::forward::SolveCounts;
use crate::mesh::ParameterField;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    /// Full-order discrepancy check of the reduced solver.
    Outer,
    /// Reduced iterate of the reduced solver.
    Inner,
    /// Iterate of the full-order solver.
    Full,
}

impl StepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::Outer => "outer",
            StepKind::Inner => "inner",
            StepKind::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "outer" => Some(StepKind::Outer),
            "inner" => Some(StepKind::Inner),
            "full" => Some(StepKind::Full),
            _ => None,
        }
    }
}

/// One row of a run trace. `iter` counts parameter updates performed before
/// the iterate the row describes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub kind: StepKind,
    /// Full-order misfit `||F(sigma) - u_delta||`.
    pub residual: Option<f64>,
    /// Reduced misfit `||F_N(sigma) - u_delta||`.
    pub reduced_residual: Option<f64>,
    pub delta_n: Option<f64>,
    /// L2 distance between the reduced and the full-order update.
    pub update_error: Option<f64>,
    /// Nanoseconds since the start of the run.
    pub t_wall_ns: u64,
}

impl IterationRecord {
    pub(crate) fn new(iter: usize, kind: StepKind, t_wall_ns: u64) -> Self {
        Self { iter, kind, residual: None, reduced_residual: None, delta_n: None, update_error: None, t_wall_ns }
    }
}

/// Aggregate counters of a run.
///
/// `forward_solves` follows the convention of counting one primal and one
/// dual solve per iteration (per enrichment for the reduced solver). The
/// closing discrepancy check is counted in `check_solves`, so
/// `solves.primal + solves.dual == forward_solves + check_solves`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTotals {
    pub solves: SolveCounts,
    pub forward_solves: usize,
    pub check_solves: usize,
    /// Full-order iterations, or enrichments for the reduced solver.
    pub outer_iterations: usize,
    /// Reduced updates; zero for the full-order solver.
    pub inner_iterations: usize,
    pub dropped_snapshots: usize,
    pub time_total_ns: u64,
    /// Time outside the inner loops.
    pub time_outer_ns: u64,
    pub time_inner_ns: u64,
    pub time_estimator_ns: u64,
}

/// Why a run stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Discrepancy,
    MaxOuter,
    MaxTotal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<IterationRecord>,
    pub totals: RunTotals,
    pub omega: f64,
    pub termination: Termination,
    /// Some iterate was clamped to the positivity floor.
    pub clamped: bool,
    /// Full-order misfit at the returned iterate.
    pub final_residual: f64,
    /// `tau * delta`.
    pub threshold: f64,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub sigma: ParameterField,
    pub trace: RunTrace,
}

impl RunOutcome {
    pub fn converged(&self) -> bool {
        self.trace.termination == Termination::Discrepancy
    }
}
