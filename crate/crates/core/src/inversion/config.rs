use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::forward::{LinearSolver, DEFAULT_SOLVER_TOL};

/// Damping parameter of the Landweber step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OmegaRepr", into = "OmegaRepr")]
pub enum Omega {
    /// `1 / (2 ||F'(sigma_start)||)` from a power iteration.
    Auto,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum OmegaRepr {
    Value(f64),
    Name(String),
}

impl TryFrom<OmegaRepr> for Omega {
    type Error = String;

    fn try_from(r: OmegaRepr) -> std::result::Result<Self, String> {
        match r {
            OmegaRepr::Value(v) => Ok(Omega::Fixed(v)),
            OmegaRepr::Name(s) if s == "auto" => Ok(Omega::Auto),
            OmegaRepr::Name(s) => Err(format!("omega must be a number or \"auto\", got {s:?}")),
        }
    }
}

impl From<Omega> for OmegaRepr {
    fn from(o: Omega) -> Self {
        match o {
            Omega::Auto => OmegaRepr::Name("auto".into()),
            Omega::Fixed(v) => OmegaRepr::Value(v),
        }
    }
}

/// Reaction to an iterate whose minimum drops to the positivity floor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClampPolicy {
    #[default]
    Abort,
    /// Raise offending entries to the floor and flag the run.
    Clamp,
}

/// How the inner loop evaluates the error estimator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    /// Full-order residual and one mass solve per evaluation.
    #[default]
    Direct,
    /// Residual Gram matrix rebuilt after each enrichment; `O((N_1 p)^2)` online.
    OfflineOnline,
}

/// Parameters shared by both drivers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Discrepancy factor, `tau > 2`.
    pub tau: f64,
    pub omega: Omega,
    /// Cap on enrichments (reduced solver only).
    pub max_outer: usize,
    /// Cap on reduced updates between two enrichments.
    pub max_inner: usize,
    /// Cap on parameter updates over the whole run.
    pub max_total: usize,
    pub solver_tol: f64,
    pub linear_solver: LinearSolver,
    pub positivity_floor: f64,
    pub clamp_policy: ClampPolicy,
    /// Power iterations for the automatic damping parameter.
    pub norm_iters: usize,
    pub norm_seed: u64,
    pub estimator: EstimatorMode,
    /// Record the distance between reduced and full-order updates at every
    /// inner iteration. Costs two extra full-order solves per update.
    pub probe_update_error: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tau: 2.5,
            omega: Omega::Auto,
            max_outer: 200,
            max_inner: 1_000_000,
            max_total: 10_000_000,
            solver_tol: DEFAULT_SOLVER_TOL,
            linear_solver: LinearSolver::Cg,
            positivity_floor: 1e-8,
            clamp_policy: ClampPolicy::Abort,
            norm_iters: 50,
            norm_seed: 0,
            estimator: EstimatorMode::Direct,
            probe_update_error: false,
        }
    }
}

impl SolverConfig {
    /// An explicit `omega = 0` is accepted: it freezes the iterate, which
    /// is useful for exercising the caps.
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 2.0 && self.tau.is_finite()) {
            return invalid(format!("tau must exceed 2, got {}", self.tau));
        }
        if let Omega::Fixed(w) = self.omega {
            if !(w >= 0.0 && w.is_finite()) {
                return invalid(format!("omega must be a finite nonnegative number, got {w}"));
            }
        }
        if !(self.solver_tol > 0.0 && self.solver_tol < 1.0) {
            return invalid(format!("solver_tol must lie in (0, 1), got {}", self.solver_tol));
        }
        if !(self.positivity_floor > 0.0 && self.positivity_floor.is_finite()) {
            return invalid(format!("positivity_floor must be positive, got {}", self.positivity_floor));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return invalid("max_outer and max_inner must be at least 1");
        }
        if self.norm_iters == 0 && self.omega == Omega::Auto {
            return invalid("automatic omega needs norm_iters >= 1");
        }
        Ok(())
    }
}
