//! Full-order forward map, dual problem, Jacobian and adjoint.
//!
//! With `u = F(sigma)` solving `B(sigma) u = f`, the Jacobian applied to a
//! direction `kappa` solves `B(sigma) v = -sum_k kappa_k B^k u`, and the
//! adjoint of the Jacobian with respect to a data inner product `W` is
//! `(F'(sigma)^* l)_k = u^T B^k u_l` with the dual solution
//! `B(sigma) u_l = -W l`. For the full L2 setting `W` is the mass matrix.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::fem::ComponentSystem;
use crate::mesh::{FeFunction, ParameterField};
use crate::sparse::{dot, BandedCholesky, ConjugateGradient, CsrMatrix};

/// Default relative residual for all full-order solves.
pub const DEFAULT_SOLVER_TOL: f64 = 1e-12;

/// Linear solver for full-order systems.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolver {
    /// Jacobi-preconditioned conjugate gradients to the relative tolerance.
    #[default]
    Cg,
    /// Banded Cholesky factorization, refactored once per parameter.
    Cholesky,
}

/// Solve counters of a [`ForwardCache`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SolveCounts {
    pub primal: usize,
    pub dual: usize,
    /// Linearized solves issued by [`ForwardCache::jacobian_apply`].
    pub jacobian: usize,
}

impl SolveCounts {
    pub fn total(&self) -> usize {
        self.primal + self.dual + self.jacobian
    }
}

/// Result of one full-order Landweber step evaluation.
#[derive(Clone, Debug)]
pub struct LandweberStep {
    /// `F'(sigma)^* (u_delta - F(sigma))`.
    pub update: Vec<f64>,
    /// `||F(sigma) - u_delta||` in the data norm.
    pub residual_norm: f64,
    /// The primal solution `F(sigma)`.
    pub state: FeFunction,
}

/// Full-order solver state over a shared [`ComponentSystem`].
///
/// Keeps the stiffness matrix of the most recent parameter so that the
/// primal and dual solve of one Landweber step assemble it once.
pub struct ForwardCache<'a> {
    cs: &'a ComponentSystem,
    solver: ConjugateGradient,
    stiffness: CsrMatrix,
    factor: Option<BandedCholesky>,
    kind: LinearSolver,
    assembled_for: Option<Vec<f64>>,
    counts: SolveCounts,
}

impl<'a> ForwardCache<'a> {
    pub fn new(cs: &'a ComponentSystem) -> Self {
        Self::with_tolerance(cs, DEFAULT_SOLVER_TOL)
    }

    pub fn with_tolerance(cs: &'a ComponentSystem, tol: f64) -> Self {
        Self::with_solver(cs, tol, LinearSolver::Cg)
    }

    /// `tol` applies to the iterative solver only.
    pub fn with_solver(cs: &'a ComponentSystem, tol: f64, kind: LinearSolver) -> Self {
        Self {
            cs,
            solver: ConjugateGradient::for_size(cs.num_dofs(), tol),
            stiffness: cs.unit_stiffness().clone(),
            factor: None,
            kind,
            assembled_for: None,
            counts: SolveCounts::default(),
        }
    }

    pub fn linear_solver(&self) -> LinearSolver {
        self.kind
    }

    pub fn system(&self) -> &'a ComponentSystem {
        self.cs
    }

    pub fn counts(&self) -> SolveCounts {
        self.counts
    }

    pub fn solver_tol(&self) -> f64 {
        self.solver.tol
    }

    fn prepare(&mut self, sigma: &ParameterField) -> Result<()> {
        if sigma.len() != self.cs.p() {
            return invalid(format!("parameter length {} does not match {} subdomains", sigma.len(), self.cs.p()));
        }
        if let Some((index, &min)) = sigma.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::DomainViolation { index, min });
        }
        if self.assembled_for.as_deref() != Some(sigma.values()) {
            self.assembled_for = None;
            self.cs.assemble_stiffness_into(sigma, &mut self.stiffness)?;
            if self.kind == LinearSolver::Cholesky {
                match self.factor.as_mut() {
                    Some(f) => f.refactor(&self.stiffness)?,
                    None => self.factor = Some(BandedCholesky::factor(&self.stiffness)?),
                }
            }
            self.assembled_for = Some(sigma.to_vec());
        }
        Ok(())
    }

    fn solve(&self, rhs: &[f64]) -> Result<FeFunction> {
        match (self.kind, &self.factor) {
            (LinearSolver::Cholesky, Some(f)) => {
                let mut x = rhs.to_vec();
                f.solve_in_place(&mut x)?;
                Ok(FeFunction::new(x))
            }
            _ => {
                let mut x = vec![0.0; rhs.len()];
                self.solver.solve_in_place(&self.stiffness, rhs, &mut x)?;
                Ok(FeFunction::new(x))
            }
        }
    }

    fn check_fn(&self, v: &[f64], what: &str) -> Result<()> {
        if v.len() != self.cs.num_dofs() {
            return invalid(format!("{what} has length {}, expected {}", v.len(), self.cs.num_dofs()));
        }
        Ok(())
    }

    /// `F(sigma)`: solves `B(sigma) u = f`.
    pub fn forward(&mut self, sigma: &ParameterField) -> Result<FeFunction> {
        self.prepare(sigma)?;
        let u = self.solve(self.cs.load())?;
        self.counts.primal += 1;
        Ok(u)
    }

    /// Dual solution `u_l` of `B(sigma) u_l = -M l`.
    pub fn dual_solve(&mut self, sigma: &ParameterField, l: &[f64]) -> Result<FeFunction> {
        self.dual_solve_in(sigma, l, self.cs.mass())
    }

    /// Dual solution for the data inner product `metric`: `B(sigma) u_l = -W l`.
    pub fn dual_solve_in(&mut self, sigma: &ParameterField, l: &[f64], metric: &CsrMatrix) -> Result<FeFunction> {
        self.check_fn(l, "dual data")?;
        self.prepare(sigma)?;
        let mut rhs = metric.mul_vec(l);
        rhs.iter_mut().for_each(|v| *v = -*v);
        let u = self.solve(&rhs)?;
        self.counts.dual += 1;
        Ok(u)
    }

    /// `F'(sigma) kappa`, given `u_sigma = F(sigma)`.
    pub fn jacobian_apply(&mut self, sigma: &ParameterField, kappa: &[f64], u_sigma: &[f64]) -> Result<FeFunction> {
        self.check_fn(u_sigma, "state")?;
        self.prepare(sigma)?;
        let mut rhs = self.cs.weighted_product(kappa, u_sigma)?;
        rhs.iter_mut().for_each(|v| *v = -*v);
        let v = self.solve(&rhs)?;
        self.counts.jacobian += 1;
        Ok(v)
    }

    /// `F'(sigma)^* l` with respect to the L2 product, given `u_sigma = F(sigma)`.
    /// Performs exactly one dual solve.
    pub fn adjoint_apply(&mut self, sigma: &ParameterField, l: &[f64], u_sigma: &[f64]) -> Result<Vec<f64>> {
        self.adjoint_apply_in(sigma, l, u_sigma, self.cs.mass())
    }

    pub fn adjoint_apply_in(
        &mut self,
        sigma: &ParameterField,
        l: &[f64],
        u_sigma: &[f64],
        metric: &CsrMatrix,
    ) -> Result<Vec<f64>> {
        self.check_fn(u_sigma, "state")?;
        let ul = self.dual_solve_in(sigma, l, metric)?;
        Ok(self.cs.component_forms(u_sigma, &ul))
    }

    /// One primal and one dual solve: the Landweber direction at `sigma`.
    pub fn landweber_update(&mut self, sigma: &ParameterField, u_delta: &[f64]) -> Result<LandweberStep> {
        self.landweber_update_in(sigma, u_delta, self.cs.mass())
    }

    pub fn landweber_update_in(
        &mut self,
        sigma: &ParameterField,
        u_delta: &[f64],
        metric: &CsrMatrix,
    ) -> Result<LandweberStep> {
        self.check_fn(u_delta, "measurement")?;
        let state = self.forward(sigma)?;
        let (residual_norm, mismatch) = data_mismatch(metric, u_delta, &state);
        let update = self.adjoint_apply_in(sigma, &mismatch, &state, metric)?;
        Ok(LandweberStep { update, residual_norm, state })
    }

    /// Lower-bound estimate of `||F'(sigma)||` from `(R^p, l2)` to the L2 data
    /// space by power iteration on `F'^* F'` from a seeded uniform start.
    pub fn estimate_operator_norm(&mut self, sigma: &ParameterField, iters: usize, seed: u64) -> Result<f64> {
        self.estimate_operator_norm_in(sigma, iters, seed, self.cs.mass())
    }

    pub fn estimate_operator_norm_in(
        &mut self,
        sigma: &ParameterField,
        iters: usize,
        seed: u64,
        metric: &CsrMatrix,
    ) -> Result<f64> {
        if iters == 0 {
            return invalid("power iteration needs at least one step");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut kappa: Vec<f64> = (0..self.cs.p()).map(|_| rng.random_range(0.0..1.0)).collect();
        normalize(&mut kappa);
        let u = self.forward(sigma)?;
        let mut estimate: f64 = 0.0;
        for _ in 0..iters {
            let v = self.jacobian_apply(sigma, &kappa, &u)?;
            // Rayleigh quotient of F'^* F' at a unit vector
            estimate = estimate.max(metric.bilinear(&v, &v).max(0.0).sqrt());
            kappa = self.adjoint_apply_in(sigma, &v, &u, metric)?;
            if normalize(&mut kappa) == 0.0 {
                break;
            }
        }
        Ok(estimate)
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Returns `(||u_delta - state||_W, u_delta - state)`.
pub fn data_mismatch(metric: &CsrMatrix, u_delta: &[f64], state: &[f64]) -> (f64, Vec<f64>) {
    let l: Vec<f64> = u_delta.iter().zip(state).map(|(d, u)| d - u).collect();
    let norm = metric.bilinear(&l, &l).max(0.0).sqrt();
    (norm, l)
}
