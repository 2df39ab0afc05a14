//! Full-order Landweber and reduced basis Landweber drivers.
//!
//! Both iterate `sigma <- sigma + omega * F'(sigma)^* (u_delta - F(sigma))`
//! until the discrepancy principle `||F(sigma) - u_delta|| <= tau * delta`
//! holds. The reduced driver evaluates the step on adaptively enriched
//! primal and dual reduced spaces and leaves the inner loop once the reduced
//! misfit meets the discrepancy or the error estimator exceeds
//! `(tau - 2) * delta`.

mod config;
mod measurement;
mod trace;

use std::time::Instant;

pub use config::{ClampPolicy, EstimatorMode, Omega, SolverConfig};
pub use measurement::Measurement;
pub use trace::{IterationRecord, RunOutcome, RunTotals, RunTrace, StepKind, Termination};

use crate::error::{invalid, Error, Result};
use crate::forward::{data_mismatch, ForwardCache, SolveCounts};
use crate::mesh::{FeFunction, ParameterField};
use crate::reduced::{Enrichment, EstimatorWorkspace, ReducedModel, ResidualGram};

fn elapsed_ns(t: Instant) -> u64 {
    t.elapsed().as_nanos().min(u64::MAX as u128) as u64
}

fn counts_since(now: SolveCounts, start: SolveCounts) -> SolveCounts {
    SolveCounts {
        primal: now.primal - start.primal,
        dual: now.dual - start.dual,
        jacobian: now.jacobian - start.jacobian,
    }
}

fn check_inputs(
    cache: &ForwardCache,
    sigma_start: &ParameterField,
    meas: &Measurement,
    cfg: &SolverConfig,
) -> Result<()> {
    cfg.validate()?;
    let cs = cache.system();
    if sigma_start.len() != cs.p() {
        return invalid(format!("start parameter has length {}, expected {}", sigma_start.len(), cs.p()));
    }
    if meas.u_delta().len() != cs.num_dofs() {
        return invalid("measurement does not match the grid");
    }
    if sigma_start.min() <= cfg.positivity_floor {
        return Err(Error::PositivityViolation { iteration: 0, min: sigma_start.min(), floor: cfg.positivity_floor });
    }
    Ok(())
}

/// Damping parameter for `cfg` at `sigma_start`. The automatic choice runs
/// its power iteration on a private cache, leaving `cache`'s counters alone.
pub fn resolve_omega(
    cache: &ForwardCache,
    sigma_start: &ParameterField,
    meas: &Measurement,
    cfg: &SolverConfig,
) -> Result<f64> {
    match cfg.omega {
        Omega::Fixed(w) => Ok(w),
        Omega::Auto => {
            let mut scratch = ForwardCache::with_solver(cache.system(), cfg.solver_tol, cfg.linear_solver);
            let norm = scratch.estimate_operator_norm_in(sigma_start, cfg.norm_iters, cfg.norm_seed, meas.metric())?;
            if !(norm > 0.0 && norm.is_finite()) {
                return invalid(format!("operator norm estimate {norm} cannot define a damping parameter"));
            }
            Ok(0.5 / norm)
        }
    }
}

/// `sigma + omega * direction` subject to the positivity policy.
fn step(
    sigma: &ParameterField,
    direction: &[f64],
    omega: f64,
    cfg: &SolverConfig,
    iteration: usize,
    clamped: &mut bool,
) -> Result<ParameterField> {
    let mut next: Vec<f64> = sigma.iter().zip(direction).map(|(s, d)| s + omega * d).collect();
    let min = next.iter().copied().fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(Error::PositivityViolation { iteration, min, floor: cfg.positivity_floor });
    }
    if min <= cfg.positivity_floor {
        match cfg.clamp_policy {
            ClampPolicy::Abort => {
                return Err(Error::PositivityViolation { iteration, min, floor: cfg.positivity_floor })
            }
            ClampPolicy::Clamp => {
                next.iter_mut().for_each(|v| *v = v.max(cfg.positivity_floor));
                *clamped = true;
            }
        }
    }
    ParameterField::new(next)
}

/// Damped nonlinear Landweber iteration with discrepancy stopping.
///
/// Each update costs one primal and one dual solve; the final discrepancy
/// check adds one primal solve. Without convergence the iterate with the
/// smallest misfit is returned.
pub fn landweber(
    cache: &mut ForwardCache,
    sigma_start: &ParameterField,
    meas: &Measurement,
    cfg: &SolverConfig,
) -> Result<RunOutcome> {
    check_inputs(cache, sigma_start, meas, cfg)?;
    let omega = resolve_omega(cache, sigma_start, meas, cfg)?;
    let start_counts = cache.counts();
    let t0 = Instant::now();
    let threshold = cfg.tau * meas.delta();
    let metric = meas.metric();

    let mut sigma = sigma_start.clone();
    let mut records = Vec::new();
    let mut clamped = false;
    let mut best: Option<(f64, ParameterField)> = None;
    let mut iterations = 0;
    let termination = loop {
        let u = cache.forward(&sigma)?;
        let (residual, mismatch) = data_mismatch(metric, meas.u_delta(), &u);
        let mut rec = IterationRecord::new(iterations, StepKind::Full, elapsed_ns(t0));
        rec.residual = Some(residual);
        records.push(rec);
        if best.as_ref().is_none_or(|(r, _)| residual < *r) {
            best = Some((residual, sigma.clone()));
        }
        if residual <= threshold {
            break Termination::Discrepancy;
        }
        if iterations >= cfg.max_total {
            break Termination::MaxTotal;
        }
        let update = cache.adjoint_apply_in(&sigma, &mismatch, &u, metric)?;
        sigma = step(&sigma, &update, omega, cfg, iterations + 1, &mut clamped)?;
        iterations += 1;
    };

    let (final_residual, sigma) = match termination {
        Termination::Discrepancy => (records.last().and_then(|r| r.residual).unwrap_or(0.0), sigma),
        _ => best.expect("at least one iterate is checked"),
    };
    let time = elapsed_ns(t0);
    let totals = RunTotals {
        solves: counts_since(cache.counts(), start_counts),
        forward_solves: 2 * iterations,
        check_solves: 1,
        outer_iterations: iterations,
        inner_iterations: 0,
        dropped_snapshots: 0,
        time_total_ns: time,
        time_outer_ns: time,
        time_inner_ns: 0,
        time_estimator_ns: 0,
    };
    Ok(RunOutcome {
        sigma,
        trace: RunTrace { records, totals, omega, termination, clamped, final_residual, threshold },
    })
}

/// State of the reduced solver at one inner iterate, before the termination
/// test is applied.
#[derive(Clone, Debug)]
pub struct InnerIterate<'s> {
    /// Enrichments performed so far.
    pub outer: usize,
    /// Total parameter updates performed so far.
    pub iter: usize,
    pub sigma: &'s ParameterField,
    pub reduced_residual: f64,
    pub delta_n: f64,
    /// The reduced step will be taken from this iterate.
    pub accepted: bool,
}

/// Reduced basis Landweber method. See [`rbl_with_observer`].
pub fn rbl(
    cache: &mut ForwardCache,
    sigma_start: &ParameterField,
    meas: &Measurement,
    cfg: &SolverConfig,
) -> Result<RunOutcome> {
    rbl_with_observer(cache, sigma_start, meas, cfg, |_| {})
}

enum Estimator {
    Direct(EstimatorWorkspace),
    Gram(Option<ResidualGram>),
}

/// Reduced basis Landweber method, calling `observer` at every inner iterate.
///
/// Every enrichment costs one primal and one dual full-order solve; the
/// primal solve of the discrepancy check doubles as the next primal
/// snapshot. Inner iterations perform no full-order solve unless
/// `probe_update_error` is set, in which case the probe uses a private cache.
pub fn rbl_with_observer<F>(
    cache: &mut ForwardCache,
    sigma_start: &ParameterField,
    meas: &Measurement,
    cfg: &SolverConfig,
    mut observer: F,
) -> Result<RunOutcome>
where
    F: FnMut(&InnerIterate<'_>),
{
    check_inputs(cache, sigma_start, meas, cfg)?;
    let omega = resolve_omega(cache, sigma_start, meas, cfg)?;
    let cs = cache.system();
    let start_counts = cache.counts();
    let t0 = Instant::now();
    let threshold = cfg.tau * meas.delta();
    let trust = (cfg.tau - 2.0) * meas.delta();
    let metric = meas.metric();

    let mut model = ReducedModel::new(cs, metric, meas.u_delta())?;
    let mut estimator = match cfg.estimator {
        EstimatorMode::Direct => Estimator::Direct(
            EstimatorWorkspace::with_solver(cs, cfg.solver_tol, cfg.linear_solver)?.with_warm_start(true),
        ),
        EstimatorMode::OfflineOnline => Estimator::Gram(None),
    };
    let mut probe = cfg.probe_update_error.then(|| ForwardCache::with_solver(cs, cfg.solver_tol, cfg.linear_solver));

    let mut sigma = sigma_start.clone();
    let mut records = Vec::new();
    let mut clamped = false;
    let mut best: Option<(f64, ParameterField)> = None;
    let mut outer = 0;
    let mut total_updates = 0;
    let mut dropped = 0;
    let (mut time_inner, mut time_est) = (0u64, 0u64);

    let termination = loop {
        let u = cache.forward(&sigma)?;
        let (residual, mismatch) = data_mismatch(metric, meas.u_delta(), &u);
        let mut rec = IterationRecord::new(total_updates, StepKind::Outer, elapsed_ns(t0));
        rec.residual = Some(residual);
        records.push(rec);
        if best.as_ref().is_none_or(|(r, _)| residual < *r) {
            best = Some((residual, sigma.clone()));
        }
        if residual <= threshold {
            break Termination::Discrepancy;
        }
        if outer >= cfg.max_outer {
            break Termination::MaxOuter;
        }
        if total_updates >= cfg.max_total {
            break Termination::MaxTotal;
        }

        let dual = cache.dual_solve_in(&sigma, &mismatch, metric)?;
        dropped += usize::from(model.enrich_primal(&u)? == Enrichment::Dropped);
        dropped += usize::from(model.enrich_dual(&dual)? == Enrichment::Dropped);
        outer += 1;
        if let Estimator::Gram(gram) = &mut estimator {
            *gram = Some(model.residual_gram(cfg.solver_tol)?);
        }

        let t_inner = Instant::now();
        let mut inner = 0;
        loop {
            let c = model.reduced_forward(&sigma)?;
            let reduced_residual = model.reduced_residual_norm(&c);
            let t_est = Instant::now();
            let delta_n = match &mut estimator {
                Estimator::Direct(ws) => model.error_estimator(ws, &sigma, &c)?,
                Estimator::Gram(gram) => gram.as_ref().expect("built after enrichment").error_estimator(&sigma, &c)?,
            };
            time_est += elapsed_ns(t_est);
            let accepted = reduced_residual > threshold && delta_n <= trust;
            observer(&InnerIterate { outer, iter: total_updates, sigma: &sigma, reduced_residual, delta_n, accepted });

            let mut rec = IterationRecord::new(total_updates, StepKind::Inner, elapsed_ns(t0));
            rec.reduced_residual = Some(reduced_residual);
            rec.delta_n = Some(delta_n);
            if !accepted || inner >= cfg.max_inner || total_updates >= cfg.max_total {
                records.push(rec);
                break;
            }
            let d = model.reduced_dual(&sigma, &c)?;
            let s = model.reduced_step_from(c, d);
            if let Some(probe) = probe.as_mut() {
                let full = probe.landweber_update_in(&sigma, meas.u_delta(), metric)?;
                let diff: Vec<f64> = s.direction.iter().zip(&full.update).map(|(a, b)| a - b).collect();
                rec.update_error = Some(cs.partition().l2_norm(&diff));
            }
            records.push(rec);
            sigma = step(&sigma, &s.direction, omega, cfg, total_updates + 1, &mut clamped)?;
            inner += 1;
            total_updates += 1;
        }
        time_inner += elapsed_ns(t_inner);
    };

    let (final_residual, sigma) = match termination {
        Termination::Discrepancy => (records.iter().rev().find_map(|r| r.residual).unwrap_or(0.0), sigma),
        _ => best.expect("at least one iterate is checked"),
    };
    let time = elapsed_ns(t0);
    let totals = RunTotals {
        solves: counts_since(cache.counts(), start_counts),
        forward_solves: 2 * outer,
        check_solves: 1,
        outer_iterations: outer,
        inner_iterations: total_updates,
        dropped_snapshots: dropped,
        time_total_ns: time,
        time_outer_ns: time.saturating_sub(time_inner),
        time_inner_ns: time_inner,
        time_estimator_ns: time_est,
    };
    Ok(RunOutcome {
        sigma,
        trace: RunTrace { records, totals, omega, termination, clamped, final_residual, threshold },
    })
}

/// Misfit of `sigma` against `meas` from a fresh full-order solve.
pub fn verify_discrepancy(cache: &mut ForwardCache, sigma: &ParameterField, meas: &Measurement) -> Result<f64> {
    let u: FeFunction = cache.forward(sigma)?;
    Ok(meas.misfit(&u))
}
