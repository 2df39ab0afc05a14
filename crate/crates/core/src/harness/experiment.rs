use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::{write_grid, write_trace, GridCsv};
use super::phantom::{rasterize_phantom, PhantomSpec};
use crate::error::{invalid, Error, Result};
use crate::fem::{ComponentSystem, Rect};
use crate::forward::ForwardCache;
use crate::inversion::{self, Measurement, Omega, RunOutcome, SolverConfig, Termination};
use crate::mesh::{FeFunction, Grid, ParameterField, Partition};

/// Measurement geometry.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Setting {
    #[default]
    Full,
    Partial {
        region: Rect,
    },
}

impl Setting {
    pub fn name(&self) -> &'static str {
        match self {
            Setting::Full => "full",
            Setting::Partial { .. } => "partial",
        }
    }

    /// Data on the lower half `[0, 1] x [0, 0.5]`.
    pub fn lower_half() -> Self {
        Setting::Partial { region: Rect { x0: 0.0, x1: 1.0, y0: 0.0, y1: 0.5 } }
    }
}

/// Initial parameter of both solvers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StartSpec {
    Constant(f64),
    Values(Vec<f64>),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseDistribution {
    /// I.i.d. uniform on `[-1, 1]` per node before rescaling.
    #[default]
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// `||noise|| / ||u||` in the data norm.
    pub level: f64,
    pub distribution: NoiseDistribution,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { level: 0.01, distribution: NoiseDistribution::Uniform }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Methods {
    pub landweber: bool,
    pub rbl: bool,
}

impl Default for Methods {
    fn default() -> Self {
        Self { landweber: true, rbl: true }
    }
}

/// Complete description of one reconstruction experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Interior nodes per side of the inversion grid.
    pub n: usize,
    /// Subdomains per side.
    pub q: usize,
    pub phantom: PhantomSpec,
    pub sigma_start: StartSpec,
    pub noise: NoiseConfig,
    /// Master seed of the noise generator.
    pub seed: u64,
    pub setting: Setting,
    /// Data are simulated on a grid with `refinement` times as many cells
    /// per side.
    pub refinement: usize,
    pub solver: SolverConfig,
    pub methods: Methods,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 49,
            q: 10,
            phantom: PhantomSpec::reference(),
            sigma_start: StartSpec::Constant(3.0),
            noise: NoiseConfig::default(),
            seed: 0,
            setting: Setting::Full,
            refinement: 2,
            solver: SolverConfig::default(),
            methods: Methods::default(),
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn partition(&self) -> Result<Partition> {
        Partition::new(Grid::new(self.n)?, self.q)
    }

    pub fn start(&self, p: usize) -> Result<ParameterField> {
        match &self.sigma_start {
            StartSpec::Constant(v) => ParameterField::constant(p, *v),
            StartSpec::Values(v) if v.len() == p => ParameterField::new(v.clone()),
            StartSpec::Values(v) => invalid(format!("sigma_start has {} values, expected {p}", v.len())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let partition = self.partition()?;
        self.start(partition.p())?;
        rasterize_phantom(&self.phantom, &partition)?;
        if self.refinement < 2 {
            return invalid(format!("refinement must be at least 2, got {}", self.refinement));
        }
        if !(self.noise.level >= 0.0 && self.noise.level.is_finite()) {
            return invalid(format!("noise level must be finite and nonnegative, got {}", self.noise.level));
        }
        if let Omega::Fixed(w) = self.solver.omega {
            if !(w > 0.0) {
                return invalid(format!("omega must be positive, got {w}"));
            }
        }
        if let Setting::Partial { region } = &self.setting {
            Rect::new(region.x0, region.x1, region.y0, region.y1)?;
        }
        self.solver.validate()
    }
}

/// Exact and noisy data for an experiment.
#[derive(Clone, Debug)]
pub struct Synthesis {
    pub truth: ParameterField,
    /// Refined-grid solution sampled at the inversion grid's nodes.
    pub exact: FeFunction,
    pub measurement: Measurement,
    /// `||exact||` in the data norm.
    pub exact_norm: f64,
}

/// Simulates data for the rasterized phantom on the refined grid, samples it
/// at the inversion nodes and adds uniform noise on the measured nodes,
/// rescaled to `level * ||u||`. The noise level `delta` is the exact norm of
/// the perturbation.
pub fn synthesize_measurement(cfg: &ExperimentConfig, cs: &ComponentSystem) -> Result<Synthesis> {
    let partition = cs.partition();
    if cfg.refinement < 2 {
        return invalid(format!("refinement must be at least 2, got {}", cfg.refinement));
    }
    let truth = rasterize_phantom(&cfg.phantom, partition)?;
    let grid = cs.grid();
    let r = cfg.refinement;
    let fine_partition = Partition::new(Grid::new(r * (grid.n() + 1) - 1)?, partition.q())?;
    let fine = ComponentSystem::assemble(&fine_partition);
    let u_fine = ForwardCache::with_solver(&fine, cfg.solver.solver_tol, cfg.solver.linear_solver).forward(&truth)?;
    let fine_grid = fine.grid();
    let exact: Vec<f64> = (0..grid.num_dofs())
        .map(|d| {
            let (i, j) = grid.dof_node(d);
            u_fine[fine_grid.dof(r * i, r * j).expect("interior nodes map to interior nodes")]
        })
        .collect();

    let (mask, metric) = match &cfg.setting {
        Setting::Full => (None, cs.mass().clone()),
        Setting::Partial { region } => (Some(Measurement::mask_for(cs, region)), cs.region_mass(region)),
    };
    let exact_norm = metric.bilinear(&exact, &exact).max(0.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut noise = vec![0.0; exact.len()];
    match &mask {
        Some(mask) => mask.iter().for_each(|&d| noise[d] = rng.random_range(-1.0..=1.0)),
        None => noise.iter_mut().for_each(|v| *v = rng.random_range(-1.0..=1.0)),
    }
    let raw = metric.bilinear(&noise, &noise).max(0.0).sqrt();
    let scale = if raw > 0.0 { cfg.noise.level * exact_norm / raw } else { 0.0 };
    noise.iter_mut().for_each(|v| *v *= scale);
    let delta = metric.bilinear(&noise, &noise).max(0.0).sqrt();
    let noisy: Vec<f64> = exact.iter().zip(&noise).map(|(u, e)| u + e).collect();

    let measurement = match &cfg.setting {
        Setting::Full => Measurement::full(cs, FeFunction::new(noisy), delta)?,
        Setting::Partial { region } => {
            let values: Vec<f64> = mask.as_ref().expect("partial mask").iter().map(|&d| noisy[d]).collect();
            Measurement::partial(cs, *region, &values, delta)?
        }
    };
    Ok(Synthesis { truth, exact: FeFunction::new(exact), measurement, exact_norm })
}

/// Table-style summary of one solver run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub converged: bool,
    pub termination: Termination,
    pub omega: f64,
    pub total_time_s: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub time_per_outer_s: f64,
    pub time_per_inner_s: f64,
    pub estimator_time_s: f64,
    /// One primal and one dual solve per outer iteration.
    pub forward_solves: usize,
    pub check_solves: usize,
    pub primal_solves: usize,
    pub dual_solves: usize,
    pub dropped_snapshots: usize,
    pub final_residual: f64,
    /// Misfit of the returned iterate from an independent full-order solve.
    pub verified_residual: f64,
    pub threshold: f64,
    /// `||sigma - sigma_true||_{L2}`.
    pub error_vs_truth: f64,
    pub clamped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum ArmReport {
    Completed(ArmSummary),
    Failed { error: String },
}

impl ArmReport {
    pub fn summary(&self) -> Option<&ArmSummary> {
        match self {
            ArmReport::Completed(s) => Some(s),
            ArmReport::Failed { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub q: usize,
    pub p: usize,
    pub setting: String,
    pub relative_noise: f64,
    pub delta: f64,
    pub seed: u64,
    pub landweber: Option<ArmReport>,
    pub rbl: Option<ArmReport>,
    /// `||sigma_RBL - sigma_LW||_{L2}`.
    pub rbl_lw_distance: Option<f64>,
    /// Landweber wall time over reduced wall time.
    pub speedup: Option<f64>,
}

/// In-memory results of [`run_experiment`].
#[derive(Debug)]
pub struct ExperimentReport {
    pub summary: Summary,
    pub synthesis: Synthesis,
    pub landweber: Option<std::result::Result<RunOutcome, Error>>,
    pub rbl: Option<std::result::Result<RunOutcome, Error>>,
}

impl ExperimentReport {
    /// First solver error, if an arm failed.
    pub fn failure(&self) -> Option<&Error> {
        [&self.landweber, &self.rbl].into_iter().flatten().find_map(|r| r.as_ref().err())
    }
}

fn summarize(
    outcome: &RunOutcome,
    cs: &ComponentSystem,
    synth: &Synthesis,
    solver: &SolverConfig,
) -> Result<ArmSummary> {
    let t = &outcome.trace;
    let totals = &t.totals;
    let secs = |ns: u64| ns as f64 * 1e-9;
    let per = |ns: u64, k: usize| if k == 0 { 0.0 } else { secs(ns) / k as f64 };
    let mut check = ForwardCache::with_solver(cs, solver.solver_tol, solver.linear_solver);
    let verified_residual = inversion::verify_discrepancy(&mut check, &outcome.sigma, &synth.measurement)?;
    Ok(ArmSummary {
        converged: outcome.converged(),
        termination: t.termination,
        omega: t.omega,
        total_time_s: secs(totals.time_total_ns),
        outer_iterations: totals.outer_iterations,
        inner_iterations: totals.inner_iterations,
        time_per_outer_s: per(totals.time_outer_ns, totals.outer_iterations),
        time_per_inner_s: per(totals.time_inner_ns, totals.inner_iterations),
        estimator_time_s: secs(totals.time_estimator_ns),
        forward_solves: totals.forward_solves,
        check_solves: totals.check_solves,
        primal_solves: totals.solves.primal,
        dual_solves: totals.solves.dual,
        dropped_snapshots: totals.dropped_snapshots,
        final_residual: t.final_residual,
        verified_residual,
        threshold: t.threshold,
        error_vs_truth: cs.partition().l2_distance(&outcome.sigma, &synth.truth),
        clamped: t.clamped,
    })
}

fn sigma_grid(sigma: &[f64], q: usize, setting: &str) -> GridCsv {
    GridCsv { side: q, setting: setting.into(), values: sigma.to_vec() }
}

/// Synthesizes data, runs the selected solvers one after the other and,
/// when `out_dir` is set, writes grids, traces and `summary.json` there.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let partition = cfg.partition()?;
    let cs = ComponentSystem::assemble(&partition);
    let synth = synthesize_measurement(cfg, &cs)?;
    let start = cfg.start(cs.p())?;
    let meas = &synth.measurement;

    let run = |solver: fn(&mut ForwardCache, &ParameterField, &Measurement, &SolverConfig) -> Result<RunOutcome>| {
        let mut cache = ForwardCache::with_solver(&cs, cfg.solver.solver_tol, cfg.solver.linear_solver);
        solver(&mut cache, &start, meas, &cfg.solver)
    };
    let landweber = cfg.methods.landweber.then(|| run(inversion::landweber));
    let rbl = cfg.methods.rbl.then(|| run(inversion::rbl));

    let arm = |r: &Option<std::result::Result<RunOutcome, Error>>| -> Result<Option<ArmReport>> {
        Ok(match r {
            None => None,
            Some(Ok(o)) => Some(ArmReport::Completed(summarize(o, &cs, &synth, &cfg.solver)?)),
            Some(Err(e)) => Some(ArmReport::Failed { error: e.to_string() }),
        })
    };
    let (lw_arm, rbl_arm) = (arm(&landweber)?, arm(&rbl)?);
    let (rbl_lw_distance, speedup) = match (&landweber, &rbl) {
        (Some(Ok(a)), Some(Ok(b))) => {
            let ratio = a.trace.totals.time_total_ns as f64 / b.trace.totals.time_total_ns.max(1) as f64;
            (Some(partition.l2_distance(&b.sigma, &a.sigma)), Some(ratio))
        }
        _ => (None, None),
    };
    let summary = Summary {
        n: cfg.n,
        q: cfg.q,
        p: cs.p(),
        setting: cfg.setting.name().into(),
        relative_noise: cfg.noise.level,
        delta: meas.delta(),
        seed: cfg.seed,
        landweber: lw_arm,
        rbl: rbl_arm,
        rbl_lw_distance,
        speedup,
    };
    let report = ExperimentReport { summary, synthesis: synth, landweber, rbl };
    if let Some(dir) = &cfg.out_dir {
        write_report(dir, cfg, &report)?;
    }
    Ok(report)
}

fn write_report(dir: &Path, cfg: &ExperimentConfig, report: &ExperimentReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    let setting = cfg.setting.name();
    let synth = &report.synthesis;
    write_grid(&dir.join("sigma_true.csv"), &sigma_grid(&synth.truth, cfg.q, setting))?;
    write_grid(
        &dir.join("u_delta.csv"),
        &GridCsv { side: cfg.n, setting: setting.into(), values: synth.measurement.u_delta().to_vec() },
    )?;
    for (name, arm) in [("lw", &report.landweber), ("rbl", &report.rbl)] {
        if let Some(Ok(outcome)) = arm {
            write_grid(&dir.join(format!("sigma_{name}.csv")), &sigma_grid(&outcome.sigma, cfg.q, setting))?;
            write_trace(&dir.join(format!("trace_{name}.csv")), &outcome.trace.records)?;
        }
    }
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&report.summary)?)?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub level: f64,
    pub delta: f64,
    /// `||sigma_RBL - sigma_true||_{L2}`; absent when the run failed.
    pub error: Option<f64>,
    pub converged: bool,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
}

/// Reduced-solver reconstructions over strictly decreasing noise levels.
/// The noise pattern is the same at every level; only its scale changes.
pub fn noise_sweep(cfg: &ExperimentConfig, levels: &[f64]) -> Result<SweepReport> {
    if levels.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return invalid("noise levels must be positive");
    }
    if levels.windows(2).any(|w| w[1] >= w[0]) {
        return invalid("noise levels must be strictly decreasing");
    }
    let mut report = SweepReport::default();
    for &level in levels {
        let mut level_cfg = cfg.clone();
        level_cfg.noise.level = level;
        level_cfg.methods = Methods { landweber: false, rbl: true };
        level_cfg.out_dir = cfg.out_dir.as_ref().map(|d| d.join(format!("level_{level}")));
        let run = run_experiment(&level_cfg)?;
        let entry = match &run.rbl {
            Some(Ok(o)) => SweepEntry {
                level,
                delta: run.summary.delta,
                error: Some(level_cfg.partition()?.l2_distance(&o.sigma, &run.synthesis.truth)),
                converged: o.converged(),
                outer_iterations: o.trace.totals.outer_iterations,
                inner_iterations: o.trace.totals.inner_iterations,
                failure: None,
            },
            Some(Err(e)) => SweepEntry {
                level,
                delta: run.summary.delta,
                error: None,
                converged: false,
                outer_iterations: 0,
                inner_iterations: 0,
                failure: Some(e.to_string()),
            },
            None => unreachable!("the reduced arm is always selected"),
        };
        report.entries.push(entry);
    }
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("sweep.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}
