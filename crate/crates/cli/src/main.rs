use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rbl_core::harness::io::{write_grid, GridCsv};
use rbl_core::harness::{
    noise_sweep, rasterize_phantom, run_experiment, synthesize_measurement, ExperimentConfig, Methods, PhantomSpec,
    Setting, StartSpec, Summary,
};
use rbl_core::inversion::EstimatorMode;
use rbl_core::{ClampPolicy, ComponentSystem, Error, ForwardCache, LinearSolver, Omega, Rect};
use serde_json::json;

const EXIT_INVALID: u8 = 2;
const EXIT_SOLVER: u8 = 3;

/// Landweber and reduced basis Landweber reconstruction of a piecewise
/// constant conductivity from (noisy) solutions of div(sigma grad u) = 1.
#[derive(Parser, Debug)]
#[command(name = "rbl", version)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Rasterize the phantom onto the subdomain partition.
    Phantom(Common),
    /// Solve the forward problem for the phantom and synthesize noisy data.
    Forward(Common),
    /// Full-order Landweber reconstruction.
    Landweber(Common),
    /// Reduced basis Landweber reconstruction.
    Rbl(Common),
    /// Run both solvers on the same data and report the comparison.
    Compare(Common),
    /// Reduced basis reconstructions over decreasing relative noise levels.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Strictly decreasing relative noise levels.
        #[arg(long, value_delimiter = ',', num_args = 0.., default_values_t = [0.04, 0.02, 0.01])]
        levels: Vec<f64>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SettingArg {
    Full,
    Partial,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SolverArg {
    Cg,
    Cholesky,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ClampArg {
    Abort,
    Clamp,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EstimatorArg {
    Direct,
    OfflineOnline,
}

/// Flags override the matching fields of `--config` (or of the defaults).
#[derive(Args, Debug, Default)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed for the measurement noise.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for grids, traces and summaries.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Interior nodes per side.
    #[arg(long)]
    n: Option<usize>,
    /// Subdomains per side.
    #[arg(long)]
    q: Option<usize>,
    /// JSON phantom specification.
    #[arg(long)]
    phantom: Option<PathBuf>,
    /// Constant starting conductivity.
    #[arg(long)]
    sigma_start: Option<f64>,
    /// Relative noise level, e.g. 0.01 for 1%.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, value_enum)]
    setting: Option<SettingArg>,
    /// Measurement rectangle `x0,x1,y0,y1`; implies the partial setting.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    region: Option<Vec<f64>>,
    /// Refinement factor of the data-generation grid.
    #[arg(long)]
    refinement: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    /// Damping parameter: a positive number or `auto`.
    #[arg(long, allow_hyphen_values = true)]
    omega: Option<String>,
    #[arg(long)]
    max_outer: Option<usize>,
    #[arg(long)]
    max_inner: Option<usize>,
    #[arg(long)]
    max_total: Option<usize>,
    /// Relative residual tolerance of the iterative linear solver.
    #[arg(long)]
    solver_tol: Option<f64>,
    #[arg(long, value_enum)]
    linear_solver: Option<SolverArg>,
    #[arg(long)]
    positivity_floor: Option<f64>,
    #[arg(long, value_enum)]
    clamp_policy: Option<ClampArg>,
    #[arg(long, value_enum)]
    estimator: Option<EstimatorArg>,
    /// Record the reduced-vs-full update error at every inner iteration.
    #[arg(long)]
    probe_update_error: bool,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(path) = &self.phantom {
            cfg.phantom = serde_json::from_str::<PhantomSpec>(&fs::read_to_string(path)?)
                .map_err(|e| Error::InvalidArgument(format!("phantom: {e}")))?;
        }
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.n, self.n);
        set(&mut cfg.q, self.q);
        set(&mut cfg.noise.level, self.noise);
        set(&mut cfg.refinement, self.refinement);
        if let Some(v) = self.sigma_start {
            cfg.sigma_start = StartSpec::Constant(v);
        }
        if self.out.is_some() {
            cfg.out_dir = self.out.clone();
        }
        match (self.setting, &self.region) {
            (Some(SettingArg::Full), Some(_)) => {
                return Err(Error::InvalidArgument("--region requires the partial setting".into()))
            }
            (_, Some(r)) => cfg.setting = Setting::Partial { region: Rect::new(r[0], r[1], r[2], r[3])? },
            (Some(SettingArg::Partial), None) => {
                if !matches!(cfg.setting, Setting::Partial { .. }) {
                    cfg.setting = Setting::lower_half();
                }
            }
            (Some(SettingArg::Full), None) => cfg.setting = Setting::Full,
            (None, None) => {}
        }

        let s = &mut cfg.solver;
        set(&mut s.tau, self.tau);
        set(&mut s.max_outer, self.max_outer);
        set(&mut s.max_inner, self.max_inner);
        set(&mut s.max_total, self.max_total);
        set(&mut s.solver_tol, self.solver_tol);
        set(&mut s.positivity_floor, self.positivity_floor);
        if let Some(w) = &self.omega {
            s.omega = parse_omega(w)?;
        }
        if let Some(k) = self.linear_solver {
            s.linear_solver = match k {
                SolverArg::Cg => LinearSolver::Cg,
                SolverArg::Cholesky => LinearSolver::Cholesky,
            };
        }
        if let Some(c) = self.clamp_policy {
            s.clamp_policy = match c {
                ClampArg::Abort => ClampPolicy::Abort,
                ClampArg::Clamp => ClampPolicy::Clamp,
            };
        }
        if let Some(e) = self.estimator {
            s.estimator = match e {
                EstimatorArg::Direct => EstimatorMode::Direct,
                EstimatorArg::OfflineOnline => EstimatorMode::OfflineOnline,
            };
        }
        s.probe_update_error |= self.probe_update_error;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set<T>(field: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *field = v;
    }
}

fn parse_omega(text: &str) -> Result<Omega, Error> {
    if text == "auto" {
        return Ok(Omega::Auto);
    }
    match text.parse::<f64>() {
        Ok(w) if w > 0.0 && w.is_finite() => Ok(Omega::Fixed(w)),
        _ => Err(Error::InvalidArgument(format!("omega must be a positive number or \"auto\", got {text:?}"))),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_)
        | Error::InvalidPhantom(_)
        | Error::DomainViolation { .. }
        | Error::Format(_)
        | Error::Io(_) => EXIT_INVALID,
        _ => EXIT_SOLVER,
    }
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<(), Error> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn phantom(cfg: &ExperimentConfig) -> Result<u8, Error> {
    let partition = cfg.partition()?;
    let sigma = rasterize_phantom(&cfg.phantom, &partition)?;
    let grid = GridCsv { side: cfg.q, setting: cfg.setting.name().into(), values: sigma.to_vec() };
    match &cfg.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_grid(&dir.join("sigma_true.csv"), &grid)?;
            write_json(dir, "phantom.json", &cfg.phantom)?;
        }
        None => print!("{}", rbl_core::harness::io::grid_to_string(&grid)?),
    }
    Ok(0)
}

fn forward(cfg: &ExperimentConfig) -> Result<u8, Error> {
    let cs = ComponentSystem::assemble(&cfg.partition()?);
    let synth = synthesize_measurement(cfg, &cs)?;
    let mut cache = ForwardCache::with_solver(&cs, cfg.solver.solver_tol, cfg.solver.linear_solver);
    let u = cache.forward(&synth.truth)?;
    let report = json!({
        "n": cfg.n,
        "q": cfg.q,
        "setting": cfg.setting.name(),
        "seed": cfg.seed,
        "relative_noise": cfg.noise.level,
        "delta": synth.measurement.delta(),
        "exact_norm": synth.exact_norm,
        "forward_l2_norm": cs.l2_norm(&u),
    });
    if let Some(dir) = &cfg.out_dir {
        let nodal =
            |values: &[f64]| GridCsv { side: cfg.n, setting: cfg.setting.name().into(), values: values.to_vec() };
        fs::create_dir_all(dir)?;
        write_grid(&dir.join("u.csv"), &nodal(&u))?;
        write_grid(&dir.join("u_exact.csv"), &nodal(&synth.exact))?;
        write_grid(&dir.join("u_delta.csv"), &nodal(synth.measurement.u_delta()))?;
        write_json(dir, "measurement.json", &report)?;
        write_json(dir, "config.json", cfg)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(0)
}

fn experiment(mut cfg: ExperimentConfig, methods: Methods) -> Result<u8, Error> {
    cfg.methods = methods;
    let report = run_experiment(&cfg)?;
    println!("{}", serde_json::to_string_pretty(&report.summary)?);
    warn_unconverged(&report.summary);
    Ok(match report.failure() {
        Some(err) => {
            eprintln!("error: {err}");
            EXIT_SOLVER
        }
        None => 0,
    })
}

fn warn_unconverged(summary: &Summary) {
    for (name, arm) in [("landweber", &summary.landweber), ("rbl", &summary.rbl)] {
        if let Some(s) = arm.as_ref().and_then(|a| a.summary()) {
            if !s.converged {
                eprintln!("warning: {name} stopped by {:?} before meeting the discrepancy", s.termination);
            }
        }
    }
}

fn sweep(cfg: &ExperimentConfig, levels: &[f64]) -> Result<u8, Error> {
    let report = noise_sweep(cfg, levels)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    let failed = report.entries.iter().filter(|e| e.failure.is_some()).count();
    Ok(if failed > 0 { EXIT_SOLVER } else { 0 })
}

fn run(verb: Verb) -> Result<u8, Error> {
    let solvers = |landweber, rbl| Methods { landweber, rbl };
    match verb {
        Verb::Phantom(c) => phantom(&c.resolve()?),
        Verb::Forward(c) => forward(&c.resolve()?),
        Verb::Landweber(c) => experiment(c.resolve()?, solvers(true, false)),
        Verb::Rbl(c) => experiment(c.resolve()?, solvers(false, true)),
        Verb::Compare(c) => experiment(c.resolve()?, solvers(true, true)),
        Verb::Sweep { common, levels } => sweep(&common.resolve()?, &levels),
    }
}

fn main() -> ExitCode {
    // clap already exits with 2 on malformed command lines
    let cli = Cli::parse();
    match run(cli.verb) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
