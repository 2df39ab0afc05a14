use rbl_core::harness::io::{read_grid, read_trace};
use rbl_core::harness::{
    noise_sweep, run_experiment, synthesize_measurement, ArmReport, ExperimentConfig, Inclusion, Methods, PhantomSpec,
    Setting, Shape, Summary,
};
use rbl_core::inversion::StepKind;
use rbl_core::{ComponentSystem, LinearSolver};

fn toy() -> ExperimentConfig {
    let mut phantom = PhantomSpec::uniform(3.0);
    phantom.inclusions.push(Inclusion { shape: Shape::Disk { cx: 0.3, cy: 0.6, r: 0.25 }, contrast: 1.5 });
    ExperimentConfig { n: 9, q: 5, phantom, seed: 21, ..Default::default() }
}

#[test]
fn report_matches_written_files_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { out_dir: Some(dir.path().to_path_buf()), ..toy() };
    let report = run_experiment(&cfg).unwrap();
    assert!(report.failure().is_none());

    let on_disk: Summary =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(on_disk, report.summary);

    let (lw, red) = (report.landweber.unwrap().unwrap(), report.rbl.unwrap().unwrap());
    let s = &report.summary;
    let lw_sum = s.landweber.as_ref().and_then(ArmReport::summary).unwrap();
    let red_sum = s.rbl.as_ref().and_then(ArmReport::summary).unwrap();
    // summary counts are the trace totals
    assert_eq!(lw_sum.outer_iterations, lw.trace.totals.outer_iterations);
    assert_eq!(red_sum.inner_iterations, red.trace.totals.inner_iterations);
    assert_eq!(red_sum.primal_solves, red.trace.totals.solves.primal);
    let ratio = lw.trace.totals.time_total_ns as f64 / red.trace.totals.time_total_ns as f64;
    assert!((s.speedup.unwrap() - ratio).abs() <= 1e-12 * ratio);

    assert_eq!(read_trace(&dir.path().join("trace_rbl.csv")).unwrap(), red.trace.records);
    assert_eq!(read_trace(&dir.path().join("trace_lw.csv")).unwrap(), lw.trace.records);
    assert_eq!(read_grid(&dir.path().join("sigma_rbl.csv")).unwrap().values, red.sigma.to_vec());
    let kinds = red.trace.records.iter().filter(|r| r.kind == StepKind::Outer).count();
    assert_eq!(kinds, red.trace.totals.outer_iterations + 1);
}

#[test]
fn backends_reach_the_same_reconstruction() {
    let cg = run_experiment(&toy()).unwrap();
    let mut cfg = toy();
    cfg.solver.linear_solver = LinearSolver::Cholesky;
    let direct = run_experiment(&cfg).unwrap();
    let partition = cfg.partition().unwrap();
    for (a, b) in [(&cg.rbl, &direct.rbl), (&cg.landweber, &direct.landweber)] {
        let (a, b) = (a.as_ref().unwrap().as_ref().unwrap(), b.as_ref().unwrap().as_ref().unwrap());
        assert!(partition.l2_distance(&a.sigma, &b.sigma) <= 1e-8);
    }
}

#[test]
fn single_level_sweep_equals_reduced_arm() {
    let cfg = toy();
    let sweep = noise_sweep(&cfg, &[cfg.noise.level]).unwrap();
    let run =
        run_experiment(&ExperimentConfig { methods: Methods { landweber: false, rbl: true }, ..cfg.clone() }).unwrap();
    let red = run.summary.rbl.as_ref().and_then(ArmReport::summary).unwrap();
    let entry = &sweep.entries[0];
    assert_eq!(entry.error, Some(red.error_vs_truth));
    assert_eq!(entry.inner_iterations, red.inner_iterations);
    assert!(noise_sweep(&cfg, &[]).unwrap().entries.is_empty());
    assert!(noise_sweep(&cfg, &[0.01, 0.02]).is_err());
}

#[test]
fn noise_scales_to_the_requested_level() {
    for setting in [Setting::Full, Setting::lower_half()] {
        let cfg = ExperimentConfig {
            setting,
            noise: rbl_core::harness::NoiseConfig { level: 0.03, ..Default::default() },
            ..toy()
        };
        let cs = ComponentSystem::assemble(&cfg.partition().unwrap());
        let synth = synthesize_measurement(&cfg, &cs).unwrap();
        let rel = synth.measurement.delta() / synth.exact_norm;
        assert!((rel - 0.03).abs() < 1e-12, "{rel}");
        let again = synthesize_measurement(&cfg, &cs).unwrap();
        assert_eq!(again.measurement.u_delta(), synth.measurement.u_delta());
    }
}

#[test]
fn noise_free_data_do_not_crash() {
    let mut cfg = toy();
    cfg.noise.level = 0.0;
    cfg.solver.max_total = 200;
    cfg.solver.max_outer = 5;
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.summary.delta, 0.0);
    for arm in [&report.summary.landweber, &report.summary.rbl] {
        let s = arm.as_ref().and_then(ArmReport::summary).unwrap();
        // with delta = 0 the discrepancy cannot be met; the run stops at a cap
        assert!(!s.converged);
        assert!(s.final_residual.is_finite());
    }
}

#[test]
fn invalid_configs_are_rejected_before_running() {
    let bad = [
        ExperimentConfig { q: 4, ..toy() },
        ExperimentConfig { refinement: 1, ..toy() },
        ExperimentConfig { phantom: PhantomSpec::uniform(-1.0), ..toy() },
        ExperimentConfig { sigma_start: rbl_core::harness::StartSpec::Values(vec![3.0; 3]), ..toy() },
    ];
    for cfg in bad {
        assert!(run_experiment(&cfg).is_err());
    }
    assert!(ExperimentConfig::from_json(r#"{"n": 9, "surprise": true}"#).is_err());
    let parsed = ExperimentConfig::from_json(r#"{"n": 19, "q": 5, "solver": {"omega": 2.5}}"#).unwrap();
    assert_eq!((parsed.n, parsed.q), (19, 5));
}
