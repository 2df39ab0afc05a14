use proptest::prelude::*;
use rbl_core::harness::ExperimentConfig;
use rbl_core::{ComponentSystem, EstimatorWorkspace, ForwardCache, LinearSolver, ParameterField, ReducedModel};

/// Grids with a compatible partition: (n, q) with q dividing n + 1.
fn grid_and_partition() -> impl Strategy<Value = (usize, usize)> {
    prop_oneof![Just((4, 5)), Just((9, 2)), Just((9, 5)), Just((11, 3)), Just((11, 4))]
}

fn system(n: usize, q: usize) -> ComponentSystem {
    ComponentSystem::assemble(&ExperimentConfig { n, q, ..Default::default() }.partition().unwrap())
}

fn case() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>, Vec<f64>)> {
    grid_and_partition().prop_flat_map(|(n, q)| {
        let p = q * q;
        (
            Just(n),
            Just(q),
            prop::collection::vec(0.2f64..8.0, p),
            prop::collection::vec(-1.0f64..1.0, p),
            prop::collection::vec(-1.0f64..1.0, n * n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn adjoint_pairs_with_jacobian((n, q, sigma, kappa, l) in case()) {
        let cs = system(n, q);
        let sigma = ParameterField::new(sigma).unwrap();
        let mut cache = ForwardCache::new(&cs);
        let u = cache.forward(&sigma).unwrap();
        let lhs = cs.l2_inner(&cache.jacobian_apply(&sigma, &kappa, &u).unwrap(), &l).unwrap();
        let adj = cache.adjoint_apply(&sigma, &l, &u).unwrap();
        let rhs: f64 = kappa.iter().zip(&adj).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
    }

    #[test]
    fn solutions_are_negative_and_backends_agree((n, q, sigma, _k, _l) in case()) {
        let cs = system(n, q);
        let sigma = ParameterField::new(sigma).unwrap();
        let u = ForwardCache::new(&cs).forward(&sigma).unwrap();
        prop_assert!(u.iter().all(|v| *v < 0.0));
        let direct = ForwardCache::with_solver(&cs, 1e-12, LinearSolver::Cholesky).forward(&sigma).unwrap();
        let diff: Vec<f64> = u.iter().zip(direct.iter()).map(|(a, b)| a - b).collect();
        prop_assert!(cs.l2_norm(&rbl_core::FeFunction::new(diff)) <= 1e-9 * cs.l2_norm(&u));
    }

    #[test]
    fn estimator_bounds_the_reduced_error(
        (n, q, sigma, _k, _l) in case(),
        snapshots in prop::collection::vec(prop::collection::vec(0.5f64..6.0, 25), 1..4),
    ) {
        let cs = system(n, q);
        let p = cs.p();
        let mut cache = ForwardCache::new(&cs);
        let zeros = vec![0.0; cs.num_dofs()];
        let mut model = ReducedModel::new(&cs, cs.mass(), &zeros).unwrap();
        for s in &snapshots {
            let s = ParameterField::new(s[..p].to_vec()).unwrap();
            model.enrich_primal(&cache.forward(&s).unwrap()).unwrap();
        }
        let sigma = ParameterField::new(sigma).unwrap();
        let c = model.reduced_forward(&sigma).unwrap();
        let bound = model.error_estimator(&mut EstimatorWorkspace::new(&cs, 1e-12), &sigma, &c).unwrap();
        let full = cache.forward(&sigma).unwrap();
        let reduced = model.reconstruct_primal(c.as_slice());
        let diff: Vec<f64> = full.iter().zip(reduced.iter()).map(|(a, b)| a - b).collect();
        let err = cs.l2_inner(&diff, &diff).unwrap().sqrt();
        // round-off allowance far below any meaningful error level
        prop_assert!(bound + 1e-12 * cs.l2_norm(&full) >= err, "bound {bound} < error {err}");
    }
}
