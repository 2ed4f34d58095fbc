use std::sync::Arc;

use bayesoed::assimilation::{InverseProblem, SolveOptions};
use bayesoed::models::{
    ad_create, bilaplacian_prior_build, toy_linear_create, GaussianMeasure,
    PointObservationOperator, PriorGrid, SimulationModel, TimeGrid, VelocitySpec,
};
use bayesoed::numerics::{finite_difference_gradient, hutchinson_trace, SymMatrix};
use bayesoed::oed::{
    weighted_precision_binary, weighted_precision_relaxed, Criterion, CriterionEvaluator,
    CriterionKind, DesignVector, WeightedNoiseModel,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn spd(n: usize, seed: u64) -> SymMatrix {
    let mut rng = bayesoed::Rng::seed_from_u64(seed);
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    SymMatrix::new(&m * m.transpose() + DMatrix::identity(n, n) * 0.1).unwrap()
}

fn toy(seed: u64) -> InverseProblem {
    let mut ip = InverseProblem::with_components(
        Arc::new(toy_linear_create(5, 0.1, seed).unwrap()),
        PointObservationOperator::identity(5),
        GaussianMeasure::isotropic(5, 0.0, 1.0).unwrap(),
        WeightedNoiseModel::all_active(GaussianMeasure::isotropic(5, 0.0, 0.01).unwrap()),
        TimeGrid::new(0.0, 0.1, 3).unwrap(),
    )
    .unwrap();
    let mut rng = bayesoed::Rng::seed_from_u64(seed ^ 0xabc);
    for k in 1..=3 {
        let y = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        ip.register_observation(0.1 * k as f64, y).unwrap();
    }
    ip
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn relaxed_and_binary_weighting_agree(n in 1usize..10, seed in any::<u64>(), bits in any::<u64>()) {
        let r = spd(n, seed);
        let d = DesignVector::from_index(bits & ((1 << n) - 1), n);
        let a = weighted_precision_binary(&r, &d).unwrap();
        let b = weighted_precision_relaxed(&r, &d).unwrap();
        prop_assert!((a.as_matrix() - b.as_matrix()).norm() <= 1e-10 * a.as_matrix().norm().max(1.0));
    }

    #[test]
    fn adjoint_gradient_matches_differences(seed in 0u64..1000, scale in 0.1f64..3.0) {
        let ip = toy(seed);
        let mut rng = bayesoed::Rng::seed_from_u64(seed);
        let theta = DVector::from_fn(5, |_, _| scale * rng.random_range(-1.0..1.0));
        let g = ip.fourdvar_gradient(&theta).unwrap();
        let fd = finite_difference_gradient(|x| ip.fourdvar_objective(x).unwrap(), &theta, 1e-5);
        prop_assert!((&g - &fd).norm() <= 1e-5 * g.norm().max(1.0));
    }

    #[test]
    fn map_is_stationary_and_matches_closed_form(seed in 0u64..1000) {
        let ip = toy(seed);
        let exact = ip.closed_form_posterior().unwrap();
        let map = ip.solve_inverse_problem(&SolveOptions { grad_tol: 1e-10, ..Default::default() }).unwrap();
        let e = &exact.map_point.values;
        prop_assert!((&map.map_point.values - e).norm() <= 1e-7 * e.norm().max(1.0));
        prop_assert!(ip.fourdvar_gradient(e).unwrap().norm() <= 1e-8 * e.norm().max(1.0));
    }

    #[test]
    fn hutchinson_is_reproducible(seed in any::<u64>()) {
        let d: Vec<f64> = (1..=6).map(f64::from).collect();
        let apply = |v: &DVector<f64>| DVector::from_fn(6, |i, _| d[i] * v[i]);
        let a = hutchinson_trace(apply, 6, 3, &mut bayesoed::Rng::seed_from_u64(seed));
        let b = hutchinson_trace(apply, 6, 3, &mut bayesoed::Rng::seed_from_u64(seed));
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn advection_diffusion_oed_pipeline() {
    let model = ad_create(10, 10, 0.02, 0.02, VelocitySpec::Recirculating { magnitude: 1.0 }).unwrap();
    let grid = model.grid();
    let n = grid.len();
    let prior = bilaplacian_prior_build(PriorGrid::Plane { nx: 10, ny: 10 }, 0.5, 1.0, DVector::zeros(n)).unwrap();
    let points = [(0.1, 0.1), (0.9, 0.2), (0.5, 0.9), (0.15, 0.7), (0.85, 0.5)];
    let obs = PointObservationOperator::bilinear(grid, &points).unwrap();
    let noise = GaussianMeasure::isotropic(points.len(), 0.0, 1e-4).unwrap();
    let mut ip = InverseProblem::with_components(
        Arc::new(model.clone()),
        obs,
        prior,
        WeightedNoiseModel::all_active(noise),
        TimeGrid::new(0.0, 0.02, 10).unwrap(),
    )
    .unwrap();
    for k in [5, 10] {
        ip.register_observation(0.02 * k as f64, DVector::zeros(points.len())).unwrap();
    }

    let exact = ip.closed_form_posterior().unwrap().covariance.unwrap();
    let assembled = ip.posterior_covariance().unwrap();
    let scale = exact.as_matrix().amax();
    assert!((exact.as_matrix() - assembled.as_matrix()).amax() <= 1e-8 * scale);

    let a = CriterionEvaluator::new(&Criterion::new(CriterionKind::APosteriorGoal), &ip).unwrap();
    let full = a.value(&DesignVector::ones(points.len())).unwrap();
    assert!((full - exact.as_matrix().trace()).abs() <= 1e-9 * full);
    let none = a.value(&DesignVector::zeros(points.len())).unwrap();
    assert!(none > full);

    let u0 = DVector::from_element(n, 1.0);
    let x1 = model.propagate(&u0);
    assert!((model.total_mass(&x1) - model.total_mass(&u0)).abs() <= 1e-10 * model.total_mass(&u0));
}
