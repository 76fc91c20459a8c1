mod common;

use std::sync::{Arc, OnceLock};

use common::*;
use linearize_core::dynamics::{
    fundamental_matrix, integrate_flow, separation_envelope, transition, EnvelopeKind, Flow, SystemSpec,
    TransitionOperator,
};
use linearize_core::linalg::operator_norm;
use linearize_core::trichotomy::{
    certify_trichotomy, check_projection_algebra, green_g, green_g_limit, green_gtilde, recheck_certificate,
    reduce_to_dichotomy, CertificationGrid, ProjectionPair, Side, SplitProjections,
};
use linearize_core::verify::{check_conjugacy, fit_holder, ConjugacyCheckConfig, HolderConfig, MapDirection};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

const TOL: f64 = 1e-11;

fn planar() -> SystemSpec {
    SystemSpec::linear(
        2,
        Arc::new(|t: f64| DMatrix::from_row_slice(2, 2, &[-0.5, 1.0 + 0.3 * t.sin(), -1.0, -0.2])),
    )
    .unwrap()
}

fn planar_op() -> &'static TransitionOperator {
    static OP: OnceLock<TransitionOperator> = OnceLock::new();
    OP.get_or_init(|| fundamental_matrix(&planar(), 0.0, (-6.0, 6.0), TOL).unwrap())
}

fn cosh_op() -> &'static Arc<TransitionOperator> {
    static OP: OnceLock<Arc<TransitionOperator>> = OnceLock::new();
    OP.get_or_init(|| operator(&example_5_1(0.0)))
}

/// Decoupled stable/unstable pair with `P = I − Q`.
fn saddle_op() -> &'static TransitionOperator {
    static OP: OnceLock<TransitionOperator> = OnceLock::new();
    OP.get_or_init(|| {
        let sys = SystemSpec::linear(
            2,
            Arc::new(|t: f64| DMatrix::from_row_slice(2, 2, &[-1.0 + 0.3 * t.cos(), 0.0, 0.0, 1.2])),
        )
        .unwrap();
        fundamental_matrix(&sys, 0.0, (-8.0, 8.0), TOL).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transition_cocycle(t in -6.0..6.0f64, s in -6.0..6.0f64, r in -6.0..6.0f64) {
        let op = planar_op();
        let lhs = transition(op, t, s).unwrap() * transition(op, s, r).unwrap();
        let rhs = transition(op, t, r).unwrap();
        let scale = operator_norm(&rhs).max(1.0);
        prop_assert!(operator_norm(&(lhs - &rhs)) <= 10.0 * TOL * scale);
    }

    #[test]
    fn linear_flow_matches_transition(t0 in -5.0..5.0f64, t1 in -5.0..5.0f64, a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let x0 = DVector::from_vec(vec![a, b]);
        let traj = integrate_flow(&planar(), Flow::Linear, t0, &x0, t1, TOL).unwrap();
        let expected = transition(planar_op(), t1, t0).unwrap() * &x0;
        prop_assert!((traj.terminal_state() - &expected).norm() <= 10.0 * TOL * expected.norm().max(1.0));
    }

    #[test]
    fn gtilde_equals_g_for_consistent_split(t in -8.0..8.0f64, s in -8.0..8.0f64) {
        prop_assume!((t - s).abs() > 1e-9);
        let op = cosh_op();
        let split = SplitProjections::from_blocks([0, 1, 0, 0]).unwrap();
        let g = green_g(op, &identity_pair(), t, s).unwrap();
        let gt = green_gtilde(op, &split, t, s).unwrap();
        prop_assert!((g - gt).amax() <= 1e-12);
    }

    #[test]
    fn kernel_jump_is_identity(t in -6.0..6.0f64, p_block in 0usize..2, q_block in 0usize..2) {
        // P and Q diagonal in the same basis, so they commute.
        let op = planar_op();
        let p = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, p_block as f64]));
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![q_block as f64, 1.0]));
        let pair = ProjectionPair::new(p, q).unwrap();
        let jump = green_g_limit(op, &pair, t, Side::Below).unwrap() - green_g_limit(op, &pair, t, Side::Above).unwrap();
        prop_assert!((jump - DMatrix::identity(2, 2)).amax() <= 1e-10);
    }

    #[test]
    fn dichotomy_reduction_is_exact(t in -8.0..8.0f64, s in -8.0..8.0f64) {
        prop_assume!((t - s).abs() > 1e-9);
        let op = saddle_op();
        let p = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let pair = ProjectionPair::new(p.clone(), DMatrix::identity(2, 2) - p).unwrap();
        let kernel = reduce_to_dichotomy(&pair).unwrap();
        let diff = green_g(op, &pair, t, s).unwrap() - kernel.eval(op, t, s).unwrap();
        prop_assert!(diff.amax() <= 1e-10);
    }

    #[test]
    fn conjugated_projections_satisfy_the_algebra(
        entries in proptest::collection::vec(-1.0..1.0f64, 9),
        p_diag in proptest::collection::vec(0usize..2, 3),
        q_diag in proptest::collection::vec(0usize..2, 3),
    ) {
        let basis = DMatrix::from_row_slice(3, 3, &entries) + DMatrix::identity(3, 3) * 3.0;
        let inv = basis.clone().try_inverse().unwrap();
        let conj = |d: &[usize]| &basis * DMatrix::from_diagonal(&DVector::from_iterator(3, d.iter().map(|&b| b as f64))) * &inv;
        let covering = p_diag.iter().zip(&q_diag).all(|(a, b)| a + b > 0);
        let pair = ProjectionPair::new(conj(&p_diag), conj(&q_diag)).unwrap();
        let report = check_projection_algebra(&pair).unwrap();
        let idempotent = report.find("idempotent_p").unwrap().measured.max(report.find("idempotent_q").unwrap().measured);
        prop_assert!(idempotent < 1e-10);
        prop_assert!(report.find("commute").unwrap().measured < 1e-10);
        prop_assert_eq!(report.find("partition").unwrap().measured < 1e-10, covering);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn separation_stays_within_envelope(
        s in -3.0..3.0f64, t in -3.0..3.0f64, a in -2.0..2.0f64, b in -2.0..2.0f64,
    ) {
        prop_assume!((a - b).abs() > 1e-6);
        let sys = example_5_1(0.1);
        let env = separation_envelope(&sys, EnvelopeKind::Nonlinear, (-10.0, 10.0)).unwrap();
        let za = integrate_flow(&sys, Flow::Nonlinear, s, &DVector::from_element(1, a), t, TOL).unwrap().terminal_state();
        let zb = integrate_flow(&sys, Flow::Nonlinear, s, &DVector::from_element(1, b), t, TOL).unwrap().terminal_state();
        prop_assert!((za - zb).norm() <= env.delta(t, s) * (a - b).abs() * (1.0 + 1e-6));
    }
}

#[test]
fn certificates_hold_on_the_refined_grid() {
    let grid = CertificationGrid::default();
    let cert = certify_trichotomy(cosh_op(), &identity_pair(), &grid, None).unwrap();
    assert!(recheck_certificate(cosh_op(), &cert, &grid.halved()).unwrap() <= 0.05);

    let saddle_grid = CertificationGrid::new(-6.0, 6.0, 0.1).unwrap();
    let p = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
    let pair = ProjectionPair::new(p.clone(), DMatrix::identity(2, 2) - p).unwrap();
    let cert = certify_trichotomy(saddle_op(), &pair, &saddle_grid, None).unwrap();
    assert!(recheck_certificate(saddle_op(), &cert, &saddle_grid.halved()).unwrap() <= 0.05);
}

#[test]
fn reports_are_reproducible() {
    let ev = evaluator_5_1(0.1);
    let config = ConjugacyCheckConfig {
        samples: 6,
        transport_samples: 2,
        ..Default::default()
    };
    assert_eq!(check_conjugacy(&ev, &config).unwrap(), check_conjugacy(&ev, &config).unwrap());
    let plan = HolderConfig::default();
    let a = fit_holder(&ev, MapDirection::L, &plan).unwrap();
    let b = fit_holder(&ev, MapDirection::L, &plan).unwrap();
    assert_eq!(a.pairs, b.pairs);
}

#[test]
fn identity_map_has_unit_exponent_in_both_directions() {
    let ev = evaluator_5_1(0.0);
    for direction in [MapDirection::H, MapDirection::L] {
        let fit = fit_holder(&ev, direction, &HolderConfig { q: 0.3, ..Default::default() }).unwrap();
        assert!((fit.exponent_estimate - 1.0).abs() <= 0.01);
        assert!(fit.report.passed);
    }
}
