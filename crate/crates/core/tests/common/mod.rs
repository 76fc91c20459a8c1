#![allow(dead_code)]

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use linearize_core::conjugacy::{build_evaluator, ConjugacyEvaluator, EvaluatorConfig};
use linearize_core::dynamics::{fundamental_matrix, PerturbationBounds, SystemSpec, TransitionOperator};
use linearize_core::trichotomy::{certify_trichotomy, CertificationGrid, ProjectionPair, SplitProjections};
use nalgebra::{DMatrix, DVector};

pub const WINDOW: (f64, f64) = (-40.0, 40.0);

fn tanh_linear() -> linearize_core::dynamics::LinearPart {
    Arc::new(|t: f64| DMatrix::from_element(1, 1, -t.tanh()))
}

pub fn example_5_1(delta: f64) -> SystemSpec {
    SystemSpec::new(
        1,
        tanh_linear(),
        Arc::new(move |t, x: &DVector<f64>| x.map(|v| delta * t.sin() * v.sin())),
        PerturbationBounds::BoundedLipschitz { mu: delta, gamma: delta },
    )
    .unwrap()
    .with_period(TAU)
    .unwrap()
}

pub fn example_5_2(eps: f64) -> SystemSpec {
    let weight = move |t: f64| eps / (1.0 + t * t);
    SystemSpec::new(
        1,
        tanh_linear(),
        Arc::new(move |t, x: &DVector<f64>| x.map(|v| weight(t) * v.sin())),
        PerturbationBounds::Integrable {
            phi: Arc::new(weight),
            psi: Arc::new(weight),
            c1: eps * PI,
            c2: eps * PI,
        },
    )
    .unwrap()
}

pub fn identity_pair() -> ProjectionPair {
    ProjectionPair::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap()
}

pub fn operator(sys: &SystemSpec) -> Arc<TransitionOperator> {
    Arc::new(fundamental_matrix(sys, 0.0, WINDOW, 1e-11).unwrap())
}

pub fn evaluator_5_1(delta: f64) -> ConjugacyEvaluator {
    let sys = example_5_1(delta);
    let op = operator(&sys);
    let cert = certify_trichotomy(&op, &identity_pair(), &CertificationGrid::default(), None).unwrap();
    build_evaluator(&sys, op, &cert, None, EvaluatorConfig::default()).unwrap()
}

pub fn evaluator_5_2(eps: f64) -> ConjugacyEvaluator {
    let sys = example_5_2(eps);
    let op = operator(&sys);
    let cert = certify_trichotomy(&op, &identity_pair(), &CertificationGrid::default(), None).unwrap();
    let split = SplitProjections::from_blocks([0, 1, 0, 0]).unwrap();
    build_evaluator(&sys, op, &cert, Some(&split), EvaluatorConfig::default()).unwrap()
}

/// Dense Picard iteration for Example 5.1 with `P = Q = 1`, written from the
/// closed-form kernel `G(t,s) = ±cosh(s)/cosh(t)` on the segment between 0
/// and `t`. Nodes `k·step` on `[t* − half, t* + half]`, cumulative trapezoid
/// from the zero node, value at `t*` by linear interpolation.
pub fn picard_h_5_1(delta: f64, t_star: f64, eta: f64, half: f64, step: f64, sweeps: usize) -> f64 {
    let lo = ((t_star - half) / step).ceil() as i64;
    let hi = ((t_star + half) / step).floor() as i64;
    let nodes: Vec<f64> = (lo..=hi).map(|k| k as f64 * step).collect();
    let zero = (-lo) as usize;
    assert!(nodes[zero].abs() < 1e-12);
    let orbit: Vec<f64> = nodes.iter().map(|&r| t_star.cosh() / r.cosh() * eta).collect();
    let mut phi = vec![0.0; nodes.len()];
    for _ in 0..sweeps {
        let g: Vec<f64> = nodes
            .iter()
            .zip(&orbit)
            .zip(&phi)
            .map(|((&r, &y), &p)| r.cosh() * delta * r.sin() * (y + p).sin())
            .collect();
        let mut next = vec![0.0; nodes.len()];
        let mut acc = 0.0;
        for k in zero + 1..nodes.len() {
            acc += 0.5 * step * (g[k - 1] + g[k]);
            next[k] = acc / nodes[k].cosh();
        }
        acc = 0.0;
        for k in (0..zero).rev() {
            acc -= 0.5 * step * (g[k + 1] + g[k]);
            next[k] = acc / nodes[k].cosh();
        }
        phi = next;
    }
    let x = t_star / step - lo as f64;
    let k = (x.floor() as usize).min(nodes.len() - 2);
    let theta = x - k as f64;
    phi[k] * (1.0 - theta) + phi[k + 1] * theta
}
