//! Periodicity of the flows and non-periodicity of the equivalence map.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::VerifyError;
use crate::conjugacy::quadrature::lagrange_at;
use crate::conjugacy::{ConjugacyEvaluator, OrbitTable};
use crate::dynamics::{integrate_flow, BoundMode, Flow, SystemSpec};
use crate::linalg::solve;
use crate::report::CheckReport;

/// 3-point Gauss–Legendre nodes and weights on `[−1, 1]`.
const GAUSS_NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GAUSS_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

/// `max |X(t+T; s+T, x) − X(t; s, x)|` over `samples = (s, t, x)` for the linear
/// and the perturbed flow, against `10·tol`. `period` overrides the declared one.
pub fn check_flow_periodicity(
    system: &SystemSpec,
    period: Option<f64>,
    samples: &[(f64, f64, DVector<f64>)],
    tol: f64,
) -> Result<CheckReport, VerifyError> {
    let period = period.or(system.period()).ok_or(VerifyError::MissingPeriod)?;
    if samples.is_empty() {
        return Err(VerifyError::InvalidSamples("no flow samples".into()));
    }
    let threshold = 10.0 * tol;
    let defect = |flow: Flow| {
        samples
            .par_iter()
            .map(|(s, t, x)| {
                let base = integrate_flow(system, flow, *s, x, *t, tol)?.terminal_state();
                let shifted = integrate_flow(system, flow, s + period, x, t + period, tol)?.terminal_state();
                Ok((shifted - base).norm())
            })
            .collect::<Result<Vec<f64>, VerifyError>>()
            .map(|v| v.into_iter().fold(0.0, f64::max))
    };
    let linear = defect(Flow::Linear)?;
    let nonlinear = defect(Flow::Nonlinear)?;
    Ok(CheckReport::at_most("flow_periodicity", linear.max(nonlinear), threshold)
        .with_details(format!("period {period}"))
        .with_samples(samples.len())
        .with_sub_checks(vec![
            CheckReport::at_most("flow_periodicity_linear", linear, threshold),
            CheckReport::at_most("flow_periodicity_perturbed", nonlinear, threshold),
        ]))
}

/// Projector of the defect integral: `P2+P3` with a split, `P − (I − Q)`
/// otherwise.
fn defect_projector(ev: &ConjugacyEvaluator) -> DMatrix<f64> {
    match (ev.mode(), ev.split()) {
        (BoundMode::Integrable, Some(split)) => split.middle(),
        _ => {
            let pair = &ev.certificate().projections;
            &pair.p - pair.complement_q()
        }
    }
}

/// `∫_{−T}^0 U(t) Π U⁻¹(s) f(s, y(s) + φ(s)) ds` along the orbit stored in
/// `table`, with `Π` from the evaluator's mode. The table must cover `[−T, 0]`.
pub fn defect_integral(ev: &ConjugacyEvaluator, table: &OrbitTable, period: f64) -> Result<DVector<f64>, VerifyError> {
    let nodes = &table.nodes;
    let (first, last) = (nodes[0], *nodes.last().unwrap());
    if first > -period || last < 0.0 {
        return Err(VerifyError::InvalidSamples(format!(
            "orbit table [{first}, {last}] does not cover [{}, 0]",
            -period
        )));
    }
    let step = nodes[1] - nodes[0];
    let lo = (((-period - first) / step).floor() as usize).saturating_sub(2);
    let hi = ((((0.0 - first) / step).ceil() as usize) + 2).min(nodes.len() - 1);
    let op = ev.operator();
    let sys = ev.system();
    let w = (lo..=hi)
        .map(|j| {
            let forcing = sys.f(nodes[j], &(&table.orbit_states[j] + &table.iterate[j]));
            let u = op.u_at(nodes[j])?;
            solve(&u, &forcing).ok_or(VerifyError::InvalidSamples(format!("singular U at {}", nodes[j])))
        })
        .collect::<Result<Vec<_>, VerifyError>>()?;
    let origin = nodes[lo];
    let mut acc = DVector::zeros(sys.dimension());
    for k in 0..w.len() - 1 {
        let a = (origin + step * k as f64).max(-period);
        let b = (origin + step * (k + 1) as f64).min(0.0);
        if b <= a {
            continue;
        }
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        for (x, weight) in GAUSS_NODES.iter().zip(GAUSS_WEIGHTS) {
            let s = mid + half * x;
            acc += lagrange_at(&w, (s - origin) / step) * (weight * half);
        }
    }
    let u_t = op.u_at(table.anchor_time)?;
    Ok(u_t * defect_projector(ev) * acc)
}

/// Sample points of [`check_nonperiodicity`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NonperiodicityConfig {
    pub t_samples: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Strictly positive floor the direct defect must reach.
    pub floor: f64,
    /// Largest accepted gap between the direct defect and the defect integral.
    pub agreement_tol: f64,
}

/// One measured defect.
#[derive(Clone, Debug, Serialize)]
pub struct NonperiodicitySample {
    pub t: f64,
    pub state: Vec<f64>,
    /// `|H(t+T, y) − H(t, y)|`.
    pub direct: f64,
    /// `|∫_{−T}^0 U(t) Π U⁻¹(s) f(…) ds|`.
    pub integral: f64,
    /// Norm of the difference of the two vectors.
    pub gap: f64,
}

/// Exhibit a positive defect `|H(t+T, y) − H(t, y)|`, compare it with the
/// defect integral, and test the defect at the latest sampled time against the
/// same floor. Only a finite-horizon surrogate: a positive defect on samples
/// says nothing about asymptotic or almost periodicity.
pub fn check_nonperiodicity(
    ev: &ConjugacyEvaluator,
    period: Option<f64>,
    config: &NonperiodicityConfig,
) -> Result<(CheckReport, Vec<NonperiodicitySample>), VerifyError> {
    let period = period.or(ev.system().period()).ok_or(VerifyError::MissingPeriod)?;
    if config.t_samples.is_empty() || config.states.is_empty() {
        return Err(VerifyError::InvalidSamples("need t samples and state samples".into()));
    }
    if !(config.floor > 0.0) {
        return Err(VerifyError::InvalidSamples("floor must be positive".into()));
    }
    let n = ev.system().dimension();
    if config.states.iter().any(|s| s.len() != n) {
        return Err(VerifyError::InvalidSamples(format!("states must have dimension {n}")));
    }
    let points: Vec<(f64, &Vec<f64>)> = config
        .t_samples
        .iter()
        .flat_map(|&t| config.states.iter().map(move |s| (t, s)))
        .collect();
    let measured = points
        .par_iter()
        .map(|&(t, state)| {
            let y = DVector::from_column_slice(state);
            let (h_now, table) = ev.solve_h(t, &y)?;
            let (h_later, later) = ev.solve_h(t + period, &y)?;
            let degenerate = table.iterate.iter().chain(&later.iterate).all(|v| v.iter().all(|x| *x == 0.0));
            let direct = &h_later - &h_now;
            let integral = if degenerate {
                DVector::zeros(y.len())
            } else {
                defect_integral(ev, &table, period)?
            };
            Ok((
                NonperiodicitySample {
                    t,
                    state: state.clone(),
                    direct: direct.norm(),
                    integral: integral.norm(),
                    gap: (direct - integral).norm(),
                },
                degenerate,
            ))
        })
        .collect::<Result<Vec<_>, VerifyError>>()?;
    let degenerate = measured.iter().all(|m| m.1);
    let samples: Vec<NonperiodicitySample> = measured.into_iter().map(|m| m.0).collect();

    if degenerate {
        let report = CheckReport::at_most("nonperiodicity", 0.0, 0.0)
            .with_details("periodic (degenerate): the perturbation vanishes on every sampled orbit and H is the identity")
            .with_samples(samples.len());
        return Ok((report, samples));
    }

    let direct = samples.iter().map(|s| s.direct).fold(0.0, f64::max);
    let gap = samples.iter().map(|s| s.gap).fold(0.0, f64::max);
    let latest = config.t_samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let late = samples
        .iter()
        .filter(|s| s.t == latest)
        .map(|s| s.direct)
        .fold(0.0, f64::max);
    let report = CheckReport::at_least("nonperiodicity", direct, config.floor)
        .with_details(format!(
            "finite-horizon surrogate with period {period}; a positive defect on samples is exhibited, not proven in the limit"
        ))
        .with_samples(samples.len())
        .with_sub_checks(vec![
            CheckReport::at_least("nonperiodicity_direct", direct, config.floor).with_samples(samples.len()),
            CheckReport::at_most("nonperiodicity_integral_agreement", gap, config.agreement_tol)
                .with_samples(samples.len()),
            CheckReport::at_least("nonperiodicity_latest_time", late, config.floor)
                .with_details(format!("t = {latest}")),
        ]);
    Ok((report, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::PerturbationBounds;
    use crate::verify::tests::cosh_evaluator;
    use nalgebra::DMatrix;
    use std::f64::consts::TAU;
    use std::sync::Arc;

    fn config(floor: f64) -> NonperiodicityConfig {
        NonperiodicityConfig {
            t_samples: vec![0.5, 2.0],
            states: vec![vec![0.5], vec![-1.0]],
            floor,
            agreement_tol: 1e-4,
        }
    }

    #[test]
    fn zero_perturbation_is_degenerate() {
        let ev = cosh_evaluator(0.0);
        let (report, samples) = check_nonperiodicity(&ev, None, &config(1e-6)).unwrap();
        assert!(report.passed);
        assert!(report.details.contains("periodic (degenerate)"));
        assert!(samples.iter().all(|s| s.direct == 0.0 && s.integral == 0.0));
    }

    #[test]
    fn perturbed_defect_is_positive() {
        let ev = cosh_evaluator(0.1);
        let (report, samples) = check_nonperiodicity(&ev, None, &config(1e-6)).unwrap();
        assert!(report.find("nonperiodicity_direct").unwrap().passed, "{report:#?}");
        assert!(samples.iter().all(|s| s.direct > 0.0));
    }

    #[test]
    fn missing_period_is_reported() {
        let ev = cosh_evaluator(0.1);
        let sys = ev.system().clone();
        let unperiodic = crate::dynamics::SystemSpec::new(
            1,
            Arc::new(move |t| sys.a(t)),
            Arc::new(|_, x: &DVector<f64>| x * 0.0),
            PerturbationBounds::BoundedLipschitz { mu: 0.0, gamma: 0.0 },
        )
        .unwrap();
        let samples = vec![(0.0, 1.0, DVector::from_element(1, 1.0))];
        assert!(matches!(
            check_flow_periodicity(&unperiodic, None, &samples, 1e-10),
            Err(VerifyError::MissingPeriod)
        ));
    }

    #[test]
    fn autonomous_flow_is_periodic_for_any_period() {
        let sys = crate::dynamics::SystemSpec::new(
            2,
            Arc::new(|_| DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.2])),
            Arc::new(|_, x: &DVector<f64>| DVector::from_vec(vec![0.0, 0.1 * x[0].sin()])),
            PerturbationBounds::BoundedLipschitz { mu: 0.1, gamma: 0.1 },
        )
        .unwrap();
        let samples = vec![
            (0.0, 2.0, DVector::from_vec(vec![1.0, 0.0])),
            (-1.0, -3.0, DVector::from_vec(vec![0.3, -0.7])),
        ];
        let report = check_flow_periodicity(&sys, Some(1.7), &samples, 1e-10).unwrap();
        assert!(report.passed, "{report:#?}");
    }

    #[test]
    fn aperiodic_flow_fails() {
        let ev = cosh_evaluator(0.1);
        let samples = vec![(0.0, 1.0, DVector::from_element(1, 1.0))];
        let report = check_flow_periodicity(ev.system(), Some(TAU), &samples, 1e-10).unwrap();
        assert!(!report.passed);
        assert!(report.measured > 1e-3);
    }

    #[test]
    fn periodic_dichotomy_gives_periodic_map() {
        use crate::conjugacy::{build_evaluator, EvaluatorConfig};
        use crate::dynamics::{fundamental_matrix, SystemSpec};
        use crate::trichotomy::{certify_trichotomy, CertificationGrid, ProjectionPair};
        let sys = SystemSpec::new(
            1,
            Arc::new(|t: f64| DMatrix::from_element(1, 1, -1.0 + 0.5 * t.sin())),
            Arc::new(|t, x: &DVector<f64>| x.map(|v| 0.05 * t.sin() * v.tanh())),
            PerturbationBounds::BoundedLipschitz { mu: 0.05, gamma: 0.05 },
        )
        .unwrap()
        .with_period(TAU)
        .unwrap();
        let op = Arc::new(fundamental_matrix(&sys, 0.0, (-40.0, 40.0), 1e-11).unwrap());
        let pair = ProjectionPair::new(DMatrix::identity(1, 1), DMatrix::zeros(1, 1)).unwrap();
        let cert = certify_trichotomy(&op, &pair, &CertificationGrid::default(), None).unwrap();
        let ev = build_evaluator(&sys, op, &cert, None, EvaluatorConfig::default()).unwrap();
        let (report, samples) = check_nonperiodicity(&ev, None, &config(1e-3)).unwrap();
        assert!(report.find("nonperiodicity_integral_agreement").unwrap().passed, "{report:#?}");
        assert!(!report.find("nonperiodicity_direct").unwrap().passed);
        assert!(samples.iter().all(|s| s.integral == 0.0 && s.direct < 1e-6), "{samples:?}");
    }

    #[test]
    fn defect_integral_needs_coverage() {
        let ev = cosh_evaluator(0.1);
        let (_, table) = ev.solve_h(15.0, &DVector::from_element(1, 0.5)).unwrap();
        assert!(matches!(defect_integral(&ev, &table, TAU), Err(VerifyError::InvalidSamples(_))));
    }
}
