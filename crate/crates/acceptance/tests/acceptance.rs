//! One PASS/FAIL line per acceptance criterion. Exits nonzero if any fails.

use std::f64::consts::TAU;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use linearize_cli::scenario::{builtin_scenario, load_scenario, BUILTINS};
use linearize_core::conjugacy::{build_evaluator, glue_check_zero, ConjugacyError, ConjugacyEvaluator, EvaluatorConfig};
use linearize_core::dynamics::{
    fundamental_matrix, separation_envelope, transition, EnvelopeKind, PerturbationBounds, SystemSpec,
    TransitionOperator,
};
use linearize_core::linalg::{max_abs, operator_norm};
use linearize_core::trichotomy::{
    certify_trichotomy, check_projection_algebra, green_g, green_g_limit, kernel_periodicity_check,
    reduce_to_dichotomy, CertificationGrid, ProjectionPair, Side, SplitProjections, TrichotomyCertificate,
};
use linearize_core::verify::{
    check_conjugacy, check_flow_periodicity, check_holder_premise, check_nonperiodicity, fit_holder,
    sample_points, ConjugacyCheckConfig, HolderConfig, MapDirection, NonperiodicityConfig,
};
use linearize_suite::{picard_tanh, rk4_scalar};
use nalgebra::{DMatrix, DVector};

const WINDOW: (f64, f64) = (-40.0, 40.0);
const TRANSITION_TOL: f64 = 1e-11;

fn tanh_system(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static, bounds: PerturbationBounds) -> SystemSpec {
    SystemSpec::new(
        1,
        Arc::new(|t: f64| DMatrix::from_element(1, 1, -t.tanh())),
        Arc::new(move |t, x: &DVector<f64>| x.map(|v| f(t, v))),
        bounds,
    )
    .unwrap()
}

fn bounded_example(delta: f64) -> SystemSpec {
    tanh_system(
        move |t, x| delta * t.sin() * x.sin(),
        PerturbationBounds::BoundedLipschitz { mu: delta, gamma: delta },
    )
    .with_period(TAU)
    .unwrap()
}

fn integrable_example(eps: f64) -> SystemSpec {
    let w = move |t: f64| eps / (1.0 + t * t);
    tanh_system(
        move |t, x| w(t) * x.sin(),
        PerturbationBounds::Integrable {
            phi: Arc::new(w),
            psi: Arc::new(w),
            c1: eps * std::f64::consts::PI,
            c2: eps * std::f64::consts::PI,
        },
    )
}

/// `x' = (−1 + ½ sin t)x + 0.05 sin t tanh x`, 2π-periodic, dichotomy with
/// `P = 1`, `Q = 0`.
fn periodic_dichotomy() -> SystemSpec {
    SystemSpec::new(
        1,
        Arc::new(|t: f64| DMatrix::from_element(1, 1, -1.0 + 0.5 * t.sin())),
        Arc::new(|t, x: &DVector<f64>| x.map(|v| 0.05 * t.sin() * v.tanh())),
        PerturbationBounds::BoundedLipschitz { mu: 0.05, gamma: 0.05 },
    )
    .unwrap()
    .with_period(TAU)
    .unwrap()
}

fn scalar_pair(p: f64, q: f64) -> ProjectionPair {
    ProjectionPair::new(DMatrix::from_element(1, 1, p), DMatrix::from_element(1, 1, q)).unwrap()
}

fn operator(sys: &SystemSpec) -> Arc<TransitionOperator> {
    Arc::new(fundamental_matrix(sys, 0.0, WINDOW, TRANSITION_TOL).unwrap())
}

struct Prepared {
    sys: SystemSpec,
    op: Arc<TransitionOperator>,
    cert: TrichotomyCertificate,
}

fn prepare(sys: SystemSpec, pair: &ProjectionPair) -> Prepared {
    let op = operator(&sys);
    let cert = certify_trichotomy(&op, pair, &CertificationGrid::default(), None).unwrap();
    Prepared { sys, op, cert }
}

fn build(p: &Prepared, split: Option<&SplitProjections>) -> Result<ConjugacyEvaluator, ConjugacyError> {
    build_evaluator(&p.sys, p.op.clone(), &p.cert, split, EvaluatorConfig::default())
}

fn middle_split() -> SplitProjections {
    SplitProjections::from_blocks([0, 1, 0, 0]).unwrap()
}

struct Outcome {
    passed: bool,
    summary: String,
}

fn outcome(passed: bool, summary: String) -> Outcome {
    Outcome { passed, summary }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let sys = SystemSpec::linear(1, Arc::new(|t: f64| DMatrix::from_element(1, 1, -t.tanh()))).unwrap();
    let op = fundamental_matrix(&sys, 0.0, (-10.0, 10.0), TRANSITION_TOL).unwrap();
    let grid = CertificationGrid::new(-10.0, 10.0, 0.1).unwrap();
    let cert = certify_trichotomy(&op, &scalar_pair(1.0, 1.0), &grid, None).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    // Closed-form kernel: U(t)U⁻¹(s) = cosh(s)/cosh(t).
    let mut kernel_error = 0.0_f64;
    for t in grid.points().iter().step_by(10) {
        for s in grid.points().iter().step_by(10) {
            let u = transition(&op, *t, *s).unwrap()[(0, 0)];
            kernel_error = kernel_error.max((u - s.cosh() / t.cosh()).abs() / (s.cosh() / t.cosh()));
        }
    }
    let residuals_ok = cert.residuals.iter().all(|r| *r <= 0.0);
    let passed = cert.beta <= 2.0 && cert.alpha >= 1.0 - 1e-3 && residuals_ok && kernel_error < 1e-8 && elapsed < 5.0;
    outcome(
        passed,
        format!(
            "beta {:.6} (<= 2), alpha {:.6} (>= 0.999), residuals {:?} (<= 0), kernel vs cosh(s)/cosh(t) rel err {:.1e}, {:.2} s (< 5 s)",
            cert.beta, cert.alpha, cert.residuals.map(|r| (r * 1e6).round() / 1e6), kernel_error, elapsed
        ),
    )
}

fn criterion_2() -> Outcome {
    let bounded = prepare(bounded_example(0.1), &scalar_pair(1.0, 1.0));
    let integrable = prepare(integrable_example(0.05), &scalar_pair(1.0, 1.0));
    let start = Instant::now();
    let gate_bounded = |delta: f64| {
        let p = Prepared {
            sys: bounded_example(delta),
            op: bounded.op.clone(),
            cert: bounded.cert.clone(),
        };
        build(&p, None)
    };
    let at_016 = gate_bounded(0.16);
    let at_017 = gate_bounded(0.17);
    let bounded_ok = at_016.is_ok() && matches!(at_017, Err(ConjugacyError::PremiseViolated { .. }));

    // Builds iff (β + 2κ₁ + κ₂)c₂ < 1; every ε below 1/(4π) must build.
    let split = middle_split();
    let mut integrable_ok = true;
    let mut notes = Vec::new();
    for eps in [0.01, 0.05, 0.079, 0.15, 0.17, 0.3] {
        let p = Prepared {
            sys: integrable_example(eps),
            op: integrable.op.clone(),
            cert: integrable.cert.clone(),
        };
        let premise = (integrable.cert.beta + 2.0 * split.kappa1 + split.kappa2) * eps * std::f64::consts::PI;
        let built = build(&p, Some(&split));
        let consistent = built.is_ok() == (premise < 1.0) && (eps >= 1.0 / (4.0 * std::f64::consts::PI) || built.is_ok());
        integrable_ok &= consistent;
        notes.push(format!("eps {eps}: premise {premise:.4} {}", if built.is_ok() { "built" } else { "rejected" }));
    }
    let elapsed = start.elapsed().as_secs_f64();
    outcome(
        bounded_ok && integrable_ok && elapsed < 1.0,
        format!(
            "delta 0.16 {}, delta 0.17 {}; {}; gate {:.3} s (< 1 s)",
            if at_016.is_ok() { "built" } else { "rejected" },
            if at_017.is_ok() { "built" } else { "rejected" },
            notes.join(", "),
            elapsed
        ),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let p = prepare(bounded_example(0.1), &scalar_pair(1.0, 1.0));
    let ev = build(&p, None).unwrap();
    let anchors = sample_points(1, 10, 2024, (-5.0, 5.0), (-2.0, 2.0));
    let (mut worst_ratio, mut worst_sup, mut worst_err) = (0.0_f64, 0.0_f64, 0.0_f64);
    for (t, eta) in &anchors {
        let (h, table) = ev.solve_h(*t, eta).unwrap();
        // Ratios of consecutive changes while the changes are above rounding.
        for w in table.deltas.windows(2) {
            if w[0] > 1e-12 && w[1] > 1e-13 {
                worst_ratio = worst_ratio.max(w[1] / w[0]);
            }
        }
        worst_sup = worst_sup.max(table.max_sup());
        let oracle = picard_tanh(0.1, *t, eta[0], 30.0, 1e-3, 60);
        worst_err = worst_err.max((h[0] - oracle).abs());
    }
    let elapsed = start.elapsed().as_secs_f64();
    let sup_constant = 3.0 * 2.0 * 0.1 / 1.0;
    outcome(
        worst_ratio <= 0.65 && worst_sup <= sup_constant && worst_err <= 1e-5 && elapsed < 60.0,
        format!(
            "contraction ratio {worst_ratio:.4} (<= 0.65), iterate sup {worst_sup:.4} (<= {sup_constant:.2}), \
             oracle error {worst_err:.2e} (<= 1e-5), {elapsed:.1} s (< 60 s)"
        ),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let config = ConjugacyCheckConfig {
        samples: 50,
        transport_samples: 10,
        composition_tol: Some(1e-4),
        displacement_slack: 1e-6,
        transport_tol: 1e-3,
        ..ConjugacyCheckConfig::default()
    };
    let bounded = build(&prepare(bounded_example(0.1), &scalar_pair(1.0, 1.0)), None).unwrap();
    let integrable = build(&prepare(integrable_example(0.05), &scalar_pair(1.0, 1.0)), Some(&middle_split())).unwrap();
    let mut passed = true;
    let mut notes = Vec::new();
    for (name, ev) in [("example_5_1", &bounded), ("example_5_2", &integrable)] {
        let report = check_conjugacy(ev, &config).unwrap();
        passed &= report.passed;
        let get = |n: &str| report.find(n).unwrap().measured;
        notes.push(format!(
            "{name}: |H-id| {:.3e} / |L-id| {:.3e} (<= {:.4}), H∘L {:.1e}, L∘H {:.1e} (<= 1e-4), transport {:.1e}/{:.1e} (<= 1e-3)",
            get("displacement_h"),
            get("displacement_l"),
            ev.sup_bound() + 1e-6,
            get("composition_h_of_l"),
            get("composition_l_of_h"),
            get("transport_h"),
            get("transport_l"),
        ));
    }
    let elapsed = start.elapsed().as_secs_f64();
    outcome(passed && elapsed < 120.0, format!("{}; {elapsed:.1} s (< 120 s)", notes.join("; ")))
}

fn criterion_5() -> Outcome {
    let etas: Vec<DVector<f64>> = sample_points(1, 10, 5, (0.0, 0.0), (-2.0, 2.0))
        .into_iter()
        .map(|(_, x)| x)
        .collect();
    let mut passed = true;
    let mut notes = Vec::new();
    for (name, sys, pair) in [
        ("example_5_1", bounded_example(0.1), scalar_pair(1.0, 1.0)),
        ("periodic dichotomy", periodic_dichotomy(), scalar_pair(1.0, 0.0)),
    ] {
        let ev = build(&prepare(sys, &pair), None).unwrap();
        let report = glue_check_zero(&ev, &etas).unwrap();
        passed &= report.passed;
        notes.push(format!("{name}: {:.2e} (<= {:.2e})", report.measured, report.threshold));
    }
    outcome(passed, notes.join("; "))
}

fn criterion_6() -> Outcome {
    let q = 0.5;
    let p = prepare(bounded_example(0.01), &scalar_pair(1.0, 1.0));
    let ev = build(&p, None).unwrap();
    let envelopes = (
        separation_envelope(&p.sys, EnvelopeKind::Linear, WINDOW).unwrap(),
        separation_envelope(&p.sys, EnvelopeKind::Nonlinear, WINDOW).unwrap(),
    );
    let t_samples = [-6.0, -3.0, -1.0, 0.0, 1.0, 3.0, 6.0];
    let first = check_holder_premise(&ev, q, 1.0, envelopes, &t_samples).unwrap();
    let p_holder = first.p_min * (1.0 + 1e-9);
    let premise = check_holder_premise(&ev, q, p_holder, envelopes, &t_samples).unwrap();
    let config = HolderConfig {
        q,
        p: p_holder,
        ..HolderConfig::default()
    };
    let in_range = config.separations.iter().all(|d| (1e-4..=1e-1).contains(d));
    let fit_h = fit_holder(&ev, MapDirection::H, &config).unwrap();
    let fit_l = fit_holder(&ev, MapDirection::L, &config).unwrap();

    let identity = build(&prepare(bounded_example(0.0), &scalar_pair(1.0, 1.0)), None).unwrap();
    let id_h = fit_holder(&identity, MapDirection::H, &config).unwrap();
    let id_l = fit_holder(&identity, MapDirection::L, &config).unwrap();
    let id_ok = (id_h.exponent_estimate - 1.0).abs() <= 0.01 && (id_l.exponent_estimate - 1.0).abs() <= 0.01;
    let passed = premise.report.passed && fit_h.report.passed && fit_l.report.passed && in_range && id_ok;
    outcome(
        passed,
        format!(
            "p = {:.4e} from the premise (integral {:.4e} <= p/(1+p) {:.4e}); max image/sep^q: H {:.4}, L {:.4} (<= {:.4}) over {} pairs; identity q-hat H {:.4}, L {:.4} (1.00 ± 0.01)",
            p_holder,
            premise.integrals[0].max(premise.integrals[1]),
            premise.target,
            fit_h.constant_estimate,
            fit_l.constant_estimate,
            1.0 + p_holder,
            fit_h.pairs.len(),
            id_h.exponent_estimate,
            id_l.exponent_estimate
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut parts = Vec::new();
    let mut passed = true;

    // Flow periodicity on the bounded example.
    let sys = bounded_example(0.1);
    let starts = sample_points(1, 10, 17, (-3.0, 3.0), (-2.0, 2.0));
    let spans = sample_points(0, 10, 18, (-3.0, 3.0), (0.0, 0.0));
    let samples: Vec<(f64, f64, DVector<f64>)> = starts
        .into_iter()
        .zip(spans)
        .map(|((s, x), (d, _))| (s, s + d, x))
        .collect();
    let flow = check_flow_periodicity(&sys, None, &samples, 1e-7).unwrap();
    passed &= flow.passed;
    parts.push(format!(
        "flow periodicity on example_5_1 {:.3e} (<= 1e-6) {}",
        flow.measured,
        if flow.passed { "ok" } else { "FAILED" }
    ));

    // Kernel periodicity on a periodic linear system.
    let dich = periodic_dichotomy();
    let op = operator(&dich);
    let grid = CertificationGrid::new(-3.0, 3.0, 0.25).unwrap();
    let kernel = kernel_periodicity_check(&op, &scalar_pair(1.0, 0.0), None, TAU, &grid, 1e-6).unwrap();
    passed &= kernel.passed;
    parts.push(format!(
        "kernel periodicity on the periodic dichotomy {:.3e} (<= 1e-6) {}",
        kernel.measured,
        if kernel.passed { "ok" } else { "FAILED" }
    ));

    // Non-periodicity with the floor recorded in the scenario file.
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/example_5_1_periodicity.toml");
    let scenario = load_scenario(&path, &[]).unwrap();
    let np = scenario.config.checks.nonperiodicity.clone().unwrap();
    let latest = np.t_samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Two independent oracles of the defect at the latest time.
    let mut picard_defect = 0.0_f64;
    let mut flow_defect = 0.0_f64;
    let field = |t: f64, x: f64| -t.tanh() * x + 0.1 * t.sin() * x.sin();
    for state in &np.states {
        let y = state[0];
        let now = picard_tanh(0.1, latest, y, 30.0, 1e-3, 60);
        let later = picard_tanh(0.1, latest + TAU, y, 30.0, 1e-3, 60);
        picard_defect = picard_defect.max((later - now).abs());
        let x_now = rk4_scalar(field, 0.0, latest.cosh() * y, latest, 20_000);
        let x_later = rk4_scalar(field, 0.0, (latest + TAU).cosh() * y, latest + TAU, 60_000);
        flow_defect = flow_defect.max((x_later - x_now).abs());
    }
    let floor_ok = np.floor > 0.0 && np.floor <= picard_defect;
    passed &= floor_ok;
    let ev = build(&prepare(bounded_example(0.1), &scalar_pair(1.0, 1.0)), None).unwrap();
    let config = NonperiodicityConfig {
        t_samples: np.t_samples.clone(),
        states: np.states.clone(),
        floor: np.floor,
        agreement_tol: 1e-4,
    };
    let (report, _) = check_nonperiodicity(&ev, Some(TAU), &config).unwrap();
    let direct = report.find("nonperiodicity_direct").unwrap();
    let late = report.find("nonperiodicity_latest_time").unwrap();
    let agreement = report.find("nonperiodicity_integral_agreement").unwrap();
    passed &= direct.passed && late.passed && agreement.passed;
    parts.push(format!(
        "theta {:.1e} from the scenario (dense-quadrature oracle defect at t = {latest}: {:.4e}, explicit flow {:.4e}); \
         direct defect {:.4e}, at t = {latest} {:.4e} (>= theta) {}; direct vs defect integral gap {:.4e} (<= 1e-4) {}",
        np.floor,
        picard_defect,
        flow_defect,
        direct.measured,
        late.measured,
        if direct.passed && late.passed { "ok" } else { "FAILED" },
        agreement.measured,
        if agreement.passed { "ok" } else { "FAILED" }
    ));
    outcome(passed, parts.join("; "))
}

fn criterion_8(suite_start: Instant) -> Outcome {
    let mut parts = Vec::new();
    let mut passed = true;

    // Projection algebra of every built-in.
    let mut algebra = 0.0_f64;
    for name in BUILTINS {
        let s = builtin_scenario(name, &[]).unwrap();
        let report = check_projection_algebra(&s.pair).unwrap();
        algebra = algebra.max(report.measured);
    }
    passed &= algebra == 0.0;
    parts.push(format!("projection algebra defect of the built-ins {algebra:e} (= 0)"));

    // Diagonal jump of G: G(t, t⁻) − G(t, t⁺) = I away from the origin. At
    // t = 0 the jump is 2I − P − Q.
    let cases = [
        (bounded_example(0.1), scalar_pair(1.0, 1.0)),
        (periodic_dichotomy(), scalar_pair(1.0, 0.0)),
    ];
    let mut jump = 0.0_f64;
    let pts = CertificationGrid::new(-5.0, 5.0, 0.5).unwrap().points();
    for (sys, pair) in &cases {
        let op = operator(sys);
        for &t in pts.iter().filter(|t| **t != 0.0) {
            let below = green_g_limit(&op, pair, t, Side::Below).unwrap();
            let above = green_g_limit(&op, pair, t, Side::Above).unwrap();
            jump = jump.max(max_abs(&(below - above - DMatrix::identity(1, 1))));
        }
    }
    passed &= jump <= 1e-10;
    parts.push(format!("kernel jump defect {jump:.2e} (<= 1e-10)"));

    // Dichotomy reduction when P = I − Q.
    let dich = periodic_dichotomy();
    let op = operator(&dich);
    let pair = scalar_pair(1.0, 0.0);
    let reduced = reduce_to_dichotomy(&pair).unwrap();
    let mut reduction = 0.0_f64;
    for &t in &pts {
        for &s in &pts {
            if s != t {
                let d = green_g(&op, &pair, t, s).unwrap() - reduced.eval(&op, t, s).unwrap();
                reduction = reduction.max(operator_norm(&d));
            }
        }
    }
    passed &= reduction <= 1e-10;
    parts.push(format!("dichotomy reduction defect {reduction:.2e} (<= 1e-10)"));

    // Cocycle law, relative to the size of the composed transition.
    let op = operator(&bounded_example(0.1));
    let triples = sample_points(2, 50, 99, (-8.0, 8.0), (-8.0, 8.0));
    let mut cocycle = 0.0_f64;
    for (t, rs) in &triples {
        let (r, s) = (rs[0], rs[1]);
        let direct = transition(&op, *t, s).unwrap();
        let composed = transition(&op, *t, r).unwrap() * transition(&op, r, s).unwrap();
        let scale = operator_norm(&direct)
            .max(operator_norm(&transition(&op, *t, r).unwrap()) * operator_norm(&transition(&op, r, s).unwrap()));
        cocycle = cocycle.max(operator_norm(&(composed - &direct)) / scale);
    }
    passed &= cocycle <= 10.0 * TRANSITION_TOL;
    parts.push(format!("cocycle defect {cocycle:.2e} (<= {:.0e})", 10.0 * TRANSITION_TOL));

    let elapsed = suite_start.elapsed().as_secs_f64();
    passed &= elapsed < 300.0;
    parts.push(format!("suite {elapsed:.1} s (< 300 s)"));
    outcome(passed, parts.join("; "))
}

fn main() {
    let suite_start = Instant::now();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("certification of the cosh system", Box::new(criterion_1)),
        ("premise gate", Box::new(criterion_2)),
        ("fixed-point convergence", Box::new(criterion_3)),
        ("conjugacy battery", Box::new(criterion_4)),
        ("glue at zero", Box::new(criterion_5)),
        ("Hölder suite", Box::new(criterion_6)),
        ("periodicity suite", Box::new(criterion_7)),
        ("structural properties", Box::new(move || criterion_8(suite_start))),
    ];
    let mut failures = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let result = run();
        if !result.passed {
            failures += 1;
        }
        println!(
            "{} criterion {} ({name}): {}",
            if result.passed { "PASS" } else { "FAIL" },
            k + 1,
            result.summary
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
