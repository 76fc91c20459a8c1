//! Property checks on constructed equivalence maps.

mod holder;
mod periodicity;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::conjugacy::{ConjugacyError, ConjugacyEvaluator};
use crate::dynamics::{integrate_flow, transition, DynamicsError, Flow};
use crate::trichotomy::TrichotomyError;

pub use crate::report::{CheckReport, Direction};
pub use holder::{check_holder_premise, fit_holder, HolderConfig, HolderFit, HolderPremise, MapDirection};
pub use periodicity::{
    check_flow_periodicity, check_nonperiodicity, defect_integral, NonperiodicityConfig, NonperiodicitySample,
};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("system declares no period")]
    MissingPeriod,
    #[error("Hölder premise diverges: q·rate = {product:.6} is not below alpha = {alpha:.6}")]
    DivergentPremise { product: f64, alpha: f64 },
    #[error("invalid samples: {0}")]
    InvalidSamples(String),
    #[error(transparent)]
    Conjugacy(#[from] ConjugacyError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Trichotomy(#[from] TrichotomyError),
}

/// Sampling and thresholds for [`check_conjugacy`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConjugacyCheckConfig {
    pub samples: usize,
    /// Points along which the transport residuals are measured.
    pub transport_samples: usize,
    pub seed: u64,
    pub t_range: (f64, f64),
    pub state_range: (f64, f64),
    /// `None`: `10·(fp_tol + tail_tol)` of the evaluator.
    pub composition_tol: Option<f64>,
    pub displacement_slack: f64,
    pub transport_tol: f64,
    /// Central-difference step of the transport residuals.
    pub fd_step: f64,
}

impl Default for ConjugacyCheckConfig {
    fn default() -> Self {
        Self {
            samples: 50,
            transport_samples: 10,
            seed: 7,
            t_range: (-5.0, 5.0),
            state_range: (-2.0, 2.0),
            composition_tol: None,
            displacement_slack: 1e-6,
            transport_tol: 1e-3,
            fd_step: 1e-3,
        }
    }
}

/// Seeded points `(t, x)` uniform in the box `t_range × state_range^n`.
pub fn sample_points(
    dimension: usize,
    count: usize,
    seed: u64,
    t_range: (f64, f64),
    state_range: (f64, f64),
) -> Vec<(f64, DVector<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let t = rng.gen_range(t_range.0..=t_range.1);
            let x = DVector::from_fn(dimension, |_, _| rng.gen_range(state_range.0..=state_range.1));
            (t, x)
        })
        .collect()
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(0.0, f64::max)
}

/// Displacement bounds, the two composition identities and the transport of
/// solutions in both directions.
pub fn check_conjugacy(ev: &ConjugacyEvaluator, config: &ConjugacyCheckConfig) -> Result<CheckReport, VerifyError> {
    if config.samples == 0 {
        return Err(VerifyError::InvalidSamples("need at least one sample".into()));
    }
    let n = ev.system().dimension();
    let points = sample_points(n, config.samples, config.seed, config.t_range, config.state_range);
    let composition_tol = config
        .composition_tol
        .unwrap_or(10.0 * (ev.config().fp_tol + ev.config().tail_tol));
    let displacement_tol = ev.sup_bound() + config.displacement_slack;

    // (|H−id|, |L−id|, |H∘L−id|, |L∘H−id|) per point
    let measured = points
        .par_iter()
        .map(|(t, x)| {
            let h = ev.eval_h(*t, x)?;
            let l = ev.eval_l(*t, x)?;
            let hl = ev.eval_h(*t, &l)?;
            let lh = ev.eval_l(*t, &h)?;
            Ok([(&h - x).norm(), (&l - x).norm(), (hl - x).norm(), (lh - x).norm()])
        })
        .collect::<Result<Vec<[f64; 4]>, ConjugacyError>>()?;
    let column = |k: usize| max_of(&measured.iter().map(|m| m[k]).collect::<Vec<_>>());

    let transport_points = &points[..config.transport_samples.min(points.len())];
    let residuals = transport_points
        .par_iter()
        .map(|(t, x)| transport_residuals(ev, *t, x, config.fd_step))
        .collect::<Result<Vec<(f64, f64)>, VerifyError>>()?;
    let transport_h = max_of(&residuals.iter().map(|r| r.0).collect::<Vec<_>>());
    let transport_l = max_of(&residuals.iter().map(|r| r.1).collect::<Vec<_>>());

    let subs = vec![
        CheckReport::at_most("displacement_h", column(0), displacement_tol).with_samples(points.len()),
        CheckReport::at_most("displacement_l", column(1), displacement_tol).with_samples(points.len()),
        CheckReport::at_most("composition_h_of_l", column(2), composition_tol).with_samples(points.len()),
        CheckReport::at_most("composition_l_of_h", column(3), composition_tol).with_samples(points.len()),
        CheckReport::at_most("transport_h", transport_h, config.transport_tol).with_samples(transport_points.len()),
        CheckReport::at_most("transport_l", transport_l, config.transport_tol).with_samples(transport_points.len()),
    ];
    let worst_ratio = subs
        .iter()
        .map(|c| c.measured / c.threshold)
        .fold(0.0, f64::max);
    Ok(CheckReport::at_most("conjugacy", worst_ratio, 1.0)
        .with_details("measured is the largest measured/threshold ratio over the sub-checks")
        .with_samples(points.len())
        .with_sub_checks(subs))
}

/// ODE residuals of `t ↦ H(t, y(t))` along the linear solution and of
/// `t ↦ L(t, x(t))` along the perturbed solution through `(t0, x0)`, by
/// central differences with step `dt`.
pub fn transport_residuals(
    ev: &ConjugacyEvaluator,
    t0: f64,
    x0: &DVector<f64>,
    dt: f64,
) -> Result<(f64, f64), VerifyError> {
    let sys = ev.system();
    let op = ev.operator();
    let linear_at = |t: f64| -> Result<DVector<f64>, VerifyError> { Ok(transition(op, t, t0)? * x0) };
    let h_at = |t: f64| -> Result<DVector<f64>, VerifyError> { Ok(ev.eval_h(t, &linear_at(t)?)?) };
    let centre = h_at(t0)?;
    let slope = (h_at(t0 + dt)? - h_at(t0 - dt)?) / (2.0 * dt);
    let residual_h = (slope - sys.field(Flow::Nonlinear, t0, &centre)).norm();

    let tol = ev.config().orbit_tol;
    let forward = integrate_flow(sys, Flow::Nonlinear, t0, x0, t0 + dt, tol)?.terminal_state();
    let backward = integrate_flow(sys, Flow::Nonlinear, t0, x0, t0 - dt, tol)?.terminal_state();
    let l_centre = ev.eval_l(t0, x0)?;
    let l_slope = (ev.eval_l(t0 + dt, &forward)? - ev.eval_l(t0 - dt, &backward)?) / (2.0 * dt);
    let residual_l = (l_slope - sys.field(Flow::Linear, t0, &l_centre)).norm();
    Ok((residual_h, residual_l))
}
