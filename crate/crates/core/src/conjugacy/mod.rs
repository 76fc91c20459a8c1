//! The equivalence maps between the perturbed and the linear system.
//!
//! `H` carries solutions of the linear system to solutions of the perturbed
//! one, `L` the other way. Both are evaluated one point at a time: a query
//! `(t*, η)` samples the orbit through that point on a truncated quadrature
//! window and solves the kernel fixed point along it.

mod orbit;
pub mod quadrature;

use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{
    BoundMode, DynamicsError, Flow, Orbit, PerturbationBounds, SystemSpec, TransitionOperator,
    DEFAULT_SAMPLING_STEP,
};
use crate::dynamics::sampling_grid;
use crate::report::CheckReport;
use crate::trichotomy::{SplitProjections, TrichotomyCertificate, TrichotomyError};

pub use orbit::{KernelProjectors, OrbitKind, OrbitTable};
pub use quadrature::QuadratureScheme;

use orbit::Layout;
use quadrature::half_width_for;

/// Largest accepted mismatch between a split and the certified projections.
const SPLIT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ConjugacyError {
    #[error("contraction premise violated: constant {constant:.6} is not below 1")]
    PremiseViolated { constant: f64 },
    #[error("integrable bounds require a split of the projections")]
    MissingSplit,
    #[error("split projections do not reproduce the certified P, Q (max defect {defect:e})")]
    InconsistentSplit { defect: f64 },
    #[error("fixed point did not converge in {sweeps} sweeps (last change {last_delta:e}, contraction ratio {ratio:.4})")]
    NonConvergence { sweeps: usize, last_delta: f64, ratio: f64 },
    #[error("operation requires {expected} bounds")]
    WrongMode { expected: BoundMode },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Trichotomy(#[from] TrichotomyError),
}

/// Knobs of the evaluator.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvaluatorConfig {
    /// Stop once a sweep changes the iterate by at most this (sup norm).
    pub fp_tol: f64,
    pub max_sweeps: usize,
    pub tail_tol: f64,
    pub step: f64,
    /// Replace the tail-derived half width.
    pub half_width: Option<f64>,
    /// Relative tolerance of nonlinear orbit integration.
    pub orbit_tol: f64,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        Self {
            fp_tol: 1e-8,
            max_sweeps: 200,
            tail_tol: 1e-9,
            step: 0.01,
            half_width: None,
            orbit_tol: 1e-11,
        }
    }
}

/// Evaluator of `H` and `L` for a certified system.
#[derive(Clone, Debug)]
pub struct ConjugacyEvaluator {
    system: SystemSpec,
    op: Arc<TransitionOperator>,
    certificate: TrichotomyCertificate,
    split: Option<SplitProjections>,
    projectors: KernelProjectors,
    scheme: QuadratureScheme,
    config: EvaluatorConfig,
    premise: f64,
    sup_bound: f64,
    /// `μ`, or the sampled sup of `φ`.
    forcing_sup: f64,
}

/// Scalar summary for reports.
#[derive(Clone, Debug, Serialize)]
pub struct EvaluatorSummary {
    pub mode: BoundMode,
    pub premise_constant: f64,
    pub sup_bound: f64,
    pub quadrature: QuadratureScheme,
    pub fp_tol: f64,
    pub max_sweeps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa2: Option<f64>,
}

/// Check the contraction premise for the system's bounds and assemble an
/// evaluator.
///
/// Bounded-Lipschitz bounds need `3βγ/α < 1` and give `|H − id| ≤ 3βμ/α`;
/// integrable bounds need `(β + 2κ₁ + κ₂) c₂ < 1` and give
/// `|H − id| ≤ (β + 2κ₁ + κ₂) c₁`, using a split of the projections.
pub fn build_evaluator(
    system: &SystemSpec,
    op: Arc<TransitionOperator>,
    certificate: &TrichotomyCertificate,
    split: Option<&SplitProjections>,
    config: EvaluatorConfig,
) -> Result<ConjugacyEvaluator, ConjugacyError> {
    if !(config.fp_tol > 0.0 && config.tail_tol > 0.0 && config.step > 0.0 && config.orbit_tol > 0.0) {
        return Err(ConjugacyError::InvalidConfig(
            "fp_tol, tail_tol, step and orbit_tol must be positive".into(),
        ));
    }
    if config.max_sweeps == 0 {
        return Err(ConjugacyError::InvalidConfig("max_sweeps must be at least 1".into()));
    }
    if certificate.projections.dimension() != system.dimension() || op.dimension() != system.dimension() {
        return Err(ConjugacyError::InvalidConfig(
            "certificate, transition operator and system dimensions differ".into(),
        ));
    }
    let (beta, alpha) = (certificate.beta, certificate.alpha);
    let window = op.window();
    let cap = 0.5 * (window.1 - window.0);

    let (premise, sup_bound, forcing_sup, projectors, split, scale) = match system.bounds() {
        PerturbationBounds::BoundedLipschitz { mu, gamma } => {
            let premise = 3.0 * beta * gamma / alpha;
            (
                premise,
                3.0 * beta * mu / alpha,
                *mu,
                KernelProjectors::green(&certificate.projections),
                None,
                3.0 * beta * mu / alpha,
            )
        }
        PerturbationBounds::Integrable { phi, c1, c2, .. } => {
            let split = split.ok_or(ConjugacyError::MissingSplit)?;
            let defect = split.mismatch(&certificate.projections);
            if !(defect <= SPLIT_TOLERANCE) {
                return Err(ConjugacyError::InconsistentSplit { defect });
            }
            let weight = beta + 2.0 * split.kappa1 + split.kappa2;
            let phi_sup = sampling_grid(window, DEFAULT_SAMPLING_STEP)
                .map(|t| phi(t))
                .fold(0.0, f64::max);
            (
                weight * c2,
                weight * c1,
                phi_sup,
                KernelProjectors::split(split),
                Some(split.clone()),
                2.0 * beta * phi_sup / alpha,
            )
        }
    };
    if !(premise < 1.0) {
        return Err(ConjugacyError::PremiseViolated { constant: premise });
    }

    let half_width = match config.half_width {
        Some(s) if s > 0.0 => s.min(cap),
        Some(s) => return Err(ConjugacyError::InvalidConfig(format!("half width must be positive, got {s}"))),
        None => half_width_for(scale, alpha, config.tail_tol, cap),
    };
    let mut ev = ConjugacyEvaluator {
        system: system.clone(),
        op,
        certificate: certificate.clone(),
        split,
        projectors,
        scheme: QuadratureScheme {
            half_width,
            step: config.step,
            tail_tol: config.tail_tol,
            tail_bound: 0.0,
        },
        config,
        premise,
        sup_bound,
        forcing_sup,
    };
    ev.scheme.tail_bound = ev.tail_for(half_width, half_width, 0.0);
    Ok(ev)
}

impl ConjugacyEvaluator {
    pub fn system(&self) -> &SystemSpec {
        &self.system
    }

    pub fn operator(&self) -> &TransitionOperator {
        &self.op
    }

    pub fn certificate(&self) -> &TrichotomyCertificate {
        &self.certificate
    }

    pub fn split(&self) -> Option<&SplitProjections> {
        self.split.as_ref()
    }

    pub fn projectors(&self) -> &KernelProjectors {
        &self.projectors
    }

    pub fn scheme(&self) -> &QuadratureScheme {
        &self.scheme
    }

    pub fn config(&self) -> &EvaluatorConfig {
        &self.config
    }

    pub fn mode(&self) -> BoundMode {
        self.system.mode()
    }

    /// Contraction constant checked at construction.
    pub fn premise_constant(&self) -> f64 {
        self.premise
    }

    /// Bound on `|H(t,y) − y|` and `|L(t,x) − x|`.
    pub fn sup_bound(&self) -> f64 {
        self.sup_bound
    }

    pub fn summary(&self) -> EvaluatorSummary {
        EvaluatorSummary {
            mode: self.mode(),
            premise_constant: self.premise,
            sup_bound: self.sup_bound,
            quadrature: self.scheme,
            fp_tol: self.config.fp_tol,
            max_sweeps: self.config.max_sweeps,
            kappa1: self.split.as_ref().map(|s| s.kappa1),
            kappa2: self.split.as_ref().map(|s| s.kappa2),
        }
    }

    /// Neglected mass for an anchor with `left`/`right` extents of its window.
    fn tail_for(&self, left: f64, right: f64, t_star: f64) -> f64 {
        let (beta, alpha) = (self.certificate.beta, self.certificate.alpha);
        let decaying = beta * self.forcing_sup / alpha * ((-alpha * left).exp() + (-alpha * right).exp());
        match (self.system.bounds(), &self.split) {
            (PerturbationBounds::Integrable { phi, c1, .. }, Some(split)) if split.kappa1 + split.kappa2 > 0.0 => {
                let inside = simpson(|s| phi(s), t_star - left, t_star + right, self.scheme.step.max(1e-3));
                decaying + (2.0 * split.kappa1 + split.kappa2) * (c1 - inside).max(0.0)
            }
            _ => decaying,
        }
    }

    fn layout_for(&self, t_star: f64) -> Result<Layout, ConjugacyError> {
        let (lo, hi) = self.op.window();
        if !(t_star >= lo && t_star <= hi) {
            return Err(DynamicsError::OutOfWindow { t: t_star, lo, hi }.into());
        }
        let s = self.scheme.half_width;
        Layout::covering((t_star - s).max(lo), (t_star + s).min(hi), self.scheme.step)
    }

    fn check_state(&self, v: &DVector<f64>) -> Result<(), ConjugacyError> {
        if v.len() != self.system.dimension() || !v.iter().all(|x| x.is_finite()) {
            return Err(ConjugacyError::InvalidConfig(format!(
                "state must be a finite vector of dimension {}",
                self.system.dimension()
            )));
        }
        Ok(())
    }

    /// Table over the linear orbit through `(t*, η)`.
    fn linear_table(&self, t_star: f64, eta: &DVector<f64>) -> Result<OrbitTable, ConjugacyError> {
        self.check_state(eta)?;
        let layout = self.layout_for(t_star)?;
        let coefficient = self.op.solve_at(t_star, eta)?;
        let states = (0..layout.len)
            .map(|j| Ok(self.op.u_at(layout.node(j))? * &coefficient))
            .collect::<Result<Vec<_>, DynamicsError>>()?;
        let tail = self.tail_for(t_star - layout.start(), layout.end() - t_star, t_star);
        OrbitTable::new(&self.op, layout, t_star, eta.clone(), OrbitKind::Linear, states, tail)
    }

    /// Table over the perturbed orbit through `(t*, ξ)`.
    fn nonlinear_table(&self, t_star: f64, xi: &DVector<f64>) -> Result<OrbitTable, ConjugacyError> {
        self.check_state(xi)?;
        let layout = self.layout_for(t_star)?;
        let orbit = Orbit::through(
            &self.system,
            Flow::Nonlinear,
            t_star,
            xi,
            (layout.start(), layout.end()),
            self.config.orbit_tol,
        )?;
        let states = (0..layout.len)
            .map(|j| {
                let s = layout.node(j);
                orbit
                    .state_at(s)
                    .ok_or(DynamicsError::IntegrationFailure { t_reached: s })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let tail = self.tail_for(t_star - layout.start(), layout.end() - t_star, t_star);
        OrbitTable::new(&self.op, layout, t_star, xi.clone(), OrbitKind::Nonlinear, states, tail)
    }

    fn forcing(&self, table: &OrbitTable) -> Vec<DVector<f64>> {
        table
            .nodes
            .iter()
            .zip(&table.orbit_states)
            .zip(&table.iterate)
            .map(|((&s, y), phi)| self.system.f(s, &(y + phi)))
            .collect()
    }

    fn iterate_to_fixed_point(&self, table: &mut OrbitTable) -> Result<(), ConjugacyError> {
        loop {
            let next = table.apply(&self.projectors, &self.forcing(table))?;
            let delta = table.record_sweep(next);
            if !delta.is_finite() {
                return Err(ConjugacyError::NonConvergence {
                    sweeps: table.sweeps,
                    last_delta: delta,
                    ratio: f64::NAN,
                });
            }
            if delta <= self.config.fp_tol {
                return Ok(());
            }
            if table.sweeps >= self.config.max_sweeps {
                return Err(ConjugacyError::NonConvergence {
                    sweeps: table.sweeps,
                    last_delta: delta,
                    ratio: table.ratios().last().copied().unwrap_or(f64::NAN),
                });
            }
        }
    }

    /// `h(t*, η)`: the displacement `H(t*, η) − η`, with the table of the
    /// orbit-restricted fixed point.
    pub fn solve_h(&self, t_star: f64, eta: &DVector<f64>) -> Result<(DVector<f64>, OrbitTable), ConjugacyError> {
        let mut table = self.linear_table(t_star, eta)?;
        self.iterate_to_fixed_point(&mut table)?;
        Ok((table.value_at(t_star), table))
    }

    /// Table of `−∫K(s,r) f(r, x(r)) dr` along the perturbed orbit.
    pub fn solve_l_table(&self, t_star: f64, xi: &DVector<f64>) -> Result<OrbitTable, ConjugacyError> {
        let mut table = self.nonlinear_table(t_star, xi)?;
        let forcing: Vec<DVector<f64>> = table
            .nodes
            .iter()
            .zip(&table.orbit_states)
            .map(|(&s, x)| self.system.f(s, x))
            .collect();
        let image = table.apply(&self.projectors, &forcing)?;
        table.record_sweep(image.into_iter().map(|v| -v).collect());
        Ok(table)
    }

    /// `l(t*, ξ)`: the displacement `L(t*, ξ) − ξ`.
    pub fn solve_l(&self, t_star: f64, xi: &DVector<f64>) -> Result<DVector<f64>, ConjugacyError> {
        Ok(self.solve_l_table(t_star, xi)?.value_at(t_star))
    }

    /// `H(t, y) = y + h(t, y)`.
    pub fn eval_h(&self, t: f64, y: &DVector<f64>) -> Result<DVector<f64>, ConjugacyError> {
        Ok(y + self.solve_h(t, y)?.0)
    }

    /// `L(t, x) = x + l(t, x)`.
    pub fn eval_l(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>, ConjugacyError> {
        Ok(x + self.solve_l(t, x)?)
    }

    /// Evaluate `H` and `L` at every point, in parallel; row order follows the
    /// input.
    pub fn evaluate_points(&self, points: &[(f64, DVector<f64>)]) -> Vec<Result<GridRow, ConjugacyError>> {
        points
            .par_iter()
            .map(|(t, state)| {
                let (h, table) = self.solve_h(*t, state)?;
                let l = self.solve_l(*t, state)?;
                Ok(GridRow {
                    t: *t,
                    state: state.iter().copied().collect(),
                    h_image: (state + h).iter().copied().collect(),
                    l_image: (state + l).iter().copied().collect(),
                    sweeps: table.sweeps,
                    last_delta: table.last_delta(),
                })
            })
            .collect()
    }
}

/// One evaluated grid point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridRow {
    pub t: f64,
    pub state: Vec<f64>,
    pub h_image: Vec<f64>,
    pub l_image: Vec<f64>,
    pub sweeps: usize,
    pub last_delta: f64,
}

/// Agreement at `t = 0` of the positive-time and negative-time constructions
/// of `h`.
///
/// For each `η` the fixed point anchored at `(0, η)` is read off with the
/// `s ≥ 0` formula; the one anchored one node earlier on the same linear orbit
/// is read off at `s = 0` with the `s < 0` formula. The two must agree to
/// `2·fp_tol + tail_tol`. The details record the ceiling
/// `r/(1−r)·(2·fp_tol + tail_bound)` with `r = 2βγ/α`.
pub fn glue_check_zero(ev: &ConjugacyEvaluator, etas: &[DVector<f64>]) -> Result<CheckReport, ConjugacyError> {
    let PerturbationBounds::BoundedLipschitz { gamma, .. } = ev.system.bounds() else {
        return Err(ConjugacyError::WrongMode {
            expected: BoundMode::BoundedLipschitz,
        });
    };
    let threshold = 2.0 * ev.config.fp_tol + ev.config.tail_tol;
    let h = ev.scheme.step;
    let defects = etas
        .par_iter()
        .map(|eta| {
            let (_, positive) = ev.solve_h(0.0, eta)?;
            let z = positive.zero_node().ok_or_else(|| {
                ConjugacyError::InvalidConfig("t = 0 is outside the transition window".into())
            })?;
            let right_value = positive.iterate[z].clone();

            let y_before = crate::dynamics::transition(&ev.op, -h, 0.0)? * eta;
            let (_, negative) = ev.solve_h(-h, &y_before)?;
            let forcing = ev.forcing(&negative);
            let left_value = negative
                .left_form_at_zero(&ev.projectors, &forcing)?
                .ok_or_else(|| ConjugacyError::InvalidConfig("t = 0 is outside the transition window".into()))?;
            Ok((right_value - left_value).norm())
        })
        .collect::<Result<Vec<f64>, ConjugacyError>>()?;
    let worst = defects.iter().copied().fold(0.0, f64::max);
    let r = 2.0 * ev.certificate.beta * gamma / ev.certificate.alpha;
    let ceiling = if r < 1.0 {
        r / (1.0 - r) * (2.0 * ev.config.fp_tol + ev.scheme.tail_bound)
    } else {
        f64::INFINITY
    };
    Ok(CheckReport::at_most("glue_at_zero", worst, threshold)
        .with_details(format!("glue ratio 2βγ/α = {r:.6}; defect ceiling {ceiling:e}"))
        .with_samples(etas.len()))
}

/// Ceiling `r/(1−r)·(2·fp_tol + tail_bound)` of the glue defect.
pub fn glue_ceiling(ev: &ConjugacyEvaluator) -> Option<f64> {
    let PerturbationBounds::BoundedLipschitz { gamma, .. } = ev.system.bounds() else {
        return None;
    };
    let r = 2.0 * ev.certificate.beta * gamma / ev.certificate.alpha;
    (r < 1.0).then(|| r / (1.0 - r) * (2.0 * ev.config.fp_tol + ev.scheme.tail_bound))
}

fn simpson<F: Fn(f64) -> f64>(g: F, a: f64, b: f64, step: f64) -> f64 {
    let mut n = ((b - a) / step).ceil().max(2.0) as usize;
    if n % 2 == 1 {
        n += 1;
    }
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n)
        .map(|k| if k % 2 == 1 { 4.0 } else { 2.0 } * g(a + h * k as f64))
        .sum();
    (g(a) + g(b) + inner) * h / 3.0
}
