//! Linear and perturbed flows, fundamental matrices and Gronwall separation
//! envelopes.
//!
//! A [`SystemSpec`] pairs the linear part `A(t)` with a perturbation `f(t, x)`
//! together with the bounds the construction relies on. Everything here is
//! immutable once built and can be shared between threads.

mod dopri;
mod transition;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::operator_norm;

pub use dopri::Tolerance;
pub use transition::{fundamental_matrix, transition, TransitionOperator};

/// `t ↦ A(t)`.
pub type LinearPart = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;
/// `(t, x) ↦ f(t, x)`.
pub type Perturbation = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
/// Scalar function of time (pointwise and Lipschitz bound functions).
pub type ScalarFunction = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Default spacing of the sampling grids used for sup-estimates.
pub const DEFAULT_SAMPLING_STEP: f64 = 0.05;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("integration failed: step size underflow or non-finite state at t = {t_reached}")]
    IntegrationFailure { t_reached: f64 },
    #[error("fundamental matrix is numerically singular at node t = {node} (inverse residual {residual:e})")]
    Conditioning { node: f64, residual: f64 },
    #[error("time {t} lies outside the operator window [{lo}, {hi}]")]
    OutOfWindow { t: f64, lo: f64, hi: f64 },
    #[error("separation envelope failed: sampled ||A(t)|| not finite at t = {t}")]
    EnvelopeFailure { t: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Which bound family the perturbation satisfies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMode {
    BoundedLipschitz,
    Integrable,
}

impl fmt::Display for BoundMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundMode::BoundedLipschitz => write!(f, "bounded_lipschitz"),
            BoundMode::Integrable => write!(f, "integrable"),
        }
    }
}

/// Declared bounds on the perturbation.
#[derive(Clone)]
pub enum PerturbationBounds {
    /// `|f(t,x)| ≤ mu` and `|f(t,x₁) − f(t,x₂)| ≤ gamma |x₁ − x₂|`.
    BoundedLipschitz { mu: f64, gamma: f64 },
    /// `|f(t,x)| ≤ phi(t)`, Lipschitz function `psi(t)`, `∫phi < c1`, `∫psi < c2`.
    Integrable {
        phi: ScalarFunction,
        psi: ScalarFunction,
        c1: f64,
        c2: f64,
    },
}

impl PerturbationBounds {
    pub fn mode(&self) -> BoundMode {
        match self {
            PerturbationBounds::BoundedLipschitz { .. } => BoundMode::BoundedLipschitz,
            PerturbationBounds::Integrable { .. } => BoundMode::Integrable,
        }
    }
}

impl fmt::Debug for PerturbationBounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PerturbationBounds::BoundedLipschitz { mu, gamma } => f
                .debug_struct("BoundedLipschitz")
                .field("mu", mu)
                .field("gamma", gamma)
                .finish(),
            PerturbationBounds::Integrable { c1, c2, .. } => f
                .debug_struct("Integrable")
                .field("c1", c1)
                .field("c2", c2)
                .finish_non_exhaustive(),
        }
    }
}

/// Selects `x' = A(t)x` or `x' = A(t)x + f(t,x)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flow {
    Linear,
    Nonlinear,
}

/// The pair `(A(t), f(t,x))` with its declared bounds and optional period.
#[derive(Clone)]
pub struct SystemSpec {
    dimension: usize,
    linear: LinearPart,
    nonlinear: Perturbation,
    bounds: PerturbationBounds,
    period: Option<f64>,
}

impl fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemSpec")
            .field("dimension", &self.dimension)
            .field("bounds", &self.bounds)
            .field("period", &self.period)
            .finish_non_exhaustive()
    }
}

impl SystemSpec {
    pub fn new(
        dimension: usize,
        linear: LinearPart,
        nonlinear: Perturbation,
        bounds: PerturbationBounds,
    ) -> Result<Self, DynamicsError> {
        if dimension == 0 {
            return Err(DynamicsError::InvalidSystem("dimension must be at least 1".into()));
        }
        match &bounds {
            PerturbationBounds::BoundedLipschitz { mu, gamma } => {
                if !(*mu >= 0.0 && mu.is_finite() && *gamma >= 0.0 && gamma.is_finite()) {
                    return Err(DynamicsError::InvalidSystem(format!(
                        "mu and gamma must be finite and nonnegative (mu = {mu}, gamma = {gamma})"
                    )));
                }
            }
            PerturbationBounds::Integrable { c1, c2, .. } => {
                if !(*c1 > 0.0 && c1.is_finite() && *c2 > 0.0 && c2.is_finite()) {
                    return Err(DynamicsError::InvalidSystem(format!(
                        "c1 and c2 must be finite and positive (c1 = {c1}, c2 = {c2})"
                    )));
                }
            }
        }
        let probe = linear(0.0);
        if probe.nrows() != dimension || probe.ncols() != dimension {
            return Err(DynamicsError::InvalidSystem(format!(
                "A(t) is {}x{}, expected {dimension}x{dimension}",
                probe.nrows(),
                probe.ncols()
            )));
        }
        let fprobe = nonlinear(0.0, &DVector::zeros(dimension));
        if fprobe.len() != dimension {
            return Err(DynamicsError::InvalidSystem(format!(
                "f(t,x) has {} components, expected {dimension}",
                fprobe.len()
            )));
        }
        Ok(Self {
            dimension,
            linear,
            nonlinear,
            bounds,
            period: None,
        })
    }

    /// A purely linear system (`f ≡ 0`, `mu = gamma = 0`).
    pub fn linear(dimension: usize, linear: LinearPart) -> Result<Self, DynamicsError> {
        let zero: Perturbation = Arc::new(move |_, x: &DVector<f64>| DVector::zeros(x.len()));
        Self::new(
            dimension,
            linear,
            zero,
            PerturbationBounds::BoundedLipschitz { mu: 0.0, gamma: 0.0 },
        )
    }

    /// Declare a common period of `A` and `f`. The declaration is not enforced
    /// here; [`SystemSpec::period_defect`] measures how well it holds.
    pub fn with_period(mut self, period: f64) -> Result<Self, DynamicsError> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(DynamicsError::InvalidSystem(format!(
                "period must be positive, got {period}"
            )));
        }
        self.period = Some(period);
        Ok(self)
    }

    pub fn with_bounds(mut self, bounds: PerturbationBounds) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn bounds(&self) -> &PerturbationBounds {
        &self.bounds
    }

    pub fn mode(&self) -> BoundMode {
        self.bounds.mode()
    }

    pub fn period(&self) -> Option<f64> {
        self.period
    }

    pub fn a(&self, t: f64) -> DMatrix<f64> {
        (self.linear)(t)
    }

    pub fn f(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        (self.nonlinear)(t, x)
    }

    /// Right-hand side of the selected flow.
    pub fn field(&self, flow: Flow, t: f64, x: &DVector<f64>) -> DVector<f64> {
        let lin = self.a(t) * x;
        match flow {
            Flow::Linear => lin,
            Flow::Nonlinear => lin + self.f(t, x),
        }
    }

    /// Lipschitz rate entering the nonlinear separation envelope: `gamma`, or
    /// the sampled sup of `psi` over the window in integrable mode.
    pub fn lipschitz_rate(&self, window: (f64, f64)) -> f64 {
        match &self.bounds {
            PerturbationBounds::BoundedLipschitz { gamma, .. } => *gamma,
            PerturbationBounds::Integrable { psi, .. } => sampling_grid(window, DEFAULT_SAMPLING_STEP)
                .map(|t| psi(t))
                .fold(0.0, f64::max),
        }
    }

    /// Audit the declared bounds on a sampling grid. `probes` are the state
    /// samples at which `f` is evaluated.
    pub fn audit_bounds(&self, window: (f64, f64), step: f64, probes: &[DVector<f64>]) -> BoundsAudit {
        let mut audit = BoundsAudit::default();
        let times: Vec<f64> = sampling_grid(window, step).collect();
        for &t in &times {
            let envelope = match &self.bounds {
                PerturbationBounds::BoundedLipschitz { mu, .. } => *mu,
                PerturbationBounds::Integrable { phi, .. } => phi(t),
            };
            let lipschitz = match &self.bounds {
                PerturbationBounds::BoundedLipschitz { gamma, .. } => *gamma,
                PerturbationBounds::Integrable { psi, .. } => psi(t),
            };
            let values: Vec<DVector<f64>> = probes.iter().map(|x| self.f(t, x)).collect();
            for v in &values {
                audit.sup_excess = audit.sup_excess.max(v.norm() - envelope);
            }
            for i in 0..probes.len() {
                for j in (i + 1)..probes.len() {
                    let dx = (&probes[i] - &probes[j]).norm();
                    if dx > 0.0 {
                        let q = (&values[i] - &values[j]).norm() / dx;
                        audit.lipschitz_excess = audit.lipschitz_excess.max(q - lipschitz);
                    }
                }
            }
        }
        if let PerturbationBounds::Integrable { phi, psi, c1, c2 } = &self.bounds {
            let int_phi = simpson(|t| phi(t), window.0, window.1, step);
            let int_psi = simpson(|t| psi(t), window.0, window.1, step);
            audit.integral_phi = Some(int_phi);
            audit.integral_psi = Some(int_psi);
            audit.integral_excess = (int_phi - c1).max(int_psi - c2);
        }
        audit.samples = times.len() * probes.len();
        audit
    }

    /// Largest sampled violation of `A(t+T) = A(t)` and `f(t+T,x) = f(t,x)`.
    /// Returns `None` when no period is declared.
    pub fn period_defect(&self, window: (f64, f64), probes: &[DVector<f64>]) -> Option<(f64, f64)> {
        let period = self.period?;
        let mut a_defect = 0.0_f64;
        let mut f_defect = 0.0_f64;
        for t in sampling_grid(window, DEFAULT_SAMPLING_STEP) {
            a_defect = a_defect.max(crate::linalg::max_abs(&(self.a(t + period) - self.a(t))));
            for x in probes {
                f_defect = f_defect.max((self.f(t + period, x) - self.f(t, x)).amax());
            }
        }
        Some((a_defect, f_defect))
    }
}

/// Result of [`SystemSpec::audit_bounds`]. Non-positive excesses mean the
/// declared bounds hold on the samples.
#[derive(Clone, Debug, Default, Serialize)]
pub struct BoundsAudit {
    pub sup_excess: f64,
    pub lipschitz_excess: f64,
    pub integral_phi: Option<f64>,
    pub integral_psi: Option<f64>,
    pub integral_excess: f64,
    pub samples: usize,
}

impl BoundsAudit {
    pub fn holds(&self, tol: f64) -> bool {
        self.sup_excess <= tol && self.lipschitz_excess <= tol && self.integral_excess <= tol
    }
}

/// Uniform grid `lo, lo+step, …` ending exactly at `hi`.
pub fn sampling_grid(window: (f64, f64), step: f64) -> impl Iterator<Item = f64> {
    let (lo, hi) = window;
    let n = ((hi - lo) / step).ceil().max(1.0) as usize;
    let h = (hi - lo) / n as f64;
    (0..=n).map(move |k| if k == n { hi } else { lo + h * k as f64 })
}

fn simpson<F: Fn(f64) -> f64>(g: F, a: f64, b: f64, step: f64) -> f64 {
    let mut n = ((b - a) / step).ceil().max(2.0) as usize;
    if n % 2 == 1 {
        n += 1;
    }
    let h = (b - a) / n as f64;
    let mut acc = g(a) + g(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * g(a + h * k as f64);
    }
    acc * h / 3.0
}

/// A solution leg `x(t, t₀, x₀)` from `t₀` to `t₁` (either direction) with
/// dense output.
#[derive(Clone, Debug)]
pub struct Trajectory {
    anchor_time: f64,
    anchor_state: DVector<f64>,
    direction: f64,
    end_time: f64,
    segments: Vec<dopri::Segment>,
}

impl Trajectory {
    pub fn anchor(&self) -> (f64, &DVector<f64>) {
        (self.anchor_time, &self.anchor_state)
    }

    pub fn end_time(&self) -> f64 {
        self.end_time
    }

    /// Accepted step times in strictly increasing order.
    pub fn times(&self) -> Vec<f64> {
        let mut out: Vec<f64> = std::iter::once(self.anchor_time)
            .chain(self.segments.iter().map(|s| self.to_time(s.end())))
            .collect();
        if self.direction < 0.0 {
            out.reverse();
        }
        out
    }

    /// States at [`Trajectory::times`].
    pub fn states(&self) -> Vec<DVector<f64>> {
        let mut out: Vec<DVector<f64>> = std::iter::once(self.anchor_state.clone())
            .chain(self.segments.iter().map(|s| s.eval(s.end())))
            .collect();
        if self.direction < 0.0 {
            out.reverse();
        }
        out
    }

    pub fn terminal_state(&self) -> DVector<f64> {
        self.segments
            .last()
            .map(|s| s.eval(s.end()))
            .unwrap_or_else(|| self.anchor_state.clone())
    }

    /// Whether `t` lies between the anchor and the end time.
    pub fn covers(&self, t: f64) -> bool {
        let (lo, hi) = if self.direction > 0.0 {
            (self.anchor_time, self.end_time)
        } else {
            (self.end_time, self.anchor_time)
        };
        t >= lo && t <= hi
    }

    /// Dense-output state at `t`; `None` outside the covered span.
    pub fn state_at(&self, t: f64) -> Option<DVector<f64>> {
        if !self.covers(t) {
            return None;
        }
        if t == self.anchor_time {
            return Some(self.anchor_state.clone());
        }
        let tau = self.direction * (t - self.anchor_time);
        let idx = self.segments.partition_point(|s| s.end() < tau);
        let seg = self.segments.get(idx).or_else(|| self.segments.last())?;
        Some(seg.eval(tau))
    }

    fn to_time(&self, tau: f64) -> f64 {
        self.anchor_time + self.direction * tau
    }
}

/// Develop the generic leg `y' = rhs(t, y)` from `t0` to `t1`; backward legs
/// integrate the time-reversed field.
pub(crate) fn integrate_leg<F>(
    rhs: F,
    t0: f64,
    y0: &DVector<f64>,
    t1: f64,
    tol: Tolerance,
    groups: usize,
) -> Result<Trajectory, DynamicsError>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let direction = if t1 >= t0 { 1.0 } else { -1.0 };
    let span = (t1 - t0).abs();
    let segments = dopri::integrate(
        |tau, y| {
            let v = rhs(t0 + direction * tau, y);
            if direction > 0.0 {
                v
            } else {
                -v
            }
        },
        y0,
        span,
        tol,
        groups,
    )
    .map_err(|e| DynamicsError::IntegrationFailure {
        t_reached: t0 + direction * e.tau_reached,
    })?;
    Ok(Trajectory {
        anchor_time: t0,
        anchor_state: y0.clone(),
        direction,
        end_time: t1,
        segments,
    })
}

/// Solve the linear or perturbed system from `(t0, x0)` to `t1`.
pub fn integrate_flow(
    system: &SystemSpec,
    flow: Flow,
    t0: f64,
    x0: &DVector<f64>,
    t1: f64,
    tol: f64,
) -> Result<Trajectory, DynamicsError> {
    if !(tol > 0.0) {
        return Err(DynamicsError::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    if x0.len() != system.dimension() {
        return Err(DynamicsError::InvalidArgument(format!(
            "initial state has {} components, expected {}",
            x0.len(),
            system.dimension()
        )));
    }
    integrate_leg(
        |t, x| system.field(flow, t, x),
        t0,
        x0,
        t1,
        Tolerance::mixed(tol, tol * 1e-3),
        1,
    )
}

/// Orbit through `(t0, x0)` covering `[lo, hi]` (both legs).
#[derive(Clone, Debug)]
pub struct Orbit {
    forward: Trajectory,
    backward: Trajectory,
}

impl Orbit {
    pub fn through(
        system: &SystemSpec,
        flow: Flow,
        t0: f64,
        x0: &DVector<f64>,
        window: (f64, f64),
        tol: f64,
    ) -> Result<Self, DynamicsError> {
        let forward = integrate_flow(system, flow, t0, x0, window.1.max(t0), tol)?;
        let backward = integrate_flow(system, flow, t0, x0, window.0.min(t0), tol)?;
        Ok(Self { forward, backward })
    }

    pub fn state_at(&self, t: f64) -> Option<DVector<f64>> {
        if t >= self.forward.anchor_time {
            self.forward.state_at(t)
        } else {
            self.backward.state_at(t)
        }
    }
}

/// Which of the two separation envelopes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeKind {
    /// Pairs of solutions of the linear system.
    Linear,
    /// Pairs of solutions of the perturbed system.
    Nonlinear,
}

/// Gronwall envelope `Δ(t,s) = exp(rate · |t − s|)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationBound {
    pub rate: f64,
    pub kind: EnvelopeKind,
}

impl SeparationBound {
    pub fn delta(&self, t: f64, s: f64) -> f64 {
        (self.rate * (t - s).abs()).exp()
    }
}

/// Envelope rate `sup‖A‖` (linear) or `sup‖A‖ + γ` (nonlinear) over the
/// default sampling grid of `window`.
pub fn separation_envelope(
    system: &SystemSpec,
    kind: EnvelopeKind,
    window: (f64, f64),
) -> Result<SeparationBound, DynamicsError> {
    let mut sup = 0.0_f64;
    for t in sampling_grid(window, DEFAULT_SAMPLING_STEP) {
        let norm = operator_norm(&system.a(t));
        if !norm.is_finite() {
            return Err(DynamicsError::EnvelopeFailure { t });
        }
        sup = sup.max(norm);
    }
    let rate = match kind {
        EnvelopeKind::Linear => sup,
        EnvelopeKind::Nonlinear => sup + system.lipschitz_rate(window),
    };
    Ok(SeparationBound { rate, kind })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn example_2_5() -> SystemSpec {
        SystemSpec::linear(1, Arc::new(|t: f64| DMatrix::from_element(1, 1, -t.tanh()))).unwrap()
    }

    fn rotation() -> SystemSpec {
        SystemSpec::linear(
            2,
            Arc::new(|_| DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])),
        )
        .unwrap()
    }

    #[test]
    fn cosh_decay_terminal_value() {
        let sys = example_2_5();
        let x0 = DVector::from_element(1, 1.0);
        let traj = integrate_flow(&sys, Flow::Linear, 0.0, &x0, 2.0, 1e-11).unwrap();
        let expected = 2.0 / (2.0_f64.exp() + (-2.0_f64).exp());
        assert!((traj.terminal_state()[0] - expected).abs() < 1e-8);
        assert!((expected - 0.26580).abs() < 1e-5);
        assert_eq!(traj.anchor().1, &x0);
    }

    #[test]
    fn zero_perturbation_matches_linear_flow() {
        let sys = example_2_5();
        let x0 = DVector::from_element(1, 0.7);
        let lin = integrate_flow(&sys, Flow::Linear, 0.5, &x0, -3.0, 1e-10).unwrap();
        let non = integrate_flow(&sys, Flow::Nonlinear, 0.5, &x0, -3.0, 1e-10).unwrap();
        assert!((lin.terminal_state() - non.terminal_state()).amax() < 1e-10);
    }

    #[test]
    fn rotation_quarter_turn() {
        let sys = rotation();
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let traj = integrate_flow(&sys, Flow::Nonlinear, 0.0, &x0, FRAC_PI_2, 1e-11).unwrap();
        let end = traj.terminal_state();
        assert!(end[0].abs() < 1e-8);
        assert!((end[1] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn backward_leg_has_increasing_times() {
        let sys = rotation();
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let traj = integrate_flow(&sys, Flow::Linear, 1.0, &x0, -2.0, 1e-9).unwrap();
        let times = traj.times();
        assert!(times.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*times.first().unwrap(), -2.0);
        assert_eq!(*times.last().unwrap(), 1.0);
        let states = traj.states();
        // local residual: midpoint derivative against the field
        for k in 0..times.len() - 1 {
            let (ta, tb) = (times[k], times[k + 1]);
            let mid = 0.5 * (ta + tb);
            let h = 1e-5;
            let slope = (traj.state_at(mid + h).unwrap() - traj.state_at(mid - h).unwrap()) / (2.0 * h);
            let field = sys.field(Flow::Linear, mid, &traj.state_at(mid).unwrap());
            assert!((slope - field).amax() < 1e-5, "residual at {mid}");
        }
        assert_eq!(states.len(), times.len());
    }

    #[test]
    fn blow_up_is_an_integration_failure() {
        let sys = SystemSpec::new(
            1,
            Arc::new(|_| DMatrix::zeros(1, 1)),
            Arc::new(|_, x: &DVector<f64>| x.component_mul(x)),
            PerturbationBounds::BoundedLipschitz { mu: 1.0, gamma: 1.0 },
        )
        .unwrap();
        let err = integrate_flow(&sys, Flow::Nonlinear, 0.0, &DVector::from_element(1, 1.0), 3.0, 1e-8)
            .unwrap_err();
        match err {
            DynamicsError::IntegrationFailure { t_reached } => assert!(t_reached < 1.0 + 1e-6),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn envelope_rates() {
        let zero = SystemSpec::linear(2, Arc::new(|_| DMatrix::zeros(2, 2))).unwrap();
        let env = separation_envelope(&zero, EnvelopeKind::Linear, (-5.0, 5.0)).unwrap();
        assert_eq!(env.rate, 0.0);
        assert_eq!(env.delta(3.0, -1.0), 1.0);

        let sys = example_2_5();
        let env = separation_envelope(&sys, EnvelopeKind::Linear, (-20.0, 20.0)).unwrap();
        assert!(env.rate <= 1.0 && env.rate > 1.0 - 1e-12);

        let delta = 0.1;
        let perturbed = SystemSpec::new(
            1,
            Arc::new(|t: f64| DMatrix::from_element(1, 1, -t.tanh())),
            Arc::new(move |t, x: &DVector<f64>| x.map(|v| delta * t.sin() * v.sin())),
            PerturbationBounds::BoundedLipschitz { mu: delta, gamma: delta },
        )
        .unwrap();
        let env = separation_envelope(&perturbed, EnvelopeKind::Nonlinear, (-20.0, 20.0)).unwrap();
        assert!((env.rate - 1.1).abs() < 1e-12);
    }

    #[test]
    fn envelope_overflow_is_reported() {
        let sys = SystemSpec::linear(1, Arc::new(|t: f64| DMatrix::from_element(1, 1, if t > 1.0 { f64::INFINITY } else { 0.0 }))).unwrap();
        assert!(matches!(
            separation_envelope(&sys, EnvelopeKind::Linear, (0.0, 2.0)),
            Err(DynamicsError::EnvelopeFailure { .. })
        ));
    }

    #[test]
    fn period_audit() {
        let periodic = SystemSpec::linear(1, Arc::new(|t: f64| DMatrix::from_element(1, 1, -2.0 + t.cos())))
            .unwrap()
            .with_period(std::f64::consts::TAU)
            .unwrap();
        let (a, f) = periodic.period_defect((-5.0, 5.0), &[DVector::from_element(1, 1.0)]).unwrap();
        assert!(a < 1e-12 && f == 0.0);
        let aperiodic = example_2_5().with_period(1.0).unwrap();
        let (a, _) = aperiodic.period_defect((-5.0, 5.0), &[]).unwrap();
        assert!(a > 0.1);
    }

    #[test]
    fn invalid_systems_are_rejected() {
        assert!(SystemSpec::linear(0, Arc::new(|_| DMatrix::zeros(0, 0))).is_err());
        assert!(SystemSpec::linear(2, Arc::new(|_| DMatrix::zeros(1, 1))).is_err());
        assert!(example_2_5().with_period(-1.0).is_err());
    }
}
