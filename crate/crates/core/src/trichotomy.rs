//! Projection data, certification of the four trichotomy inequalities and the
//! two Green kernels built from them.
//!
//! The inequalities, with `d = |t − s|`:
//!
//! | branch | projection | regime            |
//! |--------|------------|-------------------|
//! | 0      | `P`        | `0 ≤ s ≤ t`       |
//! | 1      | `I − P`    | `t ≤ s`, `s ≥ 0`  |
//! | 2      | `Q`        | `t ≤ s ≤ 0`       |
//! | 3      | `I − Q`    | `s ≤ t`, `s ≤ 0`  |
//!
//! each require `|U(t) Π U⁻¹(s)| ≤ β e^{−α d}`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{DynamicsError, TransitionOperator};
use crate::linalg::{block_projection, inverse, max_abs, operator_norm};
use crate::report::CheckReport;

/// Defect allowed in the projection identities for non-0/1 matrices.
pub const ALGEBRA_TOLERANCE: f64 = 1e-12;
/// Norms at or below this are treated as an identically vanishing branch.
const INACTIVE_NORM: f64 = 1e-13;
/// Default overflow guard for the κ estimates.
pub const DEFAULT_KAPPA_GUARD: f64 = 1e3;

#[derive(Debug, Error)]
pub enum TrichotomyError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(
        "no positive decay rate on branch {branch} (fitted slope {slope:.6}); worst pair t = {t}, s = {s}"
    )]
    NotTrichotomic { branch: usize, slope: f64, t: f64, s: f64 },
    #[error("kernel is ambiguous on the diagonal t = s = {t}; use a one-sided limit")]
    AmbiguousBranch { t: f64 },
    #[error("block {block} is unbounded on the grid: sampled sup {value:e} exceeds guard {guard:e}")]
    UnboundedBlock { block: usize, value: f64, guard: f64 },
    #[error("projections are not complementary: max |P - (I - Q)| = {defect:e}")]
    NotReducible { defect: f64 },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// The projections `P`, `Q` of the trichotomy.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProjectionPair {
    #[serde(serialize_with = "serialize_matrix")]
    pub p: DMatrix<f64>,
    #[serde(serialize_with = "serialize_matrix")]
    pub q: DMatrix<f64>,
}

pub(crate) fn serialize_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for i in 0..m.nrows() {
        let row: Vec<f64> = m.row(i).iter().copied().collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

impl ProjectionPair {
    pub fn new(p: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self, TrichotomyError> {
        if !p.is_square() || p.shape() != q.shape() {
            return Err(TrichotomyError::Shape(format!(
                "P is {}x{} and Q is {}x{}; both must be square of equal size",
                p.nrows(),
                p.ncols(),
                q.nrows(),
                q.ncols()
            )));
        }
        Ok(Self { p, q })
    }

    pub fn dimension(&self) -> usize {
        self.p.nrows()
    }

    fn identity(&self) -> DMatrix<f64> {
        DMatrix::identity(self.dimension(), self.dimension())
    }

    pub fn complement_p(&self) -> DMatrix<f64> {
        self.identity() - &self.p
    }

    pub fn complement_q(&self) -> DMatrix<f64> {
        self.identity() - &self.q
    }

    /// Projection of each inequality branch, in the order of the module table.
    pub fn branch_projections(&self) -> [DMatrix<f64>; 4] {
        [self.p.clone(), self.complement_p(), self.q.clone(), self.complement_q()]
    }

    /// `max |P − (I − Q)|`.
    pub fn dichotomy_defect(&self) -> f64 {
        max_abs(&(&self.p - self.complement_q()))
    }

    /// Signed projector `Π` with `G(t,s) = U(t) Π U⁻¹(s)`.
    pub fn kernel_projector(&self, t: f64, s: f64) -> Result<DMatrix<f64>, TrichotomyError> {
        if t == s {
            return Err(TrichotomyError::AmbiguousBranch { t });
        }
        let projector = if s < t {
            if s >= 0.0 {
                self.p.clone()
            } else {
                self.complement_q()
            }
        } else if s <= 0.0 {
            -&self.q
        } else {
            -self.complement_p()
        };
        Ok(projector)
    }

    /// One-sided limit of the signed projector as `s → t` from `side`.
    pub fn kernel_projector_limit(&self, t: f64, side: Side) -> DMatrix<f64> {
        match side {
            Side::Below => {
                if t > 0.0 {
                    self.p.clone()
                } else {
                    self.complement_q()
                }
            }
            Side::Above => {
                if t < 0.0 {
                    -&self.q
                } else {
                    -self.complement_p()
                }
            }
        }
    }
}

/// Side of a one-sided limit in the second kernel argument.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// `s ↑ t`.
    Below,
    /// `s ↓ t`.
    Above,
}

/// Defects of idempotency, commutation and `P + Q − PQ = I`.
pub fn check_projection_algebra(pair: &ProjectionPair) -> Result<CheckReport, TrichotomyError> {
    if !pair.p.is_square() || pair.p.shape() != pair.q.shape() {
        return Err(TrichotomyError::Shape("P and Q must be square of equal size".into()));
    }
    let (p, q) = (&pair.p, &pair.q);
    let idem_p = max_abs(&(p * p - p));
    let idem_q = max_abs(&(q * q - q));
    let commute = max_abs(&(p * q - q * p));
    let partition = max_abs(&(p + q - p * q - pair.identity()));
    let subs = vec![
        CheckReport::at_most("idempotent_p", idem_p, ALGEBRA_TOLERANCE),
        CheckReport::at_most("idempotent_q", idem_q, ALGEBRA_TOLERANCE),
        CheckReport::at_most("commute", commute, ALGEBRA_TOLERANCE),
        CheckReport::at_most("partition", partition, ALGEBRA_TOLERANCE),
    ];
    let worst = idem_p.max(idem_q).max(commute).max(partition);
    Ok(CheckReport::at_most("projection_algebra", worst, ALGEBRA_TOLERANCE)
        .with_samples(1)
        .with_sub_checks(subs))
}

/// Finer decomposition `P = P1 + P2 + P3`, `Q = P2 + P3 + P4` into coordinate
/// blocks, with the bounds of the two constant blocks.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SplitProjections {
    pub blocks: [usize; 4],
    #[serde(skip)]
    pub parts: [DMatrix<f64>; 4],
    pub kappa1: f64,
    pub kappa2: f64,
}

impl SplitProjections {
    /// Consecutive diagonal blocks of sizes `blocks`; κ's start at 0 and are
    /// set by [`estimate_kappas`] or [`SplitProjections::with_kappas`].
    pub fn from_blocks(blocks: [usize; 4]) -> Result<Self, TrichotomyError> {
        let n: usize = blocks.iter().sum();
        if n == 0 {
            return Err(TrichotomyError::InvalidSplit("block sizes sum to zero".into()));
        }
        let mut start = 0;
        let parts = blocks.map(|len| {
            let m = block_projection(n, start, len);
            start += len;
            m
        });
        Ok(Self {
            blocks,
            parts,
            kappa1: 0.0,
            kappa2: 0.0,
        })
    }

    pub fn with_kappas(mut self, kappa1: f64, kappa2: f64) -> Self {
        self.kappa1 = kappa1;
        self.kappa2 = kappa2;
        self
    }

    pub fn dimension(&self) -> usize {
        self.parts[0].nrows()
    }

    /// `P2 + P3`.
    pub fn middle(&self) -> DMatrix<f64> {
        &self.parts[1] + &self.parts[2]
    }

    /// The pair `(P1 + P2 + P3, P2 + P3 + P4)` induced by the split.
    pub fn induced_pair(&self) -> ProjectionPair {
        let middle = self.middle();
        ProjectionPair {
            p: &self.parts[0] + &middle,
            q: &middle + &self.parts[3],
        }
    }

    /// Largest deviation of the induced pair from `pair`.
    pub fn mismatch(&self, pair: &ProjectionPair) -> f64 {
        let induced = self.induced_pair();
        if induced.p.shape() != pair.p.shape() {
            return f64::INFINITY;
        }
        max_abs(&(induced.p - &pair.p)).max(max_abs(&(induced.q - &pair.q)))
    }

    /// Signed projector `Π̃` with `G̃(t,s) = U(t) Π̃ U⁻¹(s)`; realizes
    /// `∫_{−∞}^t P1 + ∫_0^t (P2+P3) − ∫_t^∞ P4` as one kernel.
    pub fn kernel_projector(&self, t: f64, s: f64) -> Result<DMatrix<f64>, TrichotomyError> {
        if t == s {
            return Err(TrichotomyError::AmbiguousBranch { t });
        }
        let projector = if s < t {
            if s >= 0.0 {
                &self.parts[0] + self.middle()
            } else {
                self.parts[0].clone()
            }
        } else if s <= 0.0 {
            -(&self.parts[3] + self.middle())
        } else {
            -&self.parts[3]
        };
        Ok(projector)
    }

    pub fn kernel_projector_limit(&self, t: f64, side: Side) -> DMatrix<f64> {
        match side {
            Side::Below => {
                if t > 0.0 {
                    &self.parts[0] + self.middle()
                } else {
                    self.parts[0].clone()
                }
            }
            Side::Above => {
                if t < 0.0 {
                    -(&self.parts[3] + self.middle())
                } else {
                    -&self.parts[3]
                }
            }
        }
    }
}

/// Uniform `(t, s)` sampling `[start, end]²` with spacing `step`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CertificationGrid {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl Default for CertificationGrid {
    fn default() -> Self {
        Self {
            start: -10.0,
            end: 10.0,
            step: 0.1,
        }
    }
}

impl CertificationGrid {
    pub fn new(start: f64, end: f64, step: f64) -> Result<Self, TrichotomyError> {
        if !(start < end && step > 0.0 && step.is_finite()) {
            return Err(TrichotomyError::InvalidGrid(format!(
                "need start < end and step > 0 (got [{start}, {end}], step {step})"
            )));
        }
        Ok(Self { start, end, step })
    }

    pub fn intervals(&self) -> usize {
        ((self.end - self.start) / self.step).round().max(1.0) as usize
    }

    /// Grid points; index arithmetic keeps `0` exactly on the grid when it is
    /// a multiple of the step away from `start`.
    pub fn points(&self) -> Vec<f64> {
        let n = self.intervals();
        let h = (self.end - self.start) / n as f64;
        (0..=n)
            .map(|k| {
                let v = self.start + h * k as f64;
                if v.abs() < 1e-12 * h {
                    0.0
                } else {
                    v
                }
            })
            .collect()
    }

    pub fn halved(&self) -> Self {
        Self {
            step: self.step / 2.0,
            ..*self
        }
    }
}

/// Fitted constants of the four inequalities.
#[derive(Clone, Debug, Serialize)]
pub struct TrichotomyCertificate {
    pub projections: ProjectionPair,
    pub beta: f64,
    pub alpha: f64,
    /// `max |U(t)ΠU⁻¹(s)| e^{α d} − β` per branch; `-β` for a vanishing branch.
    pub residuals: [f64; 4],
    /// Fitted decay rate per branch, `None` for vanishing branches.
    pub branch_rates: [Option<f64>; 4],
    pub grid: CertificationGrid,
}

impl TrichotomyCertificate {
    pub fn holds(&self) -> bool {
        self.residuals.iter().all(|r| *r <= 0.0)
    }
}

fn in_regime(branch: usize, t: f64, s: f64) -> bool {
    match branch {
        0 => 0.0 <= s && s <= t,
        1 => t <= s && s >= 0.0,
        2 => t <= s && s <= 0.0,
        _ => s <= t && s <= 0.0,
    }
}

/// Per-branch sampled data over a grid: for each integer distance `k`, the
/// largest norm, its location, and the overall largest scaled norm.
struct BranchSamples {
    profile: Vec<f64>,
    argmax: Vec<(f64, f64)>,
}

fn sample_branches(
    op: &TransitionOperator,
    pair: &ProjectionPair,
    grid: &CertificationGrid,
) -> Result<(Vec<BranchSamples>, f64), TrichotomyError> {
    let points = grid.points();
    let h = (grid.end - grid.start) / grid.intervals() as f64;
    let (lo, hi) = op.window();
    if points[0] < lo || *points.last().unwrap() > hi {
        return Err(DynamicsError::OutOfWindow { t: points[0], lo, hi }.into());
    }
    let us: Vec<DMatrix<f64>> = points.iter().map(|&t| op.u_at(t)).collect::<Result<_, _>>()?;
    let invs: Vec<DMatrix<f64>> = us
        .iter()
        .zip(&points)
        .map(|(u, &t)| {
            inverse(u).ok_or(TrichotomyError::Dynamics(DynamicsError::Conditioning {
                node: t,
                residual: f64::INFINITY,
            }))
        })
        .collect::<Result<_, _>>()?;
    let projections = pair.branch_projections();
    let n = points.len();

    let rows: Vec<Vec<BranchSamples>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let t = points[i];
            let left: Vec<DMatrix<f64>> = projections.iter().map(|p| &us[i] * p).collect();
            let mut out: Vec<BranchSamples> = (0..4)
                .map(|_| BranchSamples {
                    profile: vec![0.0; n],
                    argmax: vec![(f64::NAN, f64::NAN); n],
                })
                .collect();
            for (j, &s) in points.iter().enumerate() {
                let k = i.abs_diff(j);
                for b in 0..4 {
                    if !in_regime(b, t, s) {
                        continue;
                    }
                    let norm = operator_norm(&(&left[b] * &invs[j]));
                    let slot = &mut out[b];
                    if norm > slot.profile[k] || slot.argmax[k].0.is_nan() {
                        slot.profile[k] = norm.max(slot.profile[k]);
                        slot.argmax[k] = (t, s);
                    }
                }
            }
            out
        })
        .collect();

    let mut merged: Vec<BranchSamples> = (0..4)
        .map(|_| BranchSamples {
            profile: vec![0.0; n],
            argmax: vec![(f64::NAN, f64::NAN); n],
        })
        .collect();
    // fixed row order keeps ties (and hence argmax) independent of scheduling
    for row in rows {
        for (b, samples) in row.into_iter().enumerate() {
            for k in 0..n {
                if samples.argmax[k].0.is_nan() {
                    continue;
                }
                let m = &mut merged[b];
                if m.argmax[k].0.is_nan() || samples.profile[k] > m.profile[k] {
                    m.profile[k] = samples.profile[k];
                    m.argmax[k] = samples.argmax[k];
                }
            }
        }
    }
    Ok((merged, h))
}

/// Least-squares slope of `y` against `x`.
pub(crate) fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Fit `β`, `α` so that the four inequalities hold on `grid`.
///
/// For every active branch the upper envelope `d ↦ max ln|U(t)ΠU⁻¹(s)|` is
/// regressed against `d` on the far half of the sampled distances; `α` is the
/// smallest fitted rate (or `alpha_seed`). `β` is then the smallest value
/// `≥ 1` making every sampled inequality hold.
pub fn certify_trichotomy(
    op: &TransitionOperator,
    pair: &ProjectionPair,
    grid: &CertificationGrid,
    alpha_seed: Option<f64>,
) -> Result<TrichotomyCertificate, TrichotomyError> {
    if pair.dimension() != op.dimension() {
        return Err(TrichotomyError::Shape(format!(
            "projections are {0}x{0} but the system has dimension {1}",
            pair.dimension(),
            op.dimension()
        )));
    }
    if let Some(a) = alpha_seed {
        if !(a > 0.0 && a.is_finite()) {
            return Err(TrichotomyError::InvalidGrid(format!("alpha seed must be positive, got {a}")));
        }
    }
    let (samples, h) = sample_branches(op, pair, grid)?;

    let mut branch_rates = [None; 4];
    for (b, branch) in samples.iter().enumerate() {
        let active: Vec<usize> = (0..branch.profile.len())
            .filter(|&k| !branch.argmax[k].0.is_nan() && branch.profile[k] > INACTIVE_NORM)
            .collect();
        let Some(&k_max) = active.last() else { continue };
        let k_from = k_max.div_ceil(2);
        let (xs, ys): (Vec<f64>, Vec<f64>) = active
            .iter()
            .filter(|&&k| k >= k_from)
            .map(|&k| (h * k as f64, branch.profile[k].ln()))
            .unzip();
        if xs.len() < 2 {
            continue;
        }
        let slope = ls_slope(&xs, &ys);
        if !(slope < 0.0) {
            let (t, s) = branch.argmax[k_max];
            return Err(TrichotomyError::NotTrichotomic { branch: b, slope, t, s });
        }
        branch_rates[b] = Some(-slope);
    }

    let alpha = match alpha_seed {
        Some(a) => a,
        None => {
            let fitted = branch_rates.iter().flatten().fold(f64::INFINITY, |a, r| a.min(*r));
            // every branch vanishes beyond the diagonal: any rate works
            if fitted.is_finite() {
                fitted
            } else {
                1.0
            }
        }
    };

    let scaled: Vec<f64> = samples
        .iter()
        .map(|branch| {
            (0..branch.profile.len())
                .filter(|&k| !branch.argmax[k].0.is_nan())
                .map(|k| branch.profile[k] * (alpha * h * k as f64).exp())
                .fold(0.0, f64::max)
        })
        .collect();
    let beta = scaled.iter().fold(1.0_f64, |a, v| a.max(*v));
    if !beta.is_finite() {
        return Err(TrichotomyError::NotTrichotomic {
            branch: 0,
            slope: f64::NAN,
            t: f64::NAN,
            s: f64::NAN,
        });
    }
    let residuals = [0, 1, 2, 3].map(|b| scaled[b] - beta);
    Ok(TrichotomyCertificate {
        projections: pair.clone(),
        beta,
        alpha,
        residuals,
        branch_rates,
        grid: *grid,
    })
}

/// Largest relative excess `max(|U(t)ΠU⁻¹(s)| e^{αd} / β) − 1` of the
/// certificate's constants on another grid.
pub fn recheck_certificate(
    op: &TransitionOperator,
    certificate: &TrichotomyCertificate,
    grid: &CertificationGrid,
) -> Result<f64, TrichotomyError> {
    let (samples, h) = sample_branches(op, &certificate.projections, grid)?;
    let worst = samples
        .iter()
        .flat_map(|branch| {
            (0..branch.profile.len())
                .filter(|&k| !branch.argmax[k].0.is_nan())
                .map(move |k| branch.profile[k] * (certificate.alpha * h * k as f64).exp())
        })
        .fold(0.0, f64::max);
    Ok(worst / certificate.beta - 1.0)
}

/// `G(t,s)`.
pub fn green_g(
    op: &TransitionOperator,
    pair: &ProjectionPair,
    t: f64,
    s: f64,
) -> Result<DMatrix<f64>, TrichotomyError> {
    let projector = pair.kernel_projector(t, s)?;
    Ok(op.conjugated(t, &projector, s)?)
}

/// `lim G(t, s)` as `s → t` from `side`.
pub fn green_g_limit(
    op: &TransitionOperator,
    pair: &ProjectionPair,
    t: f64,
    side: Side,
) -> Result<DMatrix<f64>, TrichotomyError> {
    Ok(op.conjugated(t, &pair.kernel_projector_limit(t, side), t)?)
}

/// `G̃(t,s)`.
pub fn green_gtilde(
    op: &TransitionOperator,
    split: &SplitProjections,
    t: f64,
    s: f64,
) -> Result<DMatrix<f64>, TrichotomyError> {
    let projector = split.kernel_projector(t, s)?;
    Ok(op.conjugated(t, &projector, s)?)
}

pub fn green_gtilde_limit(
    op: &TransitionOperator,
    split: &SplitProjections,
    t: f64,
    side: Side,
) -> Result<DMatrix<f64>, TrichotomyError> {
    Ok(op.conjugated(t, &split.kernel_projector_limit(t, side), t)?)
}

/// Sampled `κ₁ = sup_{s ≤ t} |U(t)P1U⁻¹(s)|` and `κ₂ = sup_{s ≥ t} |U(t)P4U⁻¹(s)|`,
/// the ranges over which the operator integrates the two blocks.
pub fn estimate_kappas(
    op: &TransitionOperator,
    split: &SplitProjections,
    grid: &CertificationGrid,
    guard: f64,
) -> Result<(f64, f64), TrichotomyError> {
    if split.dimension() != op.dimension() {
        return Err(TrichotomyError::Shape("split dimension differs from system dimension".into()));
    }
    let points = grid.points();
    let p1_zero = split.blocks[0] == 0;
    let p4_zero = split.blocks[3] == 0;
    if p1_zero && p4_zero {
        return Ok((0.0, 0.0));
    }
    let us: Vec<DMatrix<f64>> = points.iter().map(|&t| op.u_at(t)).collect::<Result<_, _>>()?;
    let invs: Vec<DMatrix<f64>> = us
        .iter()
        .map(|u| inverse(u).unwrap_or_else(|| DMatrix::from_element(u.nrows(), u.ncols(), f64::INFINITY)))
        .collect();
    let (k1, k2) = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let (mut a, mut b) = (0.0_f64, 0.0_f64);
            let left1 = &us[i] * &split.parts[0];
            let left4 = &us[i] * &split.parts[3];
            for j in 0..points.len() {
                if !p1_zero && j <= i {
                    a = a.max(operator_norm(&(&left1 * &invs[j])));
                }
                if !p4_zero && j >= i {
                    b = b.max(operator_norm(&(&left4 * &invs[j])));
                }
            }
            (a, b)
        })
        .reduce(|| (0.0, 0.0), |x, y| (x.0.max(y.0), x.1.max(y.1)));
    for (block, value) in [(1, k1), (4, k2)] {
        if !(value <= guard) {
            return Err(TrichotomyError::UnboundedBlock { block, value, guard });
        }
    }
    Ok((k1, k2))
}

/// The two-branch kernel of an exponential dichotomy.
#[derive(Clone, Debug)]
pub struct DichotomyKernel {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

impl DichotomyKernel {
    /// `U(t)PU⁻¹(s)` for `s ≤ t`, `−U(t)QU⁻¹(s)` for `t < s`.
    pub fn eval(&self, op: &TransitionOperator, t: f64, s: f64) -> Result<DMatrix<f64>, TrichotomyError> {
        let projector = if s <= t { self.p.clone() } else { -&self.q };
        Ok(op.conjugated(t, &projector, s)?)
    }
}

pub fn reduce_to_dichotomy(pair: &ProjectionPair) -> Result<DichotomyKernel, TrichotomyError> {
    let defect = pair.dichotomy_defect();
    if defect > ALGEBRA_TOLERANCE {
        return Err(TrichotomyError::NotReducible { defect });
    }
    Ok(DichotomyKernel {
        p: pair.p.clone(),
        q: pair.q.clone(),
    })
}

/// `max ‖G(t+T, s+T) − G(t, s)‖` (and the same for `G̃` when a split is given)
/// over off-diagonal grid pairs.
pub fn kernel_periodicity_check(
    op: &TransitionOperator,
    pair: &ProjectionPair,
    split: Option<&SplitProjections>,
    period: f64,
    grid: &CertificationGrid,
    threshold: f64,
) -> Result<CheckReport, TrichotomyError> {
    let points = grid.points();
    let (lo, hi) = op.window();
    let (first, last) = (points[0], *points.last().unwrap());
    for t in [first, last, first + period, last + period] {
        if t < lo || t > hi {
            return Err(DynamicsError::OutOfWindow { t, lo, hi }.into());
        }
    }
    let pairs: Vec<(f64, f64)> = points
        .iter()
        .flat_map(|&t| points.iter().filter(move |&&s| s != t).map(move |&s| (t, s)))
        .collect();
    let defect = |kernel: &(dyn Fn(f64, f64) -> Result<DMatrix<f64>, TrichotomyError> + Sync)| {
        pairs
            .par_iter()
            .map(|&(t, s)| Ok(operator_norm(&(kernel(t + period, s + period)? - kernel(t, s)?))))
            .collect::<Result<Vec<f64>, TrichotomyError>>()
            .map(|v| v.into_iter().fold(0.0, f64::max))
    };
    let g_defect = defect(&|t, s| green_g(op, pair, t, s))?;
    let mut subs = vec![CheckReport::at_most("kernel_g_periodicity", g_defect, threshold).with_samples(pairs.len())];
    let mut worst = g_defect;
    if let Some(split) = split {
        let gt_defect = defect(&|t, s| green_gtilde(op, split, t, s))?;
        subs.push(CheckReport::at_most("kernel_gtilde_periodicity", gt_defect, threshold).with_samples(pairs.len()));
        worst = worst.max(gt_defect);
    }
    Ok(CheckReport::at_most("kernel_periodicity", worst, threshold)
        .with_details(format!("period {period}, {} off-diagonal (t, s) pairs", pairs.len()))
        .with_samples(pairs.len())
        .with_sub_checks(subs))
}
