//! Kernel integrals along a single orbit.
//!
//! For a kernel `K(s,r) = U(s) Π(s,r) U⁻¹(r)` whose signed projector takes the
//! values `left` (r below both s and 0), `mid_pos` (0 ≤ r < s), `mid_neg`
//! (s < r ≤ 0) and `−right` (r above both), the image of a forcing `F` along
//! the orbit is
//!
//! ```text
//! s ≥ 0:  U(s) [ left ∫_a^0 w + mid_pos ∫_0^s w − right ∫_s^b w ]
//! s < 0:  U(s) [ left ∫_a^s w − mid_neg ∫_s^0 w − right ∫_0^b w ]
//! ```
//!
//! with `w = U⁻¹F`. Each projected integral is accumulated in the direction in
//! which it grows, so no term is obtained as a difference of large partial
//! sums.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::quadrature::{interval_integrals, lagrange_at};
use super::ConjugacyError;
use crate::dynamics::TransitionOperator;
use crate::linalg::solve;
use crate::trichotomy::{ProjectionPair, SplitProjections};

/// The four projectors of a Green kernel, in the layout of the module docs.
#[derive(Clone, Debug)]
pub struct KernelProjectors {
    pub left: DMatrix<f64>,
    pub mid_pos: DMatrix<f64>,
    pub mid_neg: DMatrix<f64>,
    pub right: DMatrix<f64>,
}

impl KernelProjectors {
    /// Projectors of `G`: `I−Q`, `P`, `Q`, `I−P`.
    pub fn green(pair: &ProjectionPair) -> Self {
        Self {
            left: pair.complement_q(),
            mid_pos: pair.p.clone(),
            mid_neg: pair.q.clone(),
            right: pair.complement_p(),
        }
    }

    /// Projectors of `G̃`: `P1`, `P1+P2+P3`, `P2+P3+P4`, `P4`.
    pub fn split(split: &SplitProjections) -> Self {
        let middle = split.middle();
        Self {
            left: split.parts[0].clone(),
            mid_pos: &split.parts[0] + &middle,
            mid_neg: &middle + &split.parts[3],
            right: split.parts[3].clone(),
        }
    }
}

/// Which system the sampled orbit solves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OrbitKind {
    Linear,
    Nonlinear,
}

/// Nodes `j·step` for `j ∈ [first, first + len)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Layout {
    pub first: i64,
    pub len: usize,
    pub step: f64,
}

impl Layout {
    /// All nodes of the grid `ℤ·step` inside `[lo, hi]`.
    pub fn covering(lo: f64, hi: f64, step: f64) -> Result<Self, ConjugacyError> {
        let mut first = (lo / step).ceil() as i64;
        if (first as f64) * step < lo {
            first += 1;
        }
        let mut last = (hi / step).floor() as i64;
        if (last as f64) * step > hi {
            last -= 1;
        }
        if last - first + 1 < 4 {
            return Err(ConjugacyError::InvalidConfig(format!(
                "quadrature window [{lo}, {hi}] holds fewer than four nodes at step {step}"
            )));
        }
        Ok(Self {
            first,
            len: (last - first + 1) as usize,
            step,
        })
    }

    pub fn node(&self, j: usize) -> f64 {
        (self.first + j as i64) as f64 * self.step
    }

    pub fn start(&self) -> f64 {
        self.node(0)
    }

    pub fn end(&self) -> f64 {
        self.node(self.len - 1)
    }

    /// Index of the node at `clamp(0, start, end)`.
    pub fn zero_index(&self) -> usize {
        (-self.first).clamp(0, self.len as i64 - 1) as usize
    }

    /// Fractional index of `t`.
    pub fn position(&self, t: f64) -> f64 {
        t / self.step - self.first as f64
    }
}

/// Per-orbit sample table: nodes, orbit states, fundamental matrices and the
/// current iterate with its sweep history.
#[derive(Clone, Debug, Serialize)]
pub struct OrbitTable {
    pub anchor_time: f64,
    #[serde(serialize_with = "serialize_vector")]
    pub anchor_state: DVector<f64>,
    pub kind: OrbitKind,
    pub nodes: Vec<f64>,
    #[serde(skip)]
    pub orbit_states: Vec<DVector<f64>>,
    #[serde(skip)]
    pub iterate: Vec<DVector<f64>>,
    pub sweeps: usize,
    /// Sup-norm change of each sweep.
    pub deltas: Vec<f64>,
    /// Sup-norm of the iterate after each sweep.
    pub sups: Vec<f64>,
    /// Bound on the mass neglected by truncating to this table's window.
    pub tail_bound: f64,
    #[serde(skip)]
    layout: Layout,
    #[serde(skip)]
    fundamentals: Vec<DMatrix<f64>>,
}

fn serialize_vector<S: serde::Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for x in v.iter() {
        seq.serialize_element(x)?;
    }
    seq.end()
}

impl OrbitTable {
    pub(crate) fn new(
        op: &TransitionOperator,
        layout: Layout,
        anchor_time: f64,
        anchor_state: DVector<f64>,
        kind: OrbitKind,
        orbit_states: Vec<DVector<f64>>,
        tail_bound: f64,
    ) -> Result<Self, ConjugacyError> {
        let nodes: Vec<f64> = (0..layout.len).map(|j| layout.node(j)).collect();
        let fundamentals = nodes.iter().map(|&s| op.u_at(s)).collect::<Result<Vec<_>, _>>()?;
        let n = anchor_state.len();
        Ok(Self {
            anchor_time,
            anchor_state,
            kind,
            iterate: vec![DVector::zeros(n); nodes.len()],
            nodes,
            orbit_states,
            sweeps: 0,
            deltas: Vec::new(),
            sups: Vec::new(),
            tail_bound,
            layout,
            fundamentals,
        })
    }

    pub fn last_delta(&self) -> f64 {
        self.deltas.last().copied().unwrap_or(0.0)
    }

    /// Ratios of consecutive sweep changes (`NaN` once a change vanishes).
    pub fn ratios(&self) -> Vec<f64> {
        self.deltas
            .windows(2)
            .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { f64::NAN })
            .collect()
    }

    pub fn max_sup(&self) -> f64 {
        self.sups.iter().copied().fold(0.0, f64::max)
    }

    /// Iterate interpolated at `t`.
    pub fn value_at(&self, t: f64) -> DVector<f64> {
        lagrange_at(&self.iterate, self.layout.position(t))
    }

    /// Image of the forcing `F_j` under the kernel at every node.
    pub(crate) fn apply(
        &self,
        projectors: &KernelProjectors,
        forcing: &[DVector<f64>],
    ) -> Result<Vec<DVector<f64>>, ConjugacyError> {
        let len = self.nodes.len();
        let n = self.anchor_state.len();
        let w: Vec<DVector<f64>> = self
            .fundamentals
            .iter()
            .zip(forcing)
            .zip(&self.nodes)
            .map(|((u, f), &s)| {
                solve(u, f).ok_or(ConjugacyError::Dynamics(crate::dynamics::DynamicsError::Conditioning {
                    node: s,
                    residual: f64::INFINITY,
                }))
            })
            .collect::<Result<_, _>>()?;
        let pieces = interval_integrals(&w, self.layout.step);
        let z = self.layout.zero_index();

        let mut left = vec![DVector::zeros(n); len];
        for j in 0..len - 1 {
            left[j + 1] = &left[j] + &projectors.left * &pieces[j];
        }
        let mut right = vec![DVector::zeros(n); len];
        for j in (0..len - 1).rev() {
            right[j] = &right[j + 1] + &projectors.right * &pieces[j];
        }
        let mut middle = vec![DVector::zeros(n); len];
        for j in z + 1..len {
            middle[j] = &middle[j - 1] + &projectors.mid_pos * &pieces[j - 1];
        }
        for j in (0..z).rev() {
            middle[j] = &middle[j + 1] + &projectors.mid_neg * &pieces[j];
        }

        Ok((0..len)
            .map(|j| {
                let bracket = if j >= z {
                    &left[z] + &middle[j] - &right[j]
                } else {
                    &left[j] - &middle[j] - &right[z]
                };
                &self.fundamentals[j] * bracket
            })
            .collect())
    }

    /// Value at the zero node of the branch formula used for `s < 0`, i.e. the
    /// limit `s → 0⁻` of the negative-time operator applied to the stored
    /// forcing image. Requires `0` inside the table.
    pub(crate) fn left_form_at_zero(
        &self,
        projectors: &KernelProjectors,
        forcing: &[DVector<f64>],
    ) -> Result<Option<DVector<f64>>, ConjugacyError> {
        let z = self.layout.zero_index();
        if self.nodes[z] != 0.0 {
            return Ok(None);
        }
        let image = self.apply(projectors, forcing)?;
        Ok(Some(image[z].clone()))
    }

    pub(crate) fn zero_node(&self) -> Option<usize> {
        let z = self.layout.zero_index();
        (self.nodes[z] == 0.0).then_some(z)
    }

    pub(crate) fn record_sweep(&mut self, next: Vec<DVector<f64>>) -> f64 {
        let delta = next
            .iter()
            .zip(&self.iterate)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        let sup = next.iter().map(|v| v.norm()).fold(0.0, f64::max);
        self.iterate = next;
        self.sweeps += 1;
        self.deltas.push(delta);
        self.sups.push(sup);
        delta
    }
}
