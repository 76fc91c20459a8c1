//! Truncation window, node layout and the cumulative quadrature rule.

use nalgebra::DVector;
use serde::Serialize;

/// Truncated quadrature for the improper kernel integrals.
///
/// Integration along an orbit anchored at `t*` runs over
/// `[t* − half_width, t* + half_width]` (clipped to the transition-operator
/// window) on the nodes `j·step`, so `s = 0` is always a node when it lies in
/// the window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QuadratureScheme {
    pub half_width: f64,
    pub step: f64,
    pub tail_tol: f64,
    /// Bound on the neglected mass for an anchor whose window is not clipped.
    pub tail_bound: f64,
}

/// Smallest width permitted even when the tail estimate asks for less.
pub const MIN_HALF_WIDTH: f64 = 1.0;

/// `S` solving `scale · e^{−α S} = tail_tol`, clamped to `[MIN_HALF_WIDTH, cap]`.
pub fn half_width_for(scale: f64, alpha: f64, tail_tol: f64, cap: f64) -> f64 {
    let s = if scale > tail_tol {
        (scale / tail_tol).ln() / alpha
    } else {
        MIN_HALF_WIDTH
    };
    s.clamp(MIN_HALF_WIDTH, cap.max(MIN_HALF_WIDTH))
}

/// `∫` over each interval `[r_i, r_{i+1}]` of the data sampled at equispaced
/// nodes with spacing `h`.
///
/// Interior intervals use the 4-point rule
/// `h/24 (−g_{i−1} + 13 g_i + 13 g_{i+1} − g_{i+2})`, the two end intervals its
/// one-sided variant `h/24 (9 g_0 + 19 g_1 − 5 g_2 + g_3)`; both are exact for
/// cubics. Tables with fewer than four nodes fall back to the trapezoid rule.
pub fn interval_integrals(values: &[DVector<f64>], h: f64) -> Vec<DVector<f64>> {
    let n = values.len();
    if n < 2 {
        return Vec::new();
    }
    if n < 4 {
        return (0..n - 1).map(|i| (&values[i] + &values[i + 1]) * (0.5 * h)).collect();
    }
    let w = h / 24.0;
    (0..n - 1)
        .map(|i| {
            if i == 0 {
                (&values[0] * 9.0 + &values[1] * 19.0 - &values[2] * 5.0 + &values[3]) * w
            } else if i == n - 2 {
                (&values[n - 1] * 9.0 + &values[n - 2] * 19.0 - &values[n - 3] * 5.0 + &values[n - 4]) * w
            } else {
                ((&values[i] + &values[i + 1]) * 13.0 - &values[i - 1] - &values[i + 2]) * w
            }
        })
        .collect()
}

/// Cubic Lagrange interpolation of equispaced samples at fractional index
/// `x` (node `k` sits at `x = k`). Exact at nodes.
pub fn lagrange_at(values: &[DVector<f64>], x: f64) -> DVector<f64> {
    let n = values.len();
    let nearest = x.round();
    if (x - nearest).abs() < 1e-9 && nearest >= 0.0 && (nearest as usize) < n {
        return values[nearest as usize].clone();
    }
    if n < 4 {
        let k = (x.floor().max(0.0) as usize).min(n.saturating_sub(2));
        let theta = x - k as f64;
        return &values[k] * (1.0 - theta) + &values[k + 1] * theta;
    }
    let k = (x.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
    let mut out = DVector::zeros(values[0].len());
    for i in 0..4 {
        let xi = (k + i) as f64;
        let mut weight = 1.0;
        for j in 0..4 {
            if i != j {
                let xj = (k + j) as f64;
                weight *= (x - xj) / (xi - xj);
            }
        }
        out += &values[k + i] * weight;
    }
    out
}
