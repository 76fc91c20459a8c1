//! Fundamental matrices and the transition operator `U(t)U⁻¹(s)`.

use nalgebra::{DMatrix, DVector};

use super::{integrate_leg, DynamicsError, SystemSpec, Tolerance, Trajectory};
use crate::linalg::{inverse, max_abs, right_divide, solve};

/// Largest accepted `‖U(t)·U⁻¹(t) − I‖_max` at any node.
const INVERSE_RESIDUAL_LIMIT: f64 = 1e-8;

/// Fundamental matrix `U(t)` with `U(base) = I` on a closed window, stored as
/// the dense output of two matrix-valued integration legs.
#[derive(Clone, Debug)]
pub struct TransitionOperator {
    dimension: usize,
    base: f64,
    window: (f64, f64),
    tol: f64,
    forward: Trajectory,
    backward: Trajectory,
}

/// Integrate `U' = A(t)U` from `U(base) = I` across `window`.
///
/// Each column is error-controlled on its own relative scale, so columns that
/// decay by many orders of magnitude keep their relative accuracy.
pub fn fundamental_matrix(
    system: &SystemSpec,
    base: f64,
    window: (f64, f64),
    tol: f64,
) -> Result<TransitionOperator, DynamicsError> {
    let (lo, hi) = window;
    if !(lo <= base && base <= hi) || !(lo < hi) {
        return Err(DynamicsError::InvalidArgument(format!(
            "window [{lo}, {hi}] must be nonempty and contain the base time {base}"
        )));
    }
    if !(tol > 0.0) {
        return Err(DynamicsError::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let n = system.dimension();
    let identity = DVector::from_column_slice(DMatrix::<f64>::identity(n, n).as_slice());
    let rhs = |t: f64, y: &DVector<f64>| {
        let u = DMatrix::from_column_slice(n, n, y.as_slice());
        let du = system.a(t) * u;
        DVector::from_column_slice(du.as_slice())
    };
    let tolerance = Tolerance::relative(tol);
    let forward = integrate_leg(rhs, base, &identity, hi, tolerance, n)?;
    let backward = integrate_leg(rhs, base, &identity, lo, tolerance, n)?;
    let op = TransitionOperator {
        dimension: n,
        base,
        window,
        tol,
        forward,
        backward,
    };
    op.verify_conditioning()?;
    Ok(op)
}

impl TransitionOperator {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn window(&self) -> (f64, f64) {
        self.window
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.window.0 && t <= self.window.1
    }

    /// Accepted step times of both legs, increasing.
    pub fn nodes(&self) -> Vec<f64> {
        let mut nodes = self.backward.times();
        nodes.pop();
        nodes.extend(self.forward.times());
        nodes
    }

    /// `U(t)`.
    pub fn u_at(&self, t: f64) -> Result<DMatrix<f64>, DynamicsError> {
        self.check(t)?;
        let leg = if t >= self.base { &self.forward } else { &self.backward };
        let flat = leg.state_at(t).ok_or(DynamicsError::OutOfWindow {
            t,
            lo: self.window.0,
            hi: self.window.1,
        })?;
        Ok(DMatrix::from_column_slice(self.dimension, self.dimension, flat.as_slice()))
    }

    /// `U⁻¹(s)·v`, without forming the inverse.
    pub fn solve_at(&self, s: f64, v: &DVector<f64>) -> Result<DVector<f64>, DynamicsError> {
        let u = self.u_at(s)?;
        solve(&u, v).ok_or(DynamicsError::Conditioning {
            node: s,
            residual: f64::INFINITY,
        })
    }

    /// `U(t)·M·U⁻¹(s)`.
    pub fn conjugated(&self, t: f64, middle: &DMatrix<f64>, s: f64) -> Result<DMatrix<f64>, DynamicsError> {
        let ut = self.u_at(t)?;
        let us = self.u_at(s)?;
        right_divide(&(ut * middle), &us).ok_or(DynamicsError::Conditioning {
            node: s,
            residual: f64::INFINITY,
        })
    }

    fn check(&self, t: f64) -> Result<(), DynamicsError> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(DynamicsError::OutOfWindow {
                t,
                lo: self.window.0,
                hi: self.window.1,
            })
        }
    }

    fn verify_conditioning(&self) -> Result<(), DynamicsError> {
        let n = self.dimension;
        let identity = DMatrix::<f64>::identity(n, n);
        for t in self.nodes() {
            let u = self.u_at(t)?;
            let residual = match inverse(&u) {
                Some(inv) if u.iter().all(|v| v.is_finite()) => max_abs(&(&u * inv - &identity)),
                _ => f64::INFINITY,
            };
            if !(residual <= INVERSE_RESIDUAL_LIMIT) {
                return Err(DynamicsError::Conditioning { node: t, residual });
            }
        }
        Ok(())
    }
}

/// `U(t)U⁻¹(s)`; exactly the identity when `t == s`.
pub fn transition(op: &TransitionOperator, t: f64, s: f64) -> Result<DMatrix<f64>, DynamicsError> {
    op.check(t)?;
    op.check(s)?;
    let n = op.dimension;
    if t == s {
        return Ok(DMatrix::identity(n, n));
    }
    op.conjugated(t, &DMatrix::identity(n, n), s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn example_2_5() -> SystemSpec {
        SystemSpec::linear(1, Arc::new(|t: f64| DMatrix::from_element(1, 1, -t.tanh()))).unwrap()
    }

    #[test]
    fn cosh_fundamental_matrix() {
        let op = fundamental_matrix(&example_2_5(), 0.0, (-20.0, 20.0), 1e-11).unwrap();
        assert_eq!(op.u_at(0.0).unwrap()[(0, 0)], 1.0);
        for k in -40..40 {
            let t = 0.5 * k as f64 + 0.013;
            let u = op.u_at(t).unwrap()[(0, 0)];
            let exact = 1.0 / t.cosh();
            assert!(((u - exact) / exact).abs() < 1e-8, "t={t}");
        }
    }

    #[test]
    fn transition_is_cosh_ratio() {
        let op = fundamental_matrix(&example_2_5(), 0.0, (-10.0, 10.0), 1e-11).unwrap();
        for &(t, s) in &[(1.0, 0.5), (-2.0, 3.0), (4.0, -1.5), (-7.0, -6.5)] {
            let g = transition(&op, t, s).unwrap()[(0, 0)];
            let exact = f64::cosh(s) / f64::cosh(t);
            assert!(((g - exact) / exact).abs() < 1e-8);
        }
        assert_eq!(transition(&op, 3.7, 3.7).unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn zero_field_is_identity() {
        let sys = SystemSpec::linear(2, Arc::new(|_| DMatrix::zeros(2, 2))).unwrap();
        let op = fundamental_matrix(&sys, 0.0, (-5.0, 5.0), 1e-10).unwrap();
        let u = op.u_at(-3.2).unwrap();
        assert!(max_abs(&(u - DMatrix::identity(2, 2))) < 1e-14);
    }

    #[test]
    fn diagonal_exponential() {
        let sys = SystemSpec::linear(
            2,
            Arc::new(|_| DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]))),
        )
        .unwrap();
        let op = fundamental_matrix(&sys, 0.0, (-3.0, 3.0), 1e-11).unwrap();
        for &t in &[-2.5, -0.3, 1.0, 2.9] {
            let u = op.u_at(t).unwrap();
            assert!((u[(0, 0)] - f64::exp(t)).abs() < 1e-8 * f64::exp(t).max(1.0));
            assert!((u[(1, 1)] - f64::exp(-t)).abs() < 1e-8 * f64::exp(-t).max(1.0));
            assert!(u[(0, 1)].abs() < 1e-12 && u[(1, 0)].abs() < 1e-12);
        }
    }

    #[test]
    fn cocycle_law() {
        let sys = SystemSpec::linear(
            2,
            Arc::new(|t: f64| DMatrix::from_row_slice(2, 2, &[-1.0, t.sin(), 0.3, -0.5 + 0.2 * t.cos()])),
        )
        .unwrap();
        let tol = 1e-10;
        let op = fundamental_matrix(&sys, 0.0, (-4.0, 4.0), tol).unwrap();
        let lhs = transition(&op, 2.0, 1.0).unwrap() * transition(&op, 1.0, 0.0).unwrap();
        let rhs = transition(&op, 2.0, 0.0).unwrap();
        assert!(max_abs(&(lhs - rhs)) < 1e-8);
    }

    #[test]
    fn out_of_window_queries_are_rejected() {
        let op = fundamental_matrix(&example_2_5(), 0.0, (-1.0, 1.0), 1e-9).unwrap();
        assert!(matches!(transition(&op, 1.5, 0.0), Err(DynamicsError::OutOfWindow { .. })));
        assert!(op.u_at(-1.0).is_ok());
    }

    #[test]
    fn singular_field_is_a_conditioning_error() {
        // U(t) = 1 - t vanishes at t = 1.
        let sys = SystemSpec::linear(1, Arc::new(|t: f64| DMatrix::from_element(1, 1, -1.0 / (1.0 - t)))).unwrap();
        let err = fundamental_matrix(&sys, 0.0, (-1.0, 1.0), 1e-9).unwrap_err();
        assert!(matches!(
            err,
            DynamicsError::Conditioning { .. } | DynamicsError::IntegrationFailure { .. }
        ));
    }
}
