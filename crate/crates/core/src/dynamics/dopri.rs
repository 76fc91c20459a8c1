//! Dormand–Prince 5(4) integrator with continuous (dense) output.
//!
//! The stepper only ever integrates forward in its own time variable; the
//! callers in [`super`] realize backward-in-time solutions by handing it the
//! time-reversed field.

use nalgebra::DVector;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;
const MAX_STEPS: usize = 2_000_000;

/// Error-control tolerances. The local error scale of a state component is
/// `atol + rtol * max(|y_old|, |y_new|)` where `|·|` is the max-norm of the
/// component's group (a whole vector, or one column of a matrix state).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Tolerance {
    /// Pure relative control; appropriate for linear flows whose scale spans
    /// many orders of magnitude across the window.
    pub fn relative(rtol: f64) -> Self {
        Self { rtol, atol: 1e-300 }
    }

    pub fn mixed(rtol: f64, atol: f64) -> Self {
        Self { rtol, atol }
    }
}

/// One accepted step with its continuous-extension coefficients.
#[derive(Clone, Debug)]
pub(crate) struct Segment {
    pub tau0: f64,
    pub h: f64,
    coeffs: [DVector<f64>; 5],
}

impl Segment {
    pub fn end(&self) -> f64 {
        self.tau0 + self.h
    }

    pub fn eval(&self, tau: f64) -> DVector<f64> {
        let theta = (tau - self.tau0) / self.h;
        let theta1 = 1.0 - theta;
        let [r1, r2, r3, r4, r5] = &self.coeffs;
        // r1 + θ (r2 + (1-θ) (r3 + θ (r4 + (1-θ) r5)))
        let inner = r4 + r5 * theta1;
        let inner = r3 + inner * theta;
        let inner = r2 + inner * theta1;
        r1 + inner * theta
    }
}

#[derive(Debug)]
pub(crate) struct StepFailure {
    pub tau_reached: f64,
}

/// Integrate `y' = field(τ, y)` from `τ = 0` to `tau_end > 0`.
///
/// `groups` splits the state into that many contiguous, equally sized blocks
/// that are error-scaled independently.
pub(crate) fn integrate<F>(
    field: F,
    y0: &DVector<f64>,
    tau_end: f64,
    tol: Tolerance,
    groups: usize,
) -> Result<Vec<Segment>, StepFailure>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let mut segments = Vec::new();
    if tau_end <= 0.0 {
        return Ok(segments);
    }
    let len = y0.len();
    let groups = groups.max(1);
    let group_len = len / groups;

    let mut tau = 0.0;
    let mut y = y0.clone();
    let mut k1 = field(tau, &y);
    if !k1.iter().all(|v| v.is_finite()) {
        return Err(StepFailure { tau_reached: tau });
    }
    let mut h = initial_step(&y, &k1, tau_end, tol);
    let mut steps = 0usize;
    let mut last_rejected = false;

    while tau < tau_end {
        steps += 1;
        if steps > MAX_STEPS {
            return Err(StepFailure { tau_reached: tau });
        }
        let remaining = tau_end - tau;
        let mut final_step = false;
        if h >= remaining {
            h = remaining;
            final_step = true;
        }
        if h <= 1e-14 * tau.abs().max(1.0) {
            return Err(StepFailure { tau_reached: tau });
        }

        let k2 = field(tau + C2 * h, &(&y + &k1 * (h * A21)));
        let k3 = field(tau + C3 * h, &(&y + (&k1 * A31 + &k2 * A32) * h));
        let k4 = field(
            tau + C4 * h,
            &(&y + (&k1 * A41 + &k2 * A42 + &k3 * A43) * h),
        );
        let k5 = field(
            tau + C5 * h,
            &(&y + (&k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h),
        );
        let k6 = field(
            tau + h,
            &(&y + (&k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h),
        );
        let y_new = &y + (&k1 * A71 + &k3 * A73 + &k4 * A74 + &k5 * A75 + &k6 * A76) * h;
        let k7 = field(tau + h, &y_new);

        let err_vec =
            (&k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;

        let finite = y_new.iter().all(|v| v.is_finite()) && k7.iter().all(|v| v.is_finite());
        let err = if finite {
            error_norm(&err_vec, &y, &y_new, tol, groups, group_len)
        } else {
            f64::INFINITY
        };

        if err <= 1.0 {
            let r1 = y.clone();
            let r2 = &y_new - &y;
            let r3 = &k1 * h - &r2;
            let r4 = &r2 - &k7 * h - &r3;
            let r5 = (&k1 * D1 + &k3 * D3 + &k4 * D4 + &k5 * D5 + &k6 * D6 + &k7 * D7) * h;
            segments.push(Segment {
                tau0: tau,
                h,
                coeffs: [r1, r2, r3, r4, r5],
            });
            tau = if final_step { tau_end } else { tau + h };
            y = y_new;
            k1 = k7;
            let factor = if err == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
            };
            h *= if last_rejected { factor.min(1.0) } else { factor };
            last_rejected = false;
        } else {
            if !finite && !err.is_finite() && h < 1e-10 {
                return Err(StepFailure { tau_reached: tau });
            }
            let factor = if err.is_finite() {
                (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, 1.0)
            } else {
                MIN_FACTOR
            };
            h *= factor;
            last_rejected = true;
        }
    }
    Ok(segments)
}

fn error_norm(
    err: &DVector<f64>,
    y_old: &DVector<f64>,
    y_new: &DVector<f64>,
    tol: Tolerance,
    groups: usize,
    group_len: usize,
) -> f64 {
    let mut worst = 0.0_f64;
    for g in 0..groups {
        let range = g * group_len..(g + 1) * group_len;
        let mut scale = 0.0_f64;
        for i in range.clone() {
            scale = scale.max(y_old[i].abs()).max(y_new[i].abs());
        }
        let sc = tol.atol + tol.rtol * scale;
        for i in range {
            worst = worst.max(err[i].abs() / sc);
        }
    }
    worst
}

fn initial_step(y: &DVector<f64>, f0: &DVector<f64>, span: f64, tol: Tolerance) -> f64 {
    let y_scale = y.amax();
    let f_scale = f0.amax();
    let sc = tol.atol + tol.rtol * y_scale;
    let h = if f_scale == 0.0 || sc == 0.0 {
        1e-3
    } else {
        0.01 * (sc / (tol.rtol * f_scale).max(1e-300)).min(1.0)
    };
    h.clamp(1e-8, 0.1).min(span)
}
