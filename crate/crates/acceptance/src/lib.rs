//! Independent oracles for the acceptance suite, written from closed forms
//! and plain quadrature without the library under test.

/// Dense Picard iteration for `x' = -tanh(t)x + δ sin t sin x` with
/// `P = Q = 1`, built on the closed-form kernel `±cosh(s)/cosh(t)` between 0
/// and `t`. Nodes `k·step` on `[t* − half, t* + half]`, cumulative trapezoid
/// from the zero node, the value at `t*` by linear interpolation.
///
/// Returns `h(t*, η)` with `H(t*, η) = η + h(t*, η)`.
pub fn picard_tanh(delta: f64, t_star: f64, eta: f64, half: f64, step: f64, sweeps: usize) -> f64 {
    let lo = ((t_star - half) / step).ceil() as i64;
    let hi = ((t_star + half) / step).floor() as i64;
    assert!(lo <= 0 && hi >= 0, "window must contain the zero node");
    let nodes: Vec<f64> = (lo..=hi).map(|k| k as f64 * step).collect();
    let zero = (-lo) as usize;
    let orbit: Vec<f64> = nodes.iter().map(|&r| t_star.cosh() / r.cosh() * eta).collect();
    let mut phi = vec![0.0; nodes.len()];
    for _ in 0..sweeps {
        let g: Vec<f64> = nodes
            .iter()
            .zip(&orbit)
            .zip(&phi)
            .map(|((&r, &y), &p)| r.cosh() * delta * r.sin() * (y + p).sin())
            .collect();
        let mut next = vec![0.0; nodes.len()];
        let mut acc = 0.0;
        for k in zero + 1..nodes.len() {
            acc += 0.5 * step * (g[k - 1] + g[k]);
            next[k] = acc / nodes[k].cosh();
        }
        acc = 0.0;
        for k in (0..zero).rev() {
            acc -= 0.5 * step * (g[k + 1] + g[k]);
            next[k] = acc / nodes[k].cosh();
        }
        phi = next;
    }
    let x = t_star / step - lo as f64;
    let k = (x.floor() as usize).min(nodes.len() - 2);
    let theta = x - k as f64;
    phi[k] * (1.0 - theta) + phi[k + 1] * theta
}

/// Classical fixed-step RK4 for a scalar ODE from `(t0, x0)` to `t1`.
pub fn rk4_scalar(field: impl Fn(f64, f64) -> f64, t0: f64, x0: f64, t1: f64, steps: usize) -> f64 {
    let h = (t1 - t0) / steps as f64;
    let mut x = x0;
    for k in 0..steps {
        let t = t0 + h * k as f64;
        let k1 = field(t, x);
        let k2 = field(t + 0.5 * h, x + 0.5 * h * k1);
        let k3 = field(t + 0.5 * h, x + 0.5 * h * k2);
        let k4 = field(t + h, x + h * k3);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    x
}
