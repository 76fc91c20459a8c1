//! Hölder premises and empirical exponent fits.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::VerifyError;
use crate::conjugacy::ConjugacyEvaluator;
use crate::dynamics::{PerturbationBounds, SeparationBound, DEFAULT_SAMPLING_STEP};
use crate::dynamics::sampling_grid;
use crate::linalg::operator_norm;
use crate::report::CheckReport;

/// Neglected mass allowed when truncating the premise integrals.
const PREMISE_TAIL: f64 = 1e-10;
const PREMISE_STEP: f64 = 0.01;
/// Image separations below this are indistinguishable from evaluation noise.
const NOISE_FLOOR: f64 = 1e-12;

/// Map whose regularity is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MapDirection {
    H,
    L,
}

/// Outcome of [`check_holder_premise`].
#[derive(Clone, Debug, Serialize)]
pub struct HolderPremise {
    pub report: CheckReport,
    /// `sup_t ∫ |K(t,s)| w(s) Δ^q(t,s) ds` for the linear and the perturbed
    /// envelope, where `w` is `m` or `M(s)`.
    pub integrals: [f64; 2],
    /// `p/(1+p)`.
    pub target: f64,
    /// Smallest `p` for which the premise holds (infinite if none does).
    pub p_min: f64,
}

/// Evaluate `sup_t ∫ |K(t,s)| w(s) Δ^q(t,s) ds` for both envelopes, with the
/// evaluator's kernel (`G` for bounded-Lipschitz bounds, `G̃` for integrable
/// ones) and `w = max{γ, 2μ^{1−q}γ^q}` or `w(s) = max{ψ(s), 2φ(s)^{1−q}ψ(s)^q}`,
/// and compare the larger one with `p/(1+p)`.
pub fn check_holder_premise(
    ev: &ConjugacyEvaluator,
    q: f64,
    p: f64,
    envelopes: (SeparationBound, SeparationBound),
    t_samples: &[f64],
) -> Result<HolderPremise, VerifyError> {
    if !(q > 0.0 && q < 1.0) || !(p > 0.0) {
        return Err(VerifyError::InvalidSamples(format!("need 0 < q < 1 and p > 0, got q={q}, p={p}")));
    }
    if t_samples.is_empty() {
        return Err(VerifyError::InvalidSamples("no t samples".into()));
    }
    let cert = ev.certificate();
    let (alpha, beta) = (cert.alpha, cert.beta);
    let fastest = envelopes.0.rate.max(envelopes.1.rate);
    if q * fastest >= alpha {
        return Err(VerifyError::DivergentPremise { product: q * fastest, alpha });
    }
    let op = ev.operator();
    let window = op.window();

    let weight: Box<dyn Fn(f64) -> f64 + Sync + '_> = match ev.system().bounds() {
        PerturbationBounds::BoundedLipschitz { mu, gamma } => {
            let m = gamma.max(2.0 * mu.powf(1.0 - q) * gamma.powf(q));
            Box::new(move |_| m)
        }
        PerturbationBounds::Integrable { phi, psi, .. } => {
            Box::new(move |s| psi(s).max(2.0 * phi(s).powf(1.0 - q) * psi(s).powf(q)))
        }
    };
    let weight_sup = sampling_grid(window, DEFAULT_SAMPLING_STEP)
        .map(&weight)
        .fold(0.0, f64::max);
    let decay = alpha - q * fastest;
    let reach = if weight_sup > 0.0 {
        ((2.0 * beta * weight_sup / (decay * PREMISE_TAIL)).ln() / decay).max(1.0)
    } else {
        1.0
    };

    let projectors = ev.projectors();
    let per_t = t_samples
        .par_iter()
        .map(|&t| {
            let lo = (t - reach).max(window.0);
            let hi = (t + reach).min(window.1);
            let u_t = op.u_at(t)?;
            let mut breaks = vec![lo, hi];
            for b in [t, 0.0] {
                if b > lo && b < hi {
                    breaks.push(b);
                }
            }
            breaks.sort_by(f64::total_cmp);
            breaks.dedup();
            let mut totals = [0.0_f64; 2];
            for piece in breaks.windows(2) {
                let (a, b) = (piece[0], piece[1]);
                let mid = 0.5 * (a + b);
                let projector: &DMatrix<f64> = if mid < t {
                    if mid >= 0.0 { &projectors.mid_pos } else { &projectors.left }
                } else if mid <= 0.0 {
                    &projectors.mid_neg
                } else {
                    &projectors.right
                };
                let left = &u_t * projector;
                let piece_totals = simpson_pair(a, b, |s| {
                    let norm = operator_norm(&crate::linalg::right_divide(&left, &op.u_at(s)?).unwrap_or_else(
                        || DMatrix::from_element(left.nrows(), left.ncols(), f64::INFINITY),
                    ));
                    let base = norm * weight(s);
                    Ok([
                        base * envelopes.0.delta(t, s).powf(q),
                        base * envelopes.1.delta(t, s).powf(q),
                    ])
                })?;
                totals[0] += piece_totals[0];
                totals[1] += piece_totals[1];
            }
            Ok(totals)
        })
        .collect::<Result<Vec<[f64; 2]>, VerifyError>>()?;
    let integrals = [
        per_t.iter().map(|v| v[0]).fold(0.0, f64::max),
        per_t.iter().map(|v| v[1]).fold(0.0, f64::max),
    ];
    let worst = integrals[0].max(integrals[1]);
    let target = p / (1.0 + p);
    let p_min = if worst < 1.0 { worst / (1.0 - worst) } else { f64::INFINITY };
    let report = CheckReport::at_most("holder_premise", worst, target)
        .with_details(format!(
            "linear envelope integral {:.6e}, perturbed envelope integral {:.6e}, smallest admissible p {:.6e}",
            integrals[0], integrals[1], p_min
        ))
        .with_samples(t_samples.len())
        .with_sub_checks(vec![
            CheckReport::at_most("holder_premise_linear", integrals[0], target),
            CheckReport::at_most("holder_premise_perturbed", integrals[1], target),
        ]);
    Ok(HolderPremise {
        report,
        integrals,
        target,
        p_min,
    })
}

/// Composite Simpson of a pair-valued integrand on `[a, b]`.
fn simpson_pair(
    a: f64,
    b: f64,
    g: impl Fn(f64) -> Result<[f64; 2], VerifyError>,
) -> Result<[f64; 2], VerifyError> {
    let mut n = ((b - a) / PREMISE_STEP).ceil().max(2.0) as usize;
    if n % 2 == 1 {
        n += 1;
    }
    let h = (b - a) / n as f64;
    let mut acc = [0.0_f64; 2];
    for k in 0..=n {
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let v = g(a + h * k as f64)?;
        acc[0] += w * v[0];
        acc[1] += w * v[1];
    }
    Ok([acc[0] * h / 3.0, acc[1] * h / 3.0])
}

/// Sampling plan of [`fit_holder`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HolderConfig {
    pub t_samples: Vec<f64>,
    /// Separations in `(0, 1)`.
    pub separations: Vec<f64>,
    pub bases_per_time: usize,
    pub state_range: (f64, f64),
    pub seed: u64,
    pub q: f64,
    pub p: f64,
}

impl Default for HolderConfig {
    fn default() -> Self {
        Self {
            t_samples: vec![-2.0, 0.0, 2.0],
            separations: vec![1e-1, 5e-2, 2e-2, 1e-2, 5e-3, 2e-3, 1e-3, 5e-4, 2e-4, 1e-4],
            bases_per_time: 3,
            state_range: (-2.0, 2.0),
            seed: 11,
            q: 0.5,
            p: 1.0,
        }
    }
}

/// Measured separations of one map at sampled base points.
#[derive(Clone, Debug, Serialize)]
pub struct HolderFit {
    pub direction: MapDirection,
    /// Log-log slope of image separation against separation.
    pub exponent_estimate: f64,
    /// `max image / sep^q` over the pairs, to be compared with `1 + p`.
    pub constant_estimate: f64,
    /// `(separation, image separation)`.
    pub pairs: Vec<(f64, f64)>,
    /// Every image separation fell below the noise floor; the slope is
    /// meaningless.
    pub inconclusive: bool,
    pub report: CheckReport,
}

/// Measure `|M(t,x) − M(t,x')|` for `M = H` or `L` at seeded base points and
/// separations, fit the exponent and test `image ≤ (1+p)·sep^q` on every pair.
pub fn fit_holder(
    ev: &ConjugacyEvaluator,
    direction: MapDirection,
    config: &HolderConfig,
) -> Result<HolderFit, VerifyError> {
    let seps = &config.separations;
    if seps.iter().any(|&d| !(d > 0.0 && d < 1.0)) {
        return Err(VerifyError::InvalidSamples("separations must lie in (0, 1)".into()));
    }
    let n_pairs = config.t_samples.len() * config.bases_per_time * seps.len();
    if n_pairs < 20 {
        return Err(VerifyError::InvalidSamples(format!("{n_pairs} pairs, need at least 20")));
    }
    let (smallest, largest) = seps
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    if largest / smallest < 100.0 * (1.0 - 1e-12) {
        return Err(VerifyError::InvalidSamples("separations must span at least two decades".into()));
    }
    if !(config.q > 0.0 && config.q < 1.0) || !(config.p > 0.0) {
        return Err(VerifyError::InvalidSamples("need 0 < q < 1 and p > 0".into()));
    }

    let dim = ev.system().dimension();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut bases = Vec::new();
    for &t in &config.t_samples {
        for _ in 0..config.bases_per_time {
            let x = DVector::from_fn(dim, |_, _| rng.gen_range(config.state_range.0..=config.state_range.1));
            let unit = loop {
                let u = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..=1.0));
                let norm = u.norm();
                if norm > 1e-3 && norm <= 1.0 {
                    break u / norm;
                }
            };
            bases.push((t, x, unit));
        }
    }
    let map = |t: f64, x: &DVector<f64>| match direction {
        MapDirection::H => ev.eval_h(t, x),
        MapDirection::L => ev.eval_l(t, x),
    };
    let groups = bases
        .par_iter()
        .map(|(t, x, unit)| {
            let image = map(*t, x)?;
            seps.iter()
                .map(|&d| Ok((d, (map(*t, &(x + unit * d))? - &image).norm())))
                .collect::<Result<Vec<(f64, f64)>, VerifyError>>()
        })
        .collect::<Result<Vec<_>, VerifyError>>()?;

    // slope with a separate intercept per base point
    let (mut sxy, mut sxx) = (0.0, 0.0);
    let mut resolved = 0usize;
    for group in &groups {
        let usable: Vec<(f64, f64)> = group
            .iter()
            .filter(|(_, img)| *img > NOISE_FLOOR)
            .map(|&(d, img)| (d.ln(), img.ln()))
            .collect();
        if usable.len() < 2 {
            continue;
        }
        resolved += usable.len();
        let mx = usable.iter().map(|v| v.0).sum::<f64>() / usable.len() as f64;
        let my = usable.iter().map(|v| v.1).sum::<f64>() / usable.len() as f64;
        for (x, y) in usable {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
        }
    }
    let inconclusive = resolved == 0 || sxx == 0.0;
    let exponent_estimate = if inconclusive { f64::NAN } else { sxy / sxx };

    let pairs: Vec<(f64, f64)> = groups.into_iter().flatten().collect();
    let constant_estimate = pairs
        .iter()
        .map(|&(d, img)| img / d.powf(config.q))
        .fold(0.0, f64::max);
    let bound = 1.0 + config.p;
    let name = match direction {
        MapDirection::H => "holder_fit_h",
        MapDirection::L => "holder_fit_l",
    };
    let mut details = format!("q={}, p={}, fitted exponent {:.6}", config.q, config.p, exponent_estimate);
    if inconclusive {
        details.push_str("; inconclusive: image separations below noise floor");
    }
    let report = CheckReport::at_most(name, constant_estimate, bound)
        .with_details(details)
        .with_samples(pairs.len());
    Ok(HolderFit {
        direction,
        exponent_estimate,
        constant_estimate,
        pairs,
        inconclusive,
        report,
    })
}
