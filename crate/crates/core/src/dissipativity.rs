//! The boundary-to-boundary operators
//!
//! ```text
//! [G_i ψ]_j(t) = c_j^i(x_j, 1 − x_j, t) Σ_k r_jk ψ_k(ω_j(x_j, 1 − x_j, t))
//! ```
//!
//! and the conditions `‖G_i‖ < 1`. With the max-norm on ℝⁿ and the sup-norm
//! in `t`, a weighted composition operator has norm
//! `sup_{j,t} |c_j^i| Σ_k |r_jk|`, attained by constant sign-matched `ψ`;
//! [`gnorm`] evaluates that expression and [`gnorm_bruteforce`] checks it by
//! actually applying `G_i` to test functions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::characteristics::{exit_abscissa, trace};
use crate::error::{Error, Result};
use crate::system::HyperbolicSystem;

pub const MIN_SAMPLES: usize = 128;

#[derive(Debug, Clone, Serialize)]
pub struct DissipativityReport {
    pub order: u8,
    /// `s_{i,j}` per component.
    pub components: Vec<f64>,
    /// Time at which each supremum was attained.
    pub argmax: Vec<f64>,
    /// `max_t − min_t` of the sampled weights per component.
    pub spread: Vec<f64>,
    pub norm: f64,
    pub window: (f64, f64),
    pub samples: usize,
    pub window_restricted: bool,
    pub pass: bool,
}

pub(crate) fn resolve_window(sys: &HyperbolicSystem, window: Option<(f64, f64)>) -> Result<((f64, f64), bool)> {
    match (sys.period(), window) {
        (_, Some(w)) if !(w.1 > w.0) => Err(Error::InvalidArgument(format!("empty window {w:?}"))),
        (Some(_), Some(w)) => Ok((w, false)),
        (Some(p), None) => Ok(((0.0, p), false)),
        (None, Some(w)) => Ok((w, true)),
        (None, None) => Err(Error::WindowUnspecified),
    }
}

/// `|c_j^i(x_j, 1 − x_j, t)| Σ_k |r_jk|`.
fn weighted(sys: &HyperbolicSystem, i: u8, j: usize, t: f64, step: f64, row: f64) -> Result<f64> {
    if row == 0.0 {
        return Ok(0.0);
    }
    let anchor = 1.0 - exit_abscissa(j, sys.m());
    Ok(trace(sys, j, anchor, t, step)?.end_weight_c(i).abs() * row)
}

fn golden_max(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> Result<f64>) -> Result<(f64, f64)> {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let (mut fa, mut fb) = (f(a)?, f(b)?);
    while hi - lo > 1e-9 {
        if fa >= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a)?;
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b)?;
        }
    }
    Ok(if fa >= fb { (a, fa) } else { (b, fb) })
}

pub fn gnorm(
    sys: &HyperbolicSystem,
    i: u8,
    samples: usize,
    window: Option<(f64, f64)>,
    step: f64,
) -> Result<DissipativityReport> {
    if i > 2 {
        return Err(Error::InvalidArgument(format!("order {i} not in 0..=2")));
    }
    if samples < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!("need at least {MIN_SAMPLES} t-samples, got {samples}")));
    }
    let (window, restricted) = resolve_window(sys, window)?;
    let ht = (window.1 - window.0) / samples as f64;
    let per: Vec<(f64, f64, f64)> = (0..sys.n())
        .into_par_iter()
        .map(|j| {
            let row = sys.reflection_row_norm(j);
            let vals = (0..=samples)
                .map(|q| weighted(sys, i, j, window.0 + q as f64 * ht, step, row))
                .collect::<Result<Vec<_>>>()?;
            let (kbest, &vbest) = vals
                .iter()
                .enumerate()
                .fold((0, &f64::NEG_INFINITY), |acc, (k, v)| if *v > *acc.1 { (k, v) } else { acc });
            let vmin = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let spread = vbest - vmin;
            if row == 0.0 || spread == 0.0 {
                return Ok((vbest, window.0 + kbest as f64 * ht, spread));
            }
            let lo = window.0 + kbest.saturating_sub(1) as f64 * ht;
            let hi = window.0 + (kbest + 1).min(samples) as f64 * ht;
            let (targ, vref) = golden_max(lo, hi, |t| weighted(sys, i, j, t, step, row))?;
            Ok(if vref > vbest { (vref, targ, spread) } else { (vbest, window.0 + kbest as f64 * ht, spread) })
        })
        .collect::<Result<Vec<_>>>()?;
    let components: Vec<f64> = per.iter().map(|p| p.0).collect();
    let norm = components.iter().copied().fold(0.0, f64::max);
    Ok(DissipativityReport {
        order: i,
        argmax: per.iter().map(|p| p.1).collect(),
        spread: per.iter().map(|p| p.2).collect(),
        components,
        norm,
        window,
        samples,
        window_restricted: restricted,
        pass: norm < 1.0 - 1e-9,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BruteForceBound {
    /// Largest `|[G_i ψ]_j(t)|` over all test functions and sample times.
    pub lower_bound: f64,
    /// Largest value achieved by the constant sign-matched test functions.
    pub sign_matched: f64,
    /// Largest value achieved by the random smooth test functions.
    pub random: f64,
}

/// Smooth `ψ` with `max_k sup_t |ψ_k(t)| ≤ 1`: damped trigonometric sums.
struct RandomPsi {
    amp: Vec<[f64; 3]>,
    freq: Vec<[f64; 3]>,
    phase: Vec<[f64; 3]>,
}

impl RandomPsi {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut amp = vec![[0.0; 3]; n];
        let mut freq = vec![[0.0; 3]; n];
        let mut phase = vec![[0.0; 3]; n];
        for k in 0..n {
            let raw: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let s: f64 = raw.iter().map(|v: &f64| v.abs()).sum::<f64>().max(1e-12);
            for q in 0..3 {
                amp[k][q] = raw[q] / s;
                freq[k][q] = rng.gen_range(0.0..4.0);
                phase[k][q] = rng.gen_range(0.0..std::f64::consts::TAU);
            }
        }
        RandomPsi { amp, freq, phase }
    }

    fn eval(&self, k: usize, t: f64) -> f64 {
        (0..3).map(|q| self.amp[k][q] * (self.freq[k][q] * t + self.phase[k][q]).cos()).sum()
    }
}

/// Applies `G_i` pointwise to test functions on a grid four times finer than
/// `samples`, plus random times, tracing with half the step used by [`gnorm`].
pub fn gnorm_bruteforce(
    sys: &HyperbolicSystem,
    i: u8,
    samples: usize,
    window: Option<(f64, f64)>,
    step: f64,
    seed: u64,
) -> Result<BruteForceBound> {
    let (window, _) = resolve_window(sys, window)?;
    let n = sys.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let psis: Vec<RandomPsi> = (0..8).map(|_| RandomPsi::new(n, &mut rng)).collect();
    let fine = 4 * samples.max(1);
    let mut times: Vec<f64> = (0..=fine)
        .map(|q| window.0 + (window.1 - window.0) * q as f64 / fine as f64)
        .collect();
    times.extend((0..samples).map(|_| rng.gen_range(window.0..window.1)));

    let per_t: Vec<(f64, f64)> = times
        .par_iter()
        .map(|&t| {
            let mut best_sign: f64 = 0.0;
            let mut best_rand: f64 = 0.0;
            for j in 0..n {
                let anchor = 1.0 - exit_abscissa(j, sys.m());
                let path = trace(sys, j, anchor, t, 0.5 * step)?;
                let c = path.end_weight_c(i);
                let w = path.end_time();
                let row = &sys.r()[j];
                best_sign = best_sign.max((c * signed_row(row)).abs());
                for psi in &psis {
                    let v: f64 = (0..n).map(|k| row[k] * psi.eval(k, w)).sum();
                    best_rand = best_rand.max((c * v).abs());
                }
            }
            Ok((best_sign, best_rand))
        })
        .collect::<Result<Vec<_>>>()?;
    let sign_matched = per_t.iter().map(|p| p.0).fold(0.0, f64::max);
    let random = per_t.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok(BruteForceBound {
        lower_bound: sign_matched.max(random),
        sign_matched,
        random,
    })
}

/// `Σ_k r_jk ψ_k` for the constant `ψ_k = sign(r_jk)`, i.e. `Σ_k |r_jk|`
/// computed the way a test function would see it.
fn signed_row(row: &[f64]) -> f64 {
    row.iter().map(|r| r * if *r >= 0.0 { 1.0 } else { -1.0 }).sum()
}

/// `|[G_i ψ]_j(t)|` for the sign-matched constant `ψ`; at the reported
/// argmax this reproduces the `j`-th component of [`gnorm`].
pub fn sign_matched_value(sys: &HyperbolicSystem, i: u8, j: usize, t: f64, step: f64) -> Result<f64> {
    let anchor = 1.0 - exit_abscissa(j, sys.m());
    let c = trace(sys, j, anchor, t, step)?.end_weight_c(i);
    Ok((c * signed_row(&sys.r()[j])).abs())
}

/// Runs [`gnorm`] for `i = 0, 1, 2`.
pub fn check_dissipativity(
    sys: &HyperbolicSystem,
    samples: usize,
    window: Option<(f64, f64)>,
    step: f64,
) -> Result<[DissipativityReport; 3]> {
    Ok([
        gnorm(sys, 0, samples, window, step)?,
        gnorm(sys, 1, samples, window, step)?,
        gnorm(sys, 2, samples, window, step)?,
    ])
}

/// Fails with [`Error::DissipativityNotSatisfied`] unless `‖G_i‖ < 1`.
pub fn require(report: &DissipativityReport) -> Result<()> {
    if report.pass {
        Ok(())
    } else {
        Err(Error::DissipativityNotSatisfied {
            order: report.order as usize,
            norm: report.norm,
        })
    }
}
