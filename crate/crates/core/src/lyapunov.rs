//! The quadratic Lyapunov functional `V(t) = ‖u(t)‖²_{L²}` for the
//! nonautonomous two-component example: closed-form margins of the two
//! boundary terms of `dV/dt + V`, and the measured decay rate of `V` along a
//! computed trajectory.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::system::HyperbolicSystem;
use crate::evolution::{ensemble_rng, evolve, random_compatible, EvolveOptions, Trajectory};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoundaryMargins {
    /// `sup_t [sin(t)/4 − 1 + 4r₂²]`, attained at `sin t = 1`.
    pub beta1: f64,
    /// `sup_t [−3 + r₁²(1 − sin(t)/4)]`, attained at `sin t = −1`.
    pub beta2: f64,
    pub pass: bool,
}

/// Rounding allowance for margins that vanish exactly in exact arithmetic.
pub const MARGIN_TOL: f64 = 1e-12;

pub fn boundary_margins_example2(r1: f64, r2: f64) -> BoundaryMargins {
    let beta1 = 0.25 - 1.0 + 4.0 * r2 * r2;
    let beta2 = -3.0 + r1 * r1 * 1.25;
    BoundaryMargins { beta1, beta2, pass: beta1 <= MARGIN_TOL && beta2 <= MARGIN_TOL }
}

/// The margins as functions of `t`, for sampling checks.
pub fn boundary_terms_example2(r1: f64, r2: f64, t: f64) -> (f64, f64) {
    let s = t.sin();
    (0.25 * s - 1.0 + 4.0 * r2 * r2, -3.0 + r1 * r1 * (1.0 - 0.25 * s))
}

#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalRate {
    /// `sup (ln V(t+Δt) − ln V(t))/Δt` over the measured steps.
    pub rate: f64,
    /// Number of steps measured; shorter than the trajectory when `V`
    /// underflowed.
    pub steps: usize,
    pub truncated: bool,
}

/// `V` below this fraction of `V(0)` counts as numerical zero.
const UNDERFLOW: f64 = 1e-200;

pub fn empirical_rate(traj: &Trajectory) -> Result<EmpiricalRate> {
    let v: Vec<f64> = traj.l2.iter().map(|l| l * l).collect();
    let Some(&v0) = v.first() else {
        return Err(Error::VanishingFunctional);
    };
    if !(v0 > 0.0) {
        return Err(Error::VanishingFunctional);
    }
    let mut rate = f64::NEG_INFINITY;
    let mut steps = 0;
    let mut truncated = false;
    for k in 0..v.len() - 1 {
        if !(v[k + 1] > UNDERFLOW * v0) {
            truncated = true;
            break;
        }
        let dt = traj.times[k + 1] - traj.times[k];
        rate = rate.max((v[k + 1].ln() - v[k].ln()) / dt);
        steps += 1;
    }
    if steps == 0 {
        return Err(Error::VanishingFunctional);
    }
    Ok(EmpiricalRate { rate, steps, truncated })
}

/// `max_{s ≤ t} V(t) e^{c(t−s)} / V(s)`: at most 1 exactly when
/// `V(t) ≤ e^{−c(t−s)} V(s)` for all sampled `s ≤ t`.
pub fn envelope_ratio(traj: &Trajectory, c: f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut running_min = f64::INFINITY;
    for (t, l) in traj.times.iter().zip(&traj.l2) {
        let w = (l * l).ln() + c * t;
        running_min = running_min.min(w);
        worst = worst.max(w - running_min);
    }
    worst.exp()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LyapunovOptions {
    pub ensemble: usize,
    pub seed: u64,
    pub nx: usize,
    pub dt: f64,
    pub horizon: f64,
    pub char_step: f64,
    /// Allowed excess of the measured rate over the claimed `−1`.
    pub slack: f64,
}

impl Default for LyapunovOptions {
    fn default() -> Self {
        LyapunovOptions {
            ensemble: 8,
            seed: 0,
            nx: 64,
            dt: 0.05,
            horizon: 10.0,
            char_step: crate::characteristics::DEFAULT_STEP,
            slack: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovReport {
    pub r1: f64,
    pub r2: f64,
    pub margins: BoundaryMargins,
    pub rates: Vec<EmpiricalRate>,
    pub worst_rate: f64,
    /// Per member, [`envelope_ratio`] with `c = 1`.
    pub envelope: Vec<f64>,
    pub claimed_rate: f64,
    pub slack: f64,
    pub pass: bool,
}

/// Measured rates and `c = 1` envelope ratios of `V` for an ensemble of
/// random compatible initial data (homogeneous problem).
pub fn measure_rates(sys: &HyperbolicSystem, opts: &LyapunovOptions) -> Result<(Vec<EmpiricalRate>, Vec<f64>)> {
    let evo = EvolveOptions { with_source: false, stride: usize::MAX, char_step: opts.char_step };
    let results: Vec<(EmpiricalRate, f64)> = (0..opts.ensemble as u64)
        .into_par_iter()
        .map(|q| {
            let mut rng = ensemble_rng(opts.seed, q);
            let phi = random_compatible(sys, opts.nx, 0.0, &mut rng);
            let tr = evolve(sys, &phi, opts.horizon, opts.dt, evo)?;
            Ok((empirical_rate(&tr)?, envelope_ratio(&tr, 1.0)))
        })
        .collect::<Result<_>>()?;
    Ok(results.into_iter().unzip())
}

/// Margins plus measured rates for the nonautonomous example with boundary
/// coefficients `(r1, r2)`, evolved on the given (validated) system.
pub fn analyze_example2(sys: &HyperbolicSystem, opts: &LyapunovOptions) -> Result<LyapunovReport> {
    if sys.n() != 2 || sys.m() != 1 {
        return Err(Error::InvalidSystem("the Lyapunov margins need a 2x2 system with m = 1".into()));
    }
    let (r1, r2) = (sys.r()[0][1], sys.r()[1][0]);
    let (rates, envelope) = measure_rates(sys, opts)?;
    let worst_rate = rates.iter().map(|r| r.rate).fold(f64::NEG_INFINITY, f64::max);
    let margins = boundary_margins_example2(r1, r2);
    Ok(LyapunovReport {
        r1,
        r2,
        margins,
        worst_rate,
        envelope,
        claimed_rate: -1.0,
        slack: opts.slack,
        pass: margins.pass && worst_rate <= -1.0 + opts.slack,
        rates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::system::{Field, Probe};

    #[test]
    fn critical_coefficients_give_zero_margins() {
        let (r1, r2) = presets::example2_critical_coefficients();
        let m = boundary_margins_example2(r1, r2);
        assert!(m.beta1.abs() <= 1e-12 && m.beta2.abs() <= 1e-12, "{m:?}");
        assert!(m.pass);
        let z = boundary_margins_example2(0.0, 0.0);
        assert_eq!((z.beta1, z.beta2), (-0.75, -3.0));
        let bad = boundary_margins_example2(0.0, 1.0);
        assert_eq!(bad.beta1, 3.25);
        assert!(!bad.pass);
    }

    #[test]
    fn margins_are_suprema_and_monotone() {
        let (r1, r2) = (1.2, 0.3);
        let m = boundary_margins_example2(r1, r2);
        let (mut s1, mut s2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for k in 0..=10_000 {
            let (b1, b2) = boundary_terms_example2(r1, r2, 2.0 * std::f64::consts::PI * k as f64 / 10_000.0);
            s1 = s1.max(b1);
            s2 = s2.max(b2);
        }
        assert!((s1 - m.beta1).abs() < 1e-7 && (s2 - m.beta2).abs() < 1e-7);
        let bigger = boundary_margins_example2(1.3, 0.4);
        assert!(bigger.beta1 > m.beta1 && bigger.beta2 > m.beta2);
    }

    #[test]
    fn zero_data_is_rejected() {
        let sys = presets::example2(1.0, 0.3).unwrap();
        sys.validate_hyperbolicity(Probe::default(), (0.0, 7.0)).unwrap();
        let tr = evolve(&sys, &Field::zeros(2, 32, 0.0), 1.0, 0.05, EvolveOptions::default()).unwrap();
        assert!(matches!(empirical_rate(&tr), Err(Error::VanishingFunctional)));
    }

    #[test]
    fn conservative_transport_has_zero_rate() {
        let sys = presets::transport(1.0, 1.0, None).unwrap();
        sys.validate_hyperbolicity(Probe::default(), (0.0, 1.0)).unwrap();
        let phi = Field::from_fn(1, 128, 0.0, |_, x| (2.0 * std::f64::consts::PI * x).cos());
        let tr = evolve(&sys, &phi, 3.0, 1.0 / 128.0, EvolveOptions::default()).unwrap();
        let r = empirical_rate(&tr).unwrap();
        assert!(r.rate.abs() < 0.05, "{r:?}");
    }

    #[test]
    fn example2_decays_at_the_claimed_rate() {
        let (r1, r2) = presets::example2_critical_coefficients();
        let sys = presets::example2(r1, r2).unwrap();
        sys.validate_hyperbolicity(Probe::default(), (0.0, 7.0)).unwrap();
        let rep = analyze_example2(&sys, &LyapunovOptions { ensemble: 8, horizon: 4.0, ..Default::default() }).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.envelope.iter().all(|&e| e <= 1.05), "{:?}", rep.envelope);
    }
}
