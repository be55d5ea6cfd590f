//! Semi-Lagrangian time stepping for the initial-boundary value problem.
//!
//! Along the `j`-th characteristic `dX/dτ = a_j(X, τ)` the equation reads
//! `du_j/dτ = −b_jj u_j + g_j` with `g_j = f_j − Σ_{k≠j} b_jk u_k`, so
//!
//! ```text
//! u_j(x, t1) = E(τ0) u_j(X(τ0), τ0) + ∫_{τ0}^{t1} E(τ) g_j(X(τ), τ) dτ,   E(τ) = exp(−∫_τ^{t1} b_jj)
//! ```
//!
//! where `τ0 = t0` if the backward characteristic stays inside the strip and
//! `τ0` is the crossing time of `x_j` otherwise; in the latter case the foot
//! value is supplied by the reflection condition. Foot values are cubic
//! Lagrange interpolants in `x`, boundary values are linear in `t`, and the
//! coupling integral is a trapezoid with one predictor-corrector sweep. Each
//! step is an affine map of the previous field (linear when `f` is dropped).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::characteristics::{exit_abscissa, march, CharState};
use crate::error::{Error, Result};
use crate::system::{Field, HyperbolicSystem};

/// Spatial displacement allowed per backward RK4 substep.
const SUBSTEP_SHIFT: f64 = 1.0 / 64.0;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Stencil {
    base: usize,
    w: [f64; 4],
}

impl Stencil {
    /// Cubic Lagrange weights at `x ∈ [0, 1]` on the grid `i / nx`.
    pub(crate) fn cubic(x: f64, nx: usize) -> Self {
        let s = x * nx as f64;
        let cell = (s.floor().max(0.0) as usize).min(nx - 1);
        let base = cell.saturating_sub(1).min(nx - 3);
        let p = s - base as f64;
        let w = [
            -(p - 1.0) * (p - 2.0) * (p - 3.0) / 6.0,
            p * (p - 2.0) * (p - 3.0) / 2.0,
            -p * (p - 1.0) * (p - 3.0) / 2.0,
            p * (p - 1.0) * (p - 2.0) / 6.0,
        ];
        Stencil { base, w }
    }

    #[inline]
    pub(crate) fn apply(&self, v: &[f64]) -> f64 {
        let b = self.base;
        self.w[0] * v[b] + self.w[1] * v[b + 1] + self.w[2] * v[b + 2] + self.w[3] * v[b + 3]
    }
}

#[derive(Debug, Clone, Copy)]
enum Foot {
    Interior { x: f64, stencil: Stencil },
    Boundary { tau: f64 },
}

#[derive(Debug, Clone)]
struct NodeGeom {
    foot: Foot,
    /// `exp(−∫_{τ0}^{t1} b_jj)`.
    decay: f64,
    /// Off-diagonal couplings at the foot and at the arrival point.
    b_foot: Vec<f64>,
    b_node: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct BackState {
    x: f64,
    ib: f64,
}

fn back_rhs(sys: &HyperbolicSystem, j: usize, x: f64, tau: f64) -> Result<(f64, f64)> {
    let xc = x.clamp(0.0, 1.0);
    Ok((sys.speed(j, xc, tau)?, sys.coupling(j, j, xc, tau)?))
}

/// Follows the `j`-th characteristic backwards from `(x, t1)` to `t0` or to
/// its crossing with `x_j`; returns the start point and `∫_{τ0}^{t1} b_jj`.
fn backtrack(
    sys: &HyperbolicSystem,
    j: usize,
    x: f64,
    t0: f64,
    t1: f64,
    nsub: usize,
    char_step: f64,
) -> Result<(f64, f64, f64, bool)> {
    let xj = exit_abscissa(j, sys.m());
    if x == xj {
        return Ok((xj, t1, 0.0, true));
    }
    let h = -(t1 - t0) / nsub as f64;
    let inside = |x: f64| (0.0..=1.0).contains(&x);
    let mut s = BackState { x, ib: 0.0 };
    let mut tau = t1;
    for q in 0..nsub {
        let (a1, b1) = back_rhs(sys, j, s.x, tau)?;
        let (a2, b2) = back_rhs(sys, j, s.x + 0.5 * h * a1, tau + 0.5 * h)?;
        let (a3, b3) = back_rhs(sys, j, s.x + 0.5 * h * a2, tau + 0.5 * h)?;
        let (a4, b4) = back_rhs(sys, j, s.x + h * a3, tau + h)?;
        let next = BackState {
            x: s.x + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4),
            ib: s.ib + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4),
        };
        if !inside(next.x) {
            // finish in ξ from the last interior point so the crossing lands exactly on x_j
            let end = march(sys, j, s.x, CharState { omega: tau, ib: 0.0, ia: 0.0 }, xj, char_step)?;
            let tau_e = end.omega.clamp(t0, tau);
            return Ok((xj, tau_e, -s.ib - end.ib, true));
        }
        s = next;
        tau = if q + 1 == nsub { t0 } else { t1 + (q + 1) as f64 * h };
    }
    Ok((s.x, t0, -s.ib, false))
}

/// One-step map `u(t0) ↦ u(t0 + dt)` on a fixed grid.
#[derive(Debug)]
pub struct Stepper<'a> {
    sys: &'a HyperbolicSystem,
    nx: usize,
    dt: f64,
    with_source: bool,
    coupled: bool,
    nsub: usize,
    char_step: f64,
    cached: Option<Vec<NodeGeom>>,
}

impl<'a> Stepper<'a> {
    pub fn new(sys: &'a HyperbolicSystem, nx: usize, dt: f64, with_source: bool, char_step: f64) -> Result<Self> {
        crate::characteristics::check_step(sys, char_step)?;
        if nx < crate::system::MIN_NX {
            return Err(Error::InvalidArgument(format!("nx = {nx} below {}", crate::system::MIN_NX)));
        }
        let n = sys.n();
        let coupled = (0..n).any(|j| (0..n).any(|k| k != j && sys.b_expr(j, k).as_const() != Some(0.0)));
        Ok(Stepper {
            sys,
            nx,
            dt,
            with_source: with_source && sys.has_source(),
            coupled,
            nsub: 1,
            char_step,
            cached: None,
        })
    }

    /// Checks the one-crossing rule against the speeds on `[t0, t1]` and fixes
    /// the number of backward substeps.
    pub fn prepare(&mut self, t0: f64, t1: f64) -> Result<()> {
        let amax = self.sys.max_speed((t0, t1.max(t0 + self.dt)))?;
        let limit = 0.5f64.min(1.0 / (2.0 * amax));
        if !(self.dt > 0.0) || self.dt > limit * (1.0 + 1e-12) {
            return Err(Error::Cfl { dt: self.dt, limit });
        }
        self.nsub = ((self.dt * amax / SUBSTEP_SHIFT).ceil() as usize).max(2);
        if self.sys.is_autonomous() {
            self.cached = Some(self.geometry(0.0)?);
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn geometry(&self, t0: f64) -> Result<Vec<NodeGeom>> {
        let sys = self.sys;
        let n = sys.n();
        let nx = self.nx;
        let t1 = t0 + self.dt;
        (0..n * (nx + 1))
            .map(|idx| {
                let (j, i) = (idx / (nx + 1), idx % (nx + 1));
                let x = i as f64 / nx as f64;
                let (xs, ts, ib, exited) = backtrack(sys, j, x, t0, t1, self.nsub, self.char_step)?;
                let foot = if exited {
                    Foot::Boundary { tau: ts - t0 }
                } else {
                    Foot::Interior { x: xs, stencil: Stencil::cubic(xs, nx) }
                };
                let (b_foot, b_node) = if self.coupled {
                    let mut bf = vec![0.0; n];
                    let mut bn = vec![0.0; n];
                    for k in (0..n).filter(|&k| k != j) {
                        bf[k] = sys.coupling(j, k, xs, ts)?;
                        bn[k] = sys.coupling(j, k, x, t1)?;
                    }
                    (bf, bn)
                } else {
                    (Vec::new(), Vec::new())
                };
                Ok(NodeGeom { foot, decay: (-ib).exp(), b_foot, b_node })
            })
            .collect()
    }

    /// Advances `u0` by one step.
    pub fn step(&self, u0: &Field) -> Result<Field> {
        let owned;
        let geom = match &self.cached {
            Some(g) => g,
            None => {
                owned = self.geometry(u0.t())?;
                &owned
            }
        };
        let pred = self.sweep(u0, u0, geom)?;
        if self.coupled {
            self.sweep(u0, &pred, geom)
        } else {
            Ok(pred)
        }
    }

    fn sweep(&self, u0: &Field, guess: &Field, geom: &[NodeGeom]) -> Result<Field> {
        let sys = self.sys;
        let (n, m, nx) = (sys.n(), sys.m(), self.nx);
        let t0 = u0.t();
        let t1 = t0 + self.dt;
        let mut u1 = Field::zeros(n, nx, t1);
        let g_node = |j: usize, i: usize, gd: &NodeGeom| -> Result<f64> {
            let x = i as f64 / nx as f64;
            let mut g = if self.with_source { sys.source(j, x, t1)? } else { 0.0 };
            for k in 0..gd.b_node.len() {
                g -= gd.b_node[k] * guess.get(k, i);
            }
            Ok(g)
        };
        // interior feet
        for j in 0..n {
            for i in 0..=nx {
                let gd = &geom[j * (nx + 1) + i];
                if let Foot::Interior { x, stencil } = gd.foot {
                    let mut g0 = if self.with_source { sys.source(j, x, t0)? } else { 0.0 };
                    for k in 0..gd.b_foot.len() {
                        g0 -= gd.b_foot[k] * stencil.apply(u0.component(k));
                    }
                    let v = gd.decay * stencil.apply(u0.component(j))
                        + 0.5 * self.dt * (gd.decay * g0 + g_node(j, i, gd)?);
                    u1.set(j, i, v);
                }
            }
        }
        // inflow ends from the outgoing traces just computed
        let (l1, r1) = (u1.left(), u1.right());
        for j in 0..n {
            let i = if j < m { 0 } else { nx };
            u1.set(j, i, sys.reflect(j, &l1, &r1));
        }
        // feet on the inflow boundary
        let (l0, r0) = (u0.left(), u0.right());
        for j in 0..n {
            let ij = if j < m { 0 } else { nx };
            let (bc0, bc1) = (sys.reflect(j, &l0, &r0), u1.get(j, ij));
            for i in 0..=nx {
                let gd = &geom[j * (nx + 1) + i];
                let Foot::Boundary { tau } = gd.foot else { continue };
                if i == ij {
                    continue;
                }
                let s = tau / self.dt;
                let te = t0 + tau;
                let bc = (1.0 - s) * bc0 + s * bc1;
                let xj = exit_abscissa(j, m);
                let mut g0 = if self.with_source { sys.source(j, xj, te)? } else { 0.0 };
                for k in 0..gd.b_foot.len() {
                    g0 -= gd.b_foot[k] * ((1.0 - s) * u0.get(k, ij) + s * guess.get(k, ij));
                }
                let v = gd.decay * bc + 0.5 * (t1 - te) * (gd.decay * g0 + g_node(j, i, gd)?);
                u1.set(j, i, v);
            }
        }
        Ok(u1)
    }
}

/// `(‖u‖_{L²}, ‖u‖_{H¹})`: trapezoid rule over all components; derivatives by
/// centred differences, second-order one-sided at the ends.
pub fn norms(field: &Field) -> (f64, f64) {
    let nx = field.nx();
    let h = field.dx();
    let mut l2 = 0.0;
    let mut d2 = 0.0;
    for j in 0..field.n() {
        let u = field.component(j);
        for i in 0..=nx {
            let w = if i == 0 || i == nx { 0.5 * h } else { h };
            let du = if i == 0 {
                (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h)
            } else if i == nx {
                (3.0 * u[nx] - 4.0 * u[nx - 1] + u[nx - 2]) / (2.0 * h)
            } else {
                (u[i + 1] - u[i - 1]) / (2.0 * h)
            };
            l2 += w * u[i] * u[i];
            d2 += w * du * du;
        }
    }
    (l2.sqrt(), (l2 + d2).sqrt())
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub l2: Vec<f64>,
    pub h1: Vec<f64>,
    /// Fields at every `stride`-th step (always including the first).
    pub snapshots: Vec<Field>,
    pub stride: usize,
    pub dt: f64,
    pub last: Field,
}

#[derive(Debug, Clone, Copy)]
pub struct EvolveOptions {
    pub with_source: bool,
    pub stride: usize,
    pub char_step: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            with_source: true,
            stride: 1,
            char_step: crate::characteristics::DEFAULT_STEP,
        }
    }
}

/// Number of equal steps of length `≤ dt` covering `horizon`.
pub fn step_count(horizon: f64, dt: f64) -> usize {
    ((horizon / dt) - 1e-9).ceil().max(1.0) as usize
}

/// Evolves `phi` over `[phi.t, phi.t + horizon]` in equal steps no longer than `dt`.
pub fn evolve(sys: &HyperbolicSystem, phi: &Field, horizon: f64, dt: f64, opts: EvolveOptions) -> Result<Trajectory> {
    if phi.n() != sys.n() {
        return Err(Error::InvalidArgument(format!("field has {} components, system {}", phi.n(), sys.n())));
    }
    if !phi.is_finite() {
        return Err(Error::NonFinite { step: 0 });
    }
    let steps = step_count(horizon, dt);
    let dt = horizon / steps as f64;
    let mut stepper = Stepper::new(sys, phi.nx(), dt, opts.with_source, opts.char_step)?;
    stepper.prepare(phi.t(), phi.t() + horizon)?;
    let stride = opts.stride.max(1);
    let (l, h) = norms(phi);
    let mut traj = Trajectory {
        times: vec![phi.t()],
        l2: vec![l],
        h1: vec![h],
        snapshots: vec![phi.clone()],
        stride,
        dt,
        last: phi.clone(),
    };
    let t0 = phi.t();
    let mut u = phi.clone();
    for k in 1..=steps {
        let mut next = stepper.step(&u)?;
        // pin the clock to the grid to avoid drift over long runs
        next.set_t(t0 + k as f64 * dt);
        if !next.is_finite() {
            return Err(Error::NonFinite { step: k });
        }
        let (l, h) = norms(&next);
        traj.times.push(next.t());
        traj.l2.push(l);
        traj.h1.push(h);
        if k % stride == 0 {
            traj.snapshots.push(next.clone());
        }
        u = next;
    }
    traj.last = u;
    Ok(traj)
}

/// Seeded smooth field satisfying the zero-order compatibility conditions exactly.
pub fn random_compatible(sys: &HyperbolicSystem, nx: usize, t: f64, rng: &mut ChaCha8Rng) -> Field {
    let n = sys.n();
    let modes = 4;
    let coef: Vec<Vec<(f64, f64)>> = (0..n)
        .map(|_| (0..=modes).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect())
        .collect();
    let mut phi = Field::from_fn(n, nx, t, |j, x| {
        coef[j]
            .iter()
            .enumerate()
            .map(|(q, (c, s))| {
                let w = q as f64 * std::f64::consts::PI;
                (c * (w * x).cos() + s * (w * x).sin()) / (1.0 + q as f64)
            })
            .sum()
    });
    // the correction for component j vanishes at its outgoing end, so the
    // reflected values do not move
    let (left, right) = (phi.left(), phi.right());
    for j in 0..n {
        let inflow_left = j < sys.m();
        let own = if inflow_left { left[j] } else { right[j] };
        let delta = sys.reflect(j, &left, &right) - own;
        for i in 0..=nx {
            let x = i as f64 / nx as f64;
            let bump = if inflow_left { (1.0 - x) * (1.0 - x) } else { x * x };
            phi.set(j, i, phi.get(j, i) + delta * bump);
        }
    }
    phi
}

/// Seeded generator for the `member`-th field of an ensemble.
pub fn ensemble_rng(seed: u64, member: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(member);
    rng
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct NormFit {
    pub alpha: f64,
    pub m: f64,
    /// Root-mean-square residual of the log-linear fit for the worst member.
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub l2: NormFit,
    pub h1: NormFit,
    pub ensemble: usize,
    pub seed: u64,
    pub start: f64,
    pub horizon: f64,
    pub burn_in: f64,
    pub dt: f64,
    pub nx: usize,
    pub exponentially_stable: bool,
    pub flag: Option<String>,
    pub label: &'static str,
}

#[derive(Debug, Clone, Copy)]
pub struct StabilityOptions {
    pub ensemble: usize,
    pub seed: u64,
    pub start: f64,
    pub horizon: f64,
    pub burn_in: f64,
    pub nx: usize,
    pub dt: f64,
    pub char_step: f64,
}

/// Least-squares slope and intercept of `log y` against `t` on `[lo, hi]`,
/// with the RMS residual.
fn log_fit(times: &[f64], y: &[f64], lo: f64, hi: f64) -> (f64, f64, f64) {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(y)
        .filter(|(t, v)| **t >= lo - 1e-12 && **t <= hi + 1e-12 && **v > 0.0)
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    let k = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let slope = sty / stt;
    let icpt = my - slope * mt;
    let res = (pts.iter().map(|p| (p.1 - icpt - slope * p.0).powi(2)).sum::<f64>() / k).sqrt();
    (slope, icpt, res)
}

fn fit_worst(trajs: &[Trajectory], pick: impl Fn(&Trajectory) -> &[f64], start: f64, lo: f64, hi: f64) -> NormFit {
    let fits: Vec<(f64, f64)> = trajs
        .iter()
        .map(|tr| {
            let (slope, _, res) = log_fit(&tr.times, pick(tr), lo, hi);
            (-slope, res)
        })
        .collect();
    let (worst, &(alpha, residual)) = fits
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
        .expect("non-empty ensemble");
    let _ = worst;
    let m = trajs
        .iter()
        .map(|tr| {
            let y = pick(tr);
            let y0 = y[0];
            tr.times
                .iter()
                .zip(y)
                .map(|(t, v)| v * (alpha * (t - start)).exp() / y0)
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    NormFit { alpha, m, residual }
}

/// Fits `‖u(t)‖ ≈ M e^{−α(t−s)}` on homogeneous runs from random compatible
/// data and reports the worst ensemble member.
pub fn estimate_stability(sys: &HyperbolicSystem, opts: StabilityOptions) -> Result<StabilityReport> {
    if opts.ensemble < 8 {
        return Err(Error::InvalidArgument(format!("ensemble of {} < 8 members", opts.ensemble)));
    }
    if !(opts.burn_in >= 0.0 && opts.burn_in < opts.horizon) {
        return Err(Error::InvalidArgument("burn-in must lie inside the horizon".into()));
    }
    let evo = EvolveOptions {
        with_source: false,
        stride: usize::MAX,
        char_step: opts.char_step,
    };
    let trajs = (0..opts.ensemble as u64)
        .into_par_iter()
        .map(|q| {
            let phi = random_compatible(sys, opts.nx, opts.start, &mut ensemble_rng(opts.seed, q));
            evolve(sys, &phi, opts.horizon, opts.dt, evo)
        })
        .collect::<Result<Vec<_>>>()?;
    let (lo, hi) = (opts.start + opts.burn_in, opts.start + opts.horizon);
    let l2 = fit_worst(&trajs, |t| &t.l2, opts.start, lo, hi);
    let h1 = fit_worst(&trajs, |t| &t.h1, opts.start, lo, hi);
    let stable = l2.alpha > 0.0;
    Ok(StabilityReport {
        l2,
        h1,
        ensemble: opts.ensemble,
        seed: opts.seed,
        start: opts.start,
        horizon: opts.horizon,
        burn_in: opts.burn_in,
        dt: trajs[0].dt,
        nx: opts.nx,
        exponentially_stable: stable,
        flag: (!stable).then(|| "not exponentially stable at this resolution".to_string()),
        label: "empirical",
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::characteristics::DEFAULT_STEP;
    use crate::presets;
    use crate::system::Probe;
    use std::f64::consts::PI;

    fn ready(sys: HyperbolicSystem, w: (f64, f64)) -> HyperbolicSystem {
        sys.validate_hyperbolicity(Probe::default(), w).unwrap();
        sys
    }

    #[test]
    fn norms_examples() {
        let one = Field::from_fn(1, 64, 0.0, |_, _| 1.0);
        let (l, h) = norms(&one);
        assert!((l - 1.0).abs() < 1e-14 && (h - 1.0).abs() < 1e-14);
        let zero = Field::zeros(2, 16, 0.0);
        assert_eq!(norms(&zero), (0.0, 0.0));
        let mut errs = vec![];
        for nx in [64, 128] {
            let s = Field::from_fn(1, nx, 0.0, |_, x| (PI * x).sin());
            let (l, h) = norms(&s);
            errs.push(((l - 0.5f64.sqrt()).abs(), (h - (0.5 + PI * PI / 2.0).sqrt()).abs()));
        }
        // the trapezoid rule is exact for sin² on a full half-wave
        assert!(errs.iter().all(|e| e.0 < 1e-14));
        assert!(errs[0].1 / errs[1].1 > 3.5, "{errs:?}");
        assert!(errs[1].1 < 1e-3);
    }

    #[test]
    fn cubic_stencil_reproduces_cubics() {
        let nx = 16;
        let v: Vec<f64> = (0..=nx).map(|i| { let x = i as f64 / nx as f64; x * x * x - 2.0 * x + 0.5 }).collect();
        for x in [0.0, 0.01, 0.37, 0.5, 0.999, 1.0] {
            let s = Stencil::cubic(x, nx);
            assert!((s.apply(&v) - (x * x * x - 2.0 * x + 0.5)).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_stays_zero() {
        let sys = ready(presets::example1(3.0, 0.5, 0.5, None).unwrap(), (0.0, 5.0));
        let tr = evolve(&sys, &Field::zeros(2, 32, 0.0), 2.0, 0.1, EvolveOptions::default()).unwrap();
        assert!(tr.last.values().iter().all(|v| *v == 0.0));
        assert!(tr.l2.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn random_data_is_compatible() {
        let sys = presets::example2(1.5, 0.4).unwrap();
        for q in 0..5 {
            let phi = random_compatible(&sys, 32, 0.0, &mut ensemble_rng(11, q));
            assert!(sys.check_compatibility(&phi).iter().all(|d| *d < 1e-14));
        }
    }

    #[test]
    fn one_crossing_rule() {
        let sys = ready(presets::example1(3.0, 0.5, 0.5, None).unwrap(), (0.0, 5.0));
        let phi = Field::zeros(2, 32, 0.0);
        assert!(matches!(evolve(&sys, &phi, 3.0, 0.6, EvolveOptions::default()), Err(Error::Cfl { .. })));
    }

    #[test]
    fn pure_transport_reflects_once_per_transit() {
        let r = 0.5;
        let sys = ready(presets::transport(1.0, r, None).unwrap(), (0.0, 10.0));
        let nx = 64;
        let mut phi = Field::from_fn(1, nx, 0.0, |_, x| 1.0 + 0.3 * (2.0 * PI * x).sin());
        // compatible: phi(0) = r phi(1)
        for i in 0..=nx {
            let x = i as f64 / nx as f64;
            phi.set(0, i, phi.get(0, i) + (r - 1.0) * (1.0 - x) * (1.0 - x));
        }
        let tr = evolve(&sys, &phi, 2.0, 1.0 / 16.0, EvolveOptions::default()).unwrap();
        // after exactly two transits the profile is scaled by r²
        let err = tr
            .last
            .values()
            .iter()
            .zip(phi.values())
            .map(|(a, b)| (a - r * r * b).abs())
            .fold(0.0, f64::max);
        assert!(err < 2e-3, "{err}");
    }

    #[test]
    fn linearity_and_cocycle() {
        let sys = ready(presets::example1(3.0, 0.5, 0.5, None).unwrap(), (0.0, 5.0));
        let nx = 32;
        let p1 = random_compatible(&sys, nx, 0.0, &mut ensemble_rng(3, 0));
        let p2 = random_compatible(&sys, nx, 0.0, &mut ensemble_rng(3, 1));
        let mut p12 = p1.clone();
        p12.axpy(1.0, &p2);
        let opts = EvolveOptions { with_source: false, ..Default::default() };
        let a = evolve(&sys, &p1, 1.5, 0.1, opts).unwrap().last;
        let b = evolve(&sys, &p2, 1.5, 0.1, opts).unwrap().last;
        let c = evolve(&sys, &p12, 1.5, 0.1, opts).unwrap().last;
        let scale = c.max_abs();
        for k in 0..a.values().len() {
            assert!((a.values()[k] + b.values()[k] - c.values()[k]).abs() <= 1e-10 * scale);
        }
        // s → r → t with the same steps equals s → t
        let whole = evolve(&sys, &p1, 1.0, 0.1, opts).unwrap().last;
        let half = evolve(&sys, &p1, 0.5, 0.1, opts).unwrap().last;
        let rest = evolve(&sys, &half, 0.5, 0.1, opts).unwrap().last;
        assert_eq!(whole.values(), rest.values());
    }

    #[test]
    fn example2_energy_envelope() {
        let (r1, r2) = presets::example2_critical_coefficients();
        let sys = ready(presets::example2(r1, r2).unwrap(), (0.0, 2.0 * PI));
        let phi = random_compatible(&sys, 64, 0.0, &mut ensemble_rng(5, 0));
        let opts = EvolveOptions { with_source: false, ..Default::default() };
        let tr = evolve(&sys, &phi, 4.0, 0.05, opts).unwrap();
        let v0 = tr.l2[0] * tr.l2[0];
        for (t, l) in tr.times.iter().zip(&tr.l2) {
            assert!(l * l <= (-t).exp() * v0 * 1.05, "t={t}");
        }
    }

    #[test]
    fn transport_stability_flags() {
        let opts = StabilityOptions {
            ensemble: 8,
            seed: 1,
            start: 0.0,
            horizon: 6.0,
            burn_in: 1.0,
            nx: 32,
            dt: 1.0 / 16.0,
            char_step: DEFAULT_STEP,
        };
        let sys = ready(presets::transport(1.0, 0.5, None).unwrap(), (0.0, 6.0));
        let rep = estimate_stability(&sys, opts).unwrap();
        // one reflection per unit transit time: rate ln 2
        assert!(rep.exponentially_stable);
        assert!((rep.l2.alpha - 2f64.ln()).abs() < 0.1 * 2f64.ln(), "{rep:?}");
        assert!(rep.l2.m >= 1.0 - 1e-6);

        let sys = ready(presets::transport(1.0, 1.5, None).unwrap(), (0.0, 6.0));
        let rep = estimate_stability(&sys, opts).unwrap();
        assert!(!rep.exponentially_stable);
        assert!(rep.flag.is_some());
        assert!(rep.l2.alpha < 0.0);
    }
}
