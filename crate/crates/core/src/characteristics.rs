//! Characteristic curves `ξ ↦ ω_j(ξ, x, t)`, solutions of
//! `∂_ξ ω = 1 / a_j(ξ, ω)` with `ω(x) = t`, traced from the anchor towards
//! the inflow boundary `x_j`, together with the exponents of the weights
//!
//! ```text
//! c_j^i(ξ, x, t) = exp ∫_x^ξ [ b_jj / a_j − i ∂_t a_j / a_j² ](η, ω_j(η)) dη
//! d_j^i(ξ, x, t) = c_j^i(ξ, x, t) / a_j(ξ, ω_j(ξ))
//! ```

use crate::error::{Error, Result};
use crate::system::HyperbolicSystem;

pub const DEFAULT_STEP: f64 = 1.0 / 256.0;

/// Inflow abscissa of component `j` (0-based) when components `0..m` move right.
pub fn exit_abscissa(j: usize, m: usize) -> f64 {
    if j < m {
        0.0
    } else {
        1.0
    }
}

/// State carried along a characteristic: time, `∫ b_jj/a_j` and `∫ ∂_t a_j/a_j²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct CharState {
    pub omega: f64,
    pub ib: f64,
    pub ia: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Slopes {
    pub omega: f64,
    pub ib: f64,
    pub ia: f64,
}

#[inline]
pub(crate) fn slopes(sys: &HyperbolicSystem, j: usize, xi: f64, omega: f64) -> Result<Slopes> {
    let a = sys.speed(j, xi, omega)?;
    let inv = 1.0 / a;
    Ok(Slopes {
        omega: inv,
        ib: sys.coupling(j, j, xi, omega)? * inv,
        ia: sys.speed_dt(j, xi, omega)? * inv * inv,
    })
}

/// One classical RK4 step of length `h` (signed) in `ξ`.
#[inline]
pub(crate) fn rk4_step(sys: &HyperbolicSystem, j: usize, xi: f64, s: CharState, h: f64) -> Result<CharState> {
    let k1 = slopes(sys, j, xi, s.omega)?;
    let k2 = slopes(sys, j, xi + 0.5 * h, s.omega + 0.5 * h * k1.omega)?;
    let k3 = slopes(sys, j, xi + 0.5 * h, s.omega + 0.5 * h * k2.omega)?;
    let k4 = slopes(sys, j, xi + h, s.omega + h * k3.omega)?;
    let w = h / 6.0;
    Ok(CharState {
        omega: s.omega + w * (k1.omega + 2.0 * k2.omega + 2.0 * k3.omega + k4.omega),
        ib: s.ib + w * (k1.ib + 2.0 * k2.ib + 2.0 * k3.ib + k4.ib),
        ia: s.ia + w * (k1.ia + 2.0 * k2.ia + 2.0 * k3.ia + k4.ia),
    })
}

/// Advances from `xi0` to `xi1` with equal substeps no longer than `max_step`.
pub(crate) fn march(
    sys: &HyperbolicSystem,
    j: usize,
    xi0: f64,
    mut s: CharState,
    xi1: f64,
    max_step: f64,
) -> Result<CharState> {
    let len = xi1 - xi0;
    if len == 0.0 {
        return Ok(s);
    }
    let k = (len.abs() / max_step).ceil().max(1.0) as usize;
    let h = len / k as f64;
    for q in 0..k {
        s = rk4_step(sys, j, xi0 + q as f64 * h, s, h)?;
    }
    Ok(s)
}

pub(crate) fn check_step(sys: &HyperbolicSystem, step: f64) -> Result<f64> {
    let a0 = sys.require_a0()?;
    let limit = a0 / 8.0;
    if !(step > 0.0) || step > limit {
        return Err(Error::StepTooLarge { step, limit });
    }
    Ok(a0)
}

#[derive(Debug, Clone)]
pub struct CharacteristicPath {
    j: usize,
    x: f64,
    t: f64,
    xi: Vec<f64>,
    states: Vec<CharState>,
    slopes: Vec<Slopes>,
}

/// Traces the `j`-th characteristic through `(x, t)` down to `x_j` with a fixed
/// step, the last one shortened to land exactly on the boundary.
pub fn trace(sys: &HyperbolicSystem, j: usize, x: f64, t: f64, step: f64) -> Result<CharacteristicPath> {
    check_step(sys, step)?;
    if j >= sys.n() {
        return Err(Error::InvalidArgument(format!("component {j} out of range")));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidArgument(format!("anchor x = {x} outside [0,1]")));
    }
    let target = exit_abscissa(j, sys.m());
    let dir = if target > x { 1.0 } else { -1.0 };
    let mut xi = vec![x];
    let mut states = vec![CharState { omega: t, ib: 0.0, ia: 0.0 }];
    let mut sl = vec![slopes(sys, j, x, t)?];
    let mut cur = x;
    while cur != target {
        let remaining = (target - cur).abs();
        // absorb a sliver into the final step rather than taking a tiny one
        let next = if remaining <= step * (1.0 + 1e-9) { target } else { cur + dir * step };
        let s = rk4_step(sys, j, cur, *states.last().unwrap(), next - cur)?;
        sl.push(slopes(sys, j, next, s.omega)?);
        xi.push(next);
        states.push(s);
        cur = next;
    }
    Ok(CharacteristicPath { j, x, t, xi, states, slopes: sl })
}

impl CharacteristicPath {
    pub fn component(&self) -> usize {
        self.j
    }

    pub fn anchor(&self) -> (f64, f64) {
        (self.x, self.t)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.xi
    }

    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.omega).collect()
    }

    /// `ω_j(x_j, x, t)`.
    pub fn end_time(&self) -> f64 {
        self.states.last().unwrap().omega
    }

    pub fn end_abscissa(&self) -> f64 {
        *self.xi.last().unwrap()
    }

    fn locate(&self, xi: f64) -> Result<(usize, f64)> {
        let (lo, hi) = if self.xi[0] <= *self.xi.last().unwrap() {
            (self.xi[0], *self.xi.last().unwrap())
        } else {
            (*self.xi.last().unwrap(), self.xi[0])
        };
        if xi < lo - 1e-14 || xi > hi + 1e-14 {
            return Err(Error::InvalidArgument(format!(
                "ξ = {xi} outside the traced segment [{lo}, {hi}]"
            )));
        }
        if self.xi.len() == 1 {
            return Ok((0, 0.0));
        }
        let h0 = self.xi[1] - self.xi[0];
        let k = (((xi - self.xi[0]) / h0).floor().max(0.0) as usize).min(self.xi.len() - 2);
        let s = (xi - self.xi[k]) / (self.xi[k + 1] - self.xi[k]);
        Ok((k, s.clamp(0.0, 1.0)))
    }

    fn hermite(&self, xi: f64, value: impl Fn(&CharState) -> f64, slope: impl Fn(&Slopes) -> f64) -> Result<f64> {
        let (k, s) = self.locate(xi)?;
        if self.xi.len() == 1 {
            return Ok(value(&self.states[0]));
        }
        let h = self.xi[k + 1] - self.xi[k];
        let (y0, y1) = (value(&self.states[k]), value(&self.states[k + 1]));
        let (d0, d1) = (slope(&self.slopes[k]) * h, slope(&self.slopes[k + 1]) * h);
        let s2 = s * s;
        let s3 = s2 * s;
        Ok((2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * d0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * d1)
    }

    /// `ω_j(ξ, x, t)` for `ξ` between the anchor and the boundary.
    pub fn omega(&self, xi: f64) -> Result<f64> {
        self.hermite(xi, |s| s.omega, |d| d.omega)
    }

    fn exponent(&self, i: u8, xi: f64) -> Result<f64> {
        let ib = self.hermite(xi, |s| s.ib, |d| d.ib)?;
        let ia = self.hermite(xi, |s| s.ia, |d| d.ia)?;
        Ok(ib - f64::from(i) * ia)
    }

    /// `c_j^i(ξ, x, t)`.
    pub fn weight_c(&self, i: u8, xi: f64) -> Result<f64> {
        Ok(self.exponent(i, xi)?.exp())
    }

    /// `d_j^i(ξ, x, t)`.
    pub fn weight_d(&self, sys: &HyperbolicSystem, i: u8, xi: f64) -> Result<f64> {
        let w = self.omega(xi)?;
        Ok(self.weight_c(i, xi)? / sys.speed(self.j, xi, w)?)
    }

    /// `c_j^i(x_j, x, t)` from the stored end state (no interpolation).
    pub fn end_weight_c(&self, i: u8) -> f64 {
        let s = self.states.last().unwrap();
        (s.ib - f64::from(i) * s.ia).exp()
    }
}

pub fn weight_c(sys: &HyperbolicSystem, i: u8, j: usize, xi: f64, x: f64, t: f64, step: f64) -> Result<f64> {
    trace(sys, j, x, t, step)?.weight_c(i, xi)
}

pub fn weight_d(sys: &HyperbolicSystem, i: u8, j: usize, xi: f64, x: f64, t: f64, step: f64) -> Result<f64> {
    trace(sys, j, x, t, step)?.weight_d(sys, i, xi)
}
