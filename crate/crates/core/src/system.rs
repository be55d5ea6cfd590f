//! Problem definition `∂_t u + a ∂_x u + b u = f` on `0 < x < 1` with
//! reflection boundary conditions, and checks of its structural hypotheses.
//!
//! Components are indexed from 0. Components `0..m` have positive speed and
//! enter at `x = 0`; components `m..n` have negative speed and enter at `x = 1`.
//! The boundary operator is
//!
//! ```text
//! R_j v = Σ_{k ≥ m} r_jk v_k(0) + Σ_{k < m} r_jk v_k(1)
//! ```
//!
//! i.e. each incoming value is a combination of the outgoing traces.

use std::sync::OnceLock;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Expr, Var};

/// Hyperbolicity margins below this are treated as degenerate.
pub const HYPERBOLICITY_THRESHOLD: f64 = 1e-6;

#[derive(Debug)]
pub struct HyperbolicSystem {
    n: usize,
    m: usize,
    a: Vec<Expr>,
    b: Vec<Vec<Expr>>,
    f: Vec<Expr>,
    r: Vec<Vec<f64>>,
    period: Option<f64>,
    dt_a: Vec<Expr>,
    dt_b: Vec<Vec<Expr>>,
    dt_f: Vec<Expr>,
    a0: OnceLock<f64>,
}

impl HyperbolicSystem {
    pub fn new(
        m: usize,
        a: Vec<Expr>,
        b: Vec<Vec<Expr>>,
        f: Vec<Expr>,
        r: Vec<Vec<f64>>,
        period: Option<f64>,
    ) -> Result<Self> {
        let n = a.len();
        if n == 0 {
            return Err(Error::InvalidSystem("at least one equation is required".into()));
        }
        if m > n {
            return Err(Error::InvalidSystem(format!("m = {m} exceeds n = {n}")));
        }
        if f.len() != n {
            return Err(Error::InvalidSystem(format!("f has {} entries, expected {n}", f.len())));
        }
        if b.len() != n || b.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidSystem(format!("b must be {n}x{n}")));
        }
        if r.len() != n || r.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidSystem(format!("r must be {n}x{n}")));
        }
        if r.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSystem("r has non-finite entries".into()));
        }
        if let Some(p) = period {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::InvalidSystem(format!("period must be positive, got {p}")));
            }
        }
        let dt_a = a.iter().map(|e| e.differentiate(Var::T)).collect();
        let dt_b = b
            .iter()
            .map(|row| row.iter().map(|e| e.differentiate(Var::T)).collect())
            .collect();
        let dt_f = f.iter().map(|e| e.differentiate(Var::T)).collect();
        let sys = HyperbolicSystem {
            n,
            m,
            a,
            b,
            f,
            r,
            period,
            dt_a,
            dt_b,
            dt_f,
            a0: OnceLock::new(),
        };
        if let Some(p) = period {
            sys.check_periodic(p)?;
        }
        Ok(sys)
    }

    /// Builds a system from expression sources.
    pub fn parse(
        m: usize,
        a: &[&str],
        b: &[&[&str]],
        f: &[&str],
        r: Vec<Vec<f64>>,
        period: Option<f64>,
    ) -> Result<Self> {
        let a = a.iter().map(|s| Expr::parse(s)).collect::<std::result::Result<_, _>>()?;
        let b = b
            .iter()
            .map(|row| row.iter().map(|s| Expr::parse(s)).collect::<std::result::Result<_, _>>())
            .collect::<std::result::Result<_, _>>()?;
        let f = f.iter().map(|s| Expr::parse(s)).collect::<std::result::Result<_, _>>()?;
        Self::new(m, a, b, f, r, period)
    }

    /// Same coefficients and boundary operator with a different source.
    pub fn with_source(&self, f: Vec<Expr>) -> Result<Self> {
        let sys = Self::new(self.m, self.a.clone(), self.b.clone(), f, self.r.clone(), self.period)?;
        if let Some(a0) = self.a0.get() {
            let _ = sys.a0.set(*a0);
        }
        Ok(sys)
    }

    fn check_periodic(&self, period: f64) -> Result<()> {
        let exprs = self.a.iter().chain(self.b.iter().flatten()).chain(self.f.iter());
        for e in exprs {
            if !e.depends_on(Var::T) {
                continue;
            }
            for ix in 0..=8 {
                for it in 0..16 {
                    let x = ix as f64 / 8.0;
                    let t = period * it as f64 / 16.0;
                    let d = (e.eval(x, t + period)? - e.eval(x, t)?).abs();
                    if d > 1e-9 {
                        return Err(Error::InvalidSystem(format!(
                            "`{e}` is not {period}-periodic in t (defect {d:.3e} at x={x}, t={t})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn period(&self) -> Option<f64> {
        self.period
    }

    pub fn r(&self) -> &[Vec<f64>] {
        &self.r
    }

    pub fn a_expr(&self, j: usize) -> &Expr {
        &self.a[j]
    }

    pub fn b_expr(&self, j: usize, k: usize) -> &Expr {
        &self.b[j][k]
    }

    pub fn f_expr(&self, j: usize) -> &Expr {
        &self.f[j]
    }

    pub fn sources(&self) -> &[Expr] {
        &self.f
    }

    #[inline]
    pub fn speed(&self, j: usize, x: f64, t: f64) -> Result<f64> {
        Ok(self.a[j].eval(x, t)?)
    }

    #[inline]
    pub fn coupling(&self, j: usize, k: usize, x: f64, t: f64) -> Result<f64> {
        Ok(self.b[j][k].eval(x, t)?)
    }

    #[inline]
    pub fn source(&self, j: usize, x: f64, t: f64) -> Result<f64> {
        Ok(self.f[j].eval(x, t)?)
    }

    #[inline]
    pub fn speed_dt(&self, j: usize, x: f64, t: f64) -> Result<f64> {
        Ok(self.dt_a[j].eval(x, t)?)
    }

    #[inline]
    pub fn coupling_dt(&self, j: usize, k: usize, x: f64, t: f64) -> Result<f64> {
        Ok(self.dt_b[j][k].eval(x, t)?)
    }

    #[inline]
    pub fn source_dt(&self, j: usize, x: f64, t: f64) -> Result<f64> {
        Ok(self.dt_f[j].eval(x, t)?)
    }

    pub fn has_source(&self) -> bool {
        self.f.iter().any(|e| e.as_const() != Some(0.0))
    }

    /// True when no coefficient of the homogeneous operator depends on `t`.
    pub fn is_autonomous(&self) -> bool {
        !self
            .a
            .iter()
            .chain(self.b.iter().flatten())
            .any(|e| e.depends_on(Var::T))
    }

    /// Inflow boundary `x_j`: 0 for positive speeds, 1 for negative speeds.
    pub fn exit_abscissa(&self, j: usize) -> f64 {
        crate::characteristics::exit_abscissa(j, self.m)
    }

    /// `R_j v` from the endpoint values `left[k] = v_k(0)`, `right[k] = v_k(1)`.
    pub fn reflect(&self, j: usize, left: &[f64], right: &[f64]) -> f64 {
        let row = &self.r[j];
        let mut s = 0.0;
        for k in 0..self.n {
            s += row[k] * if k < self.m { right[k] } else { left[k] };
        }
        s
    }

    /// Row sum `Σ_k |r_jk|`.
    pub fn reflection_row_norm(&self, j: usize) -> f64 {
        self.r[j].iter().map(|v| v.abs()).sum()
    }

    pub fn a0(&self) -> Option<f64> {
        self.a0.get().copied()
    }

    pub(crate) fn require_a0(&self) -> Result<f64> {
        self.a0().ok_or(Error::NotValidated)
    }

    pub fn max_speed(&self, window: (f64, f64)) -> Result<f64> {
        let mut vmax: f64 = 0.0;
        for j in 0..self.n {
            for ix in 0..=32 {
                for it in 0..=32 {
                    let x = ix as f64 / 32.0;
                    let t = window.0 + (window.1 - window.0) * it as f64 / 32.0;
                    vmax = vmax.max(self.speed(j, x, t)?.abs());
                }
            }
        }
        Ok(vmax)
    }

    /// Samples the three margins of the hyperbolicity hypothesis over
    /// `[0,1] × window`, refines once around each detected minimum and
    /// records `a_0` on success.
    pub fn validate_hyperbolicity(&self, probe: Probe, window: (f64, f64)) -> Result<HyperbolicityReport> {
        if probe.nx < 63 || probe.nt < 63 {
            return Err(Error::InvalidArgument(format!(
                "probe grid must have at least 64x64 points, got {}x{}",
                probe.nx + 1,
                probe.nt + 1
            )));
        }
        if !(window.1 > window.0) {
            return Err(Error::InvalidArgument(format!("empty window {window:?}")));
        }
        let hx = 1.0 / probe.nx as f64;
        let ht = (window.1 - window.0) / probe.nt as f64;
        let mut margins = [Margin::none(Condition::PositiveSpeed), Margin::none(Condition::NegativeSpeed), Margin::none(Condition::Separation)];
        let mut speeds = vec![0.0; self.n];
        for ix in 0..=probe.nx {
            for it in 0..=probe.nt {
                let x = ix as f64 * hx;
                let t = window.0 + it as f64 * ht;
                self.sample_margins(x, t, &mut speeds, &mut margins)?;
            }
        }
        // one local refinement pass around each minimiser
        let centres: Vec<(f64, f64)> = margins.iter().filter(|m| m.value.is_finite()).map(|m| (m.x, m.t)).collect();
        for (cx, ct) in centres {
            for ix in 0..=8 {
                for it in 0..=8 {
                    let x = (cx + (ix as f64 / 4.0 - 1.0) * hx).clamp(0.0, 1.0);
                    let t = (ct + (it as f64 / 4.0 - 1.0) * ht).clamp(window.0, window.1);
                    self.sample_margins(x, t, &mut speeds, &mut margins)?;
                }
            }
        }
        let report = HyperbolicityReport {
            a0: margins.iter().map(|m| m.value).fold(f64::INFINITY, f64::min),
            positive_margin: margins[0].value_opt(),
            negative_margin: margins[1].value_opt(),
            separation_margin: margins[2].value_opt(),
            probe,
            window,
        };
        if let Some(bad) = margins.iter().find(|m| m.value < HYPERBOLICITY_THRESHOLD) {
            return Err(Error::Hyperbolicity(Box::new(HyperbolicityViolation {
                condition: bad.condition,
                components: bad.components,
                x: bad.x,
                t: bad.t,
                value: bad.value,
            })));
        }
        let a0 = if report.a0.is_finite() { report.a0 } else { f64::MAX };
        let _ = self.a0.set(a0);
        Ok(HyperbolicityReport { a0, ..report })
    }

    fn sample_margins(&self, x: f64, t: f64, speeds: &mut [f64], margins: &mut [Margin; 3]) -> Result<()> {
        for (j, s) in speeds.iter_mut().enumerate() {
            *s = self.speed(j, x, t)?;
        }
        for j in 0..self.n {
            if j < self.m {
                margins[0].offer(speeds[j], (j, j), x, t);
            } else {
                margins[1].offer(-speeds[j], (j, j), x, t);
            }
            for k in j + 1..self.n {
                margins[2].offer((speeds[j] - speeds[k]).abs(), (j, k), x, t);
            }
        }
        Ok(())
    }

    /// Defect `|φ_j(x_j) - R_j φ|` of the zero-order compatibility conditions.
    pub fn check_compatibility(&self, phi: &Field) -> Vec<f64> {
        let left: Vec<f64> = (0..self.n).map(|k| phi.get(k, 0)).collect();
        let right: Vec<f64> = (0..self.n).map(|k| phi.get(k, phi.nx())).collect();
        (0..self.n)
            .map(|j| {
                let own = if j < self.m { left[j] } else { right[j] };
                (own - self.reflect(j, &left, &right)).abs()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Probe {
    pub nx: usize,
    pub nt: usize,
}

impl Default for Probe {
    fn default() -> Self {
        Probe { nx: 64, nt: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    PositiveSpeed,
    NegativeSpeed,
    Separation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HyperbolicityViolation {
    pub condition: Condition,
    pub components: (usize, usize),
    pub x: f64,
    pub t: f64,
    pub value: f64,
}

impl std::fmt::Display for HyperbolicityViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let what = match self.condition {
            Condition::PositiveSpeed => format!("a_{} must stay positive", self.components.0),
            Condition::NegativeSpeed => format!("a_{} must stay negative", self.components.0),
            Condition::Separation => {
                format!("a_{} and a_{} must stay separated", self.components.0, self.components.1)
            }
        };
        write!(f, "{what}; margin {:.3e} at (x={}, t={})", self.value, self.x, self.t)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HyperbolicityReport {
    pub a0: f64,
    pub positive_margin: Option<f64>,
    pub negative_margin: Option<f64>,
    pub separation_margin: Option<f64>,
    pub probe: Probe,
    pub window: (f64, f64),
}

#[derive(Debug, Clone, Copy)]
struct Margin {
    condition: Condition,
    value: f64,
    components: (usize, usize),
    x: f64,
    t: f64,
}

impl Margin {
    fn none(condition: Condition) -> Self {
        Margin {
            condition,
            value: f64::INFINITY,
            components: (0, 0),
            x: 0.0,
            t: 0.0,
        }
    }

    fn offer(&mut self, v: f64, components: (usize, usize), x: f64, t: f64) {
        if v < self.value {
            *self = Margin {
                condition: self.condition,
                value: v,
                components,
                x,
                t,
            };
        }
    }

    fn value_opt(&self) -> Option<f64> {
        self.value.is_finite().then_some(self.value)
    }
}

/// Grid sample of `u(·, t)`: `n` components at `nx + 1` equispaced points.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    n: usize,
    nx: usize,
    t: f64,
    values: Vec<f64>,
}

pub const MIN_NX: usize = 16;

impl Field {
    pub fn zeros(n: usize, nx: usize, t: f64) -> Self {
        assert!(nx >= MIN_NX, "fields need nx >= {MIN_NX}");
        Field {
            n,
            nx,
            t,
            values: vec![0.0; n * (nx + 1)],
        }
    }

    pub fn from_fn(n: usize, nx: usize, t: f64, mut g: impl FnMut(usize, f64) -> f64) -> Self {
        let mut field = Field::zeros(n, nx, t);
        for j in 0..n {
            for i in 0..=nx {
                field.values[j * (nx + 1) + i] = g(j, i as f64 / nx as f64);
            }
        }
        field
    }

    pub fn from_exprs(exprs: &[Expr], nx: usize, t: f64) -> Result<Self> {
        let mut field = Field::zeros(exprs.len(), nx, t);
        for (j, e) in exprs.iter().enumerate() {
            for i in 0..=nx {
                field.values[j * (nx + 1) + i] = e.eval(i as f64 / nx as f64, t)?;
            }
        }
        Ok(field)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn set_t(&mut self, t: f64) {
        self.t = t;
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 / self.nx as f64
    }

    #[inline]
    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.values[j * (self.nx + 1) + i]
    }

    #[inline]
    pub fn set(&mut self, j: usize, i: usize, v: f64) {
        self.values[j * (self.nx + 1) + i] = v;
    }

    pub fn component(&self, j: usize) -> &[f64] {
        &self.values[j * (self.nx + 1)..(j + 1) * (self.nx + 1)]
    }

    pub fn component_mut(&mut self, j: usize) -> &mut [f64] {
        let w = self.nx + 1;
        &mut self.values[j * w..(j + 1) * w]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn axpy(&mut self, alpha: f64, other: &Field) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn left(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.get(k, 0)).collect()
    }

    pub fn right(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.get(k, self.nx)).collect()
    }
}
