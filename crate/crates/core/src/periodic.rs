//! Time-periodic and bounded solutions through the characteristic integral
//! equation `u = C u + D u + F f`:
//!
//! ```text
//! [Cu]_j(x,t) = c_j(x_j,x,t) R_j u(·, ω_j(x_j,x,t))
//! [Du]_j(x,t) = −∫_{x_j}^x d_j(ξ,x,t) Σ_{k≠j} b_jk u_k (ξ, ω_j(ξ,x,t)) dξ
//! [Ff]_j(x,t) =  ∫_{x_j}^x d_j(ξ,x,t) f_j(ξ, ω_j(ξ,x,t)) dξ
//! ```
//!
//! Discretisation: a tensor grid `x_i = i/nx`, `t_l = lT/nt` with periodic
//! wrap in `t`. Every characteristic is traced from its node through the
//! x-grid columns down to `x_j`, so look-ups along the path only interpolate
//! (cubically, with periodic wrap) in `t`, and the path integrals are trapezoid sums. `(I − C)` is
//! inverted through the boundary system `z = G_0 z + h̃` by Neumann series;
//! the outer iteration is `u ← (I−C)^{-1}[(DC + D²)u + (I+D)Ff]`.

use rayon::prelude::*;
use serde::Serialize;

use crate::characteristics::{check_step, march, CharState};
use crate::dissipativity;
use crate::error::{Error, Result};
use crate::evolution::{self, StabilityReport};
use crate::expr::{self, Expr, Var};
use crate::linalg;
use crate::system::{Field, HyperbolicSystem};

/// Grid values `u_j(x_i, t_l)`; periodic fields hold `nt` slices on `[0, T)`,
/// bounded fields `nt + 1` slices on `[T0, T1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    n: usize,
    nx: usize,
    slices: usize,
    t0: f64,
    dt: f64,
    periodic: bool,
    values: Vec<f64>,
}

impl SpaceTimeField {
    pub fn zeros_periodic(n: usize, nx: usize, nt: usize, period: f64) -> Self {
        SpaceTimeField {
            n,
            nx,
            slices: nt,
            t0: 0.0,
            dt: period / nt as f64,
            periodic: true,
            values: vec![0.0; n * nt * (nx + 1)],
        }
    }

    pub fn zeros_window(n: usize, nx: usize, nt: usize, window: (f64, f64)) -> Self {
        SpaceTimeField {
            n,
            nx,
            slices: nt + 1,
            t0: window.0,
            dt: (window.1 - window.0) / nt as f64,
            periodic: false,
            values: vec![0.0; n * (nt + 1) * (nx + 1)],
        }
    }

    /// Samples closed-form components on the periodic grid.
    pub fn from_exprs(exprs: &[Expr], nx: usize, nt: usize, period: f64) -> Result<Self> {
        let mut u = Self::zeros_periodic(exprs.len(), nx, nt, period);
        for (j, e) in exprs.iter().enumerate() {
            for l in 0..nt {
                for i in 0..=nx {
                    let v = e.eval(i as f64 / nx as f64, u.time(l))?;
                    u.set(j, l, i, v);
                }
            }
        }
        Ok(u)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self, l: usize) -> f64 {
        self.t0 + l as f64 * self.dt
    }

    #[inline]
    fn idx(&self, j: usize, l: usize, i: usize) -> usize {
        (j * self.slices + l) * (self.nx + 1) + i
    }

    #[inline]
    pub fn get(&self, j: usize, l: usize, i: usize) -> f64 {
        self.values[self.idx(j, l, i)]
    }

    #[inline]
    pub fn set(&mut self, j: usize, l: usize, i: usize, v: f64) {
        let k = self.idx(j, l, i);
        self.values[k] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |self − other|` over the grid.
    pub fn max_diff(&self, other: &SpaceTimeField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn axpy(&mut self, alpha: f64, other: &SpaceTimeField) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn slice(&self, l: usize) -> Field {
        let mut f = Field::zeros(self.n, self.nx, self.time(l));
        for j in 0..self.n {
            for i in 0..=self.nx {
                f.set(j, i, self.get(j, l, i));
            }
        }
        f
    }

    pub fn set_slice(&mut self, l: usize, f: &Field) {
        for j in 0..self.n {
            for i in 0..=self.nx {
                self.set(j, l, i, f.get(j, i));
            }
        }
    }

    /// Every `k`-th point in `x` and `t` (for comparisons across refinements).
    pub fn coarsen(&self, k: usize) -> SpaceTimeField {
        let nx = self.nx / k;
        let nt = if self.periodic { self.slices / k } else { (self.slices - 1) / k };
        let mut out = if self.periodic {
            Self::zeros_periodic(self.n, nx, nt, self.dt * self.slices as f64)
        } else {
            Self::zeros_window(self.n, nx, nt, (self.t0, self.t0 + self.dt * (self.slices - 1) as f64))
        };
        for j in 0..self.n {
            for l in 0..out.slices {
                for i in 0..=nx {
                    out.set(j, l, i, self.get(j, k * l, k * i));
                }
            }
        }
        out
    }
}

/// Four-point Lagrange weights on offsets −1, 0, 1, 2 at `frac ∈ [0, 1]`.
fn cubic_weights(f: f64) -> [f64; 4] {
    [
        -f * (f - 1.0) * (f - 2.0) / 6.0,
        (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0,
        -(f + 1.0) * f * (f - 2.0) / 2.0,
        (f + 1.0) * f * (f - 1.0) / 6.0,
    ]
}

#[derive(Debug, Clone, Copy)]
struct TimeLookup {
    l0: u32,
    frac: f64,
}

#[derive(Debug, Clone, Copy)]
struct PathPoint {
    at: TimeLookup,
    /// Trapezoid weight times `d_j^i`, signed by the orientation of `∫_{x_j}^x`.
    w: f64,
}

#[derive(Debug, Clone, Copy)]
struct NodeOp {
    c_end: f64,
    end: TimeLookup,
    start: usize,
    len: usize,
}

/// Discrete `C_i`, `D_i` and the path quadrature of `F_i` for weight order `i`.
#[derive(Debug)]
pub struct PathOperators {
    order: u8,
    n: usize,
    m: usize,
    nx: usize,
    nt: usize,
    period: f64,
    r: Vec<Vec<f64>>,
    nodes: Vec<NodeOp>,
    points: Vec<PathPoint>,
    /// `b_jk` at every path point when the system is coupled (n values per point).
    couplings: Vec<f64>,
    coupled: bool,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct NeumannStats {
    pub iterations: usize,
    pub max_ratio: f64,
    pub final_update: f64,
}

impl PathOperators {
    pub fn build(sys: &HyperbolicSystem, order: u8, nx: usize, nt: usize, char_step: f64) -> Result<Self> {
        let period = sys
            .period()
            .ok_or_else(|| Error::InvalidSystem("periodic operators need a period".into()))?;
        check_step(sys, char_step)?;
        if nx < crate::system::MIN_NX || nt < 4 {
            return Err(Error::InvalidArgument(format!("grid {nx}x{nt} too coarse")));
        }
        let (n, m) = (sys.n(), sys.m());
        let coupled = (0..n).any(|j| (0..n).any(|k| k != j && sys.b_expr(j, k).as_const() != Some(0.0)));
        let h = 1.0 / nx as f64;
        let dt = period / nt as f64;
        let lookup = |w: f64| {
            let s = (w / dt).rem_euclid(nt as f64);
            let l0 = (s.floor() as usize).min(nt - 1);
            TimeLookup { l0: l0 as u32, frac: (s - l0 as f64).clamp(0.0, 1.0) }
        };
        let built: Vec<(NodeOp, Vec<PathPoint>, Vec<f64>)> = (0..n * nt * (nx + 1))
            .into_par_iter()
            .map(|idx| {
                let i = idx % (nx + 1);
                let l = (idx / (nx + 1)) % nt;
                let j = idx / ((nx + 1) * nt);
                let t = l as f64 * dt;
                let towards_left = j < m;
                let len = if towards_left { i + 1 } else { nx - i + 1 };
                let sign = if towards_left { 1.0 } else { -1.0 };
                let mut pts = Vec::with_capacity(len);
                let mut coup = Vec::with_capacity(if coupled { len * n } else { 0 });
                let mut s = CharState { omega: t, ib: 0.0, ia: 0.0 };
                let mut xi = i as f64 * h;
                for q in 0..len {
                    if q > 0 {
                        let col = if towards_left { i - q } else { i + q };
                        let next = col as f64 * h;
                        s = march(sys, j, xi, s, next, char_step)?;
                        xi = next;
                    }
                    let c = (s.ib - f64::from(order) * s.ia).exp();
                    let d = c / sys.speed(j, xi, s.omega)?;
                    let tw = if len == 1 {
                        0.0
                    } else if q == 0 || q + 1 == len {
                        0.5 * h
                    } else {
                        h
                    };
                    pts.push(PathPoint { at: lookup(s.omega), w: sign * tw * d });
                    if coupled {
                        for k in 0..n {
                            coup.push(if k == j { 0.0 } else { sys.coupling(j, k, xi, s.omega)? });
                        }
                    }
                }
                let node = NodeOp {
                    c_end: (s.ib - f64::from(order) * s.ia).exp(),
                    end: lookup(s.omega),
                    start: 0,
                    len,
                };
                Ok((node, pts, coup))
            })
            .collect::<Result<Vec<_>>>()?;
        let total: usize = built.iter().map(|b| b.1.len()).sum();
        let mut nodes = Vec::with_capacity(built.len());
        let mut points = Vec::with_capacity(total);
        let mut couplings = Vec::with_capacity(if coupled { total * n } else { 0 });
        for (mut node, pts, coup) in built {
            node.start = points.len();
            points.extend(pts);
            couplings.extend(coup);
            nodes.push(node);
        }
        Ok(PathOperators {
            order,
            n,
            m,
            nx,
            nt,
            period,
            r: sys.r().to_vec(),
            nodes,
            points,
            couplings,
            coupled,
        })
    }

    pub fn order(&self) -> u8 {
        self.order
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.nx, self.nt)
    }

    pub fn unknowns(&self) -> usize {
        self.nodes.len()
    }

    pub fn zeros(&self) -> SpaceTimeField {
        SpaceTimeField::zeros_periodic(self.n, self.nx, self.nt, self.period)
    }

    fn outflow_col(&self, k: usize) -> usize {
        if k < self.m {
            self.nx
        } else {
            0
        }
    }

    fn node_coords(&self, idx: usize) -> (usize, usize, usize) {
        let i = idx % (self.nx + 1);
        let l = (idx / (self.nx + 1)) % self.nt;
        let j = idx / ((self.nx + 1) * self.nt);
        (j, l, i)
    }

    fn path_col(&self, j: usize, i: usize, q: usize) -> usize {
        if j < self.m {
            i - q
        } else {
            i + q
        }
    }

    #[inline]
    fn taps(&self, at: TimeLookup) -> [(usize, f64); 4] {
        let w = cubic_weights(at.frac);
        let l0 = at.l0 as usize + self.nt - 1;
        [0, 1, 2, 3].map(|q| ((l0 + q) % self.nt, w[q]))
    }

    #[inline]
    fn lerp(&self, u: &SpaceTimeField, k: usize, col: usize, at: TimeLookup) -> f64 {
        self.taps(at).iter().map(|&(l, w)| w * u.get(k, l, col)).sum()
    }

    #[inline]
    fn lerp_trace(&self, z: &[f64], k: usize, at: TimeLookup) -> f64 {
        self.taps(at).iter().map(|&(l, w)| w * z[k * self.nt + l]).sum()
    }

    fn map_nodes(&self, f: impl Fn(usize) -> f64 + Sync) -> SpaceTimeField {
        let mut out = self.zeros();
        out.values_mut().par_iter_mut().enumerate().for_each(|(idx, v)| *v = f(idx));
        out
    }

    pub fn apply_c(&self, u: &SpaceTimeField) -> SpaceTimeField {
        self.map_nodes(|idx| {
            let (j, _, _) = self.node_coords(idx);
            let node = &self.nodes[idx];
            let mut s = 0.0;
            for k in 0..self.n {
                let r = self.r[j][k];
                if r != 0.0 {
                    s += r * self.lerp(u, k, self.outflow_col(k), node.end);
                }
            }
            node.c_end * s
        })
    }

    pub fn apply_d(&self, u: &SpaceTimeField) -> SpaceTimeField {
        if !self.coupled {
            return self.zeros();
        }
        self.map_nodes(|idx| {
            let (j, _, i) = self.node_coords(idx);
            let node = &self.nodes[idx];
            let mut acc = 0.0;
            for q in 0..node.len {
                let p = &self.points[node.start + q];
                if p.w == 0.0 {
                    continue;
                }
                let col = self.path_col(j, i, q);
                let b = &self.couplings[(node.start + q) * self.n..(node.start + q + 1) * self.n];
                let mut g = 0.0;
                for k in 0..self.n {
                    if b[k] != 0.0 {
                        g += b[k] * self.lerp(u, k, col, p.at);
                    }
                }
                acc -= p.w * g;
            }
            acc
        })
    }

    /// `∫_{x_j}^x d_j^i(ξ) g_j(ξ, ω_j(ξ)) dξ` for a pointwise integrand
    /// `g(j, ξ, ω, column, lookup)`; `ω` is reduced modulo the period.
    fn integrate(&self, g: impl Fn(usize, f64, f64, usize, TimeLookupRef) -> Result<f64> + Sync) -> Result<SpaceTimeField> {
        let dt = self.period / self.nt as f64;
        let h = 1.0 / self.nx as f64;
        let vals = (0..self.nodes.len())
            .into_par_iter()
            .map(|idx| {
                let (j, _, i) = self.node_coords(idx);
                let node = &self.nodes[idx];
                let mut acc = 0.0;
                for q in 0..node.len {
                    let p = &self.points[node.start + q];
                    if p.w == 0.0 {
                        continue;
                    }
                    let col = self.path_col(j, i, q);
                    let w = (p.at.l0 as f64 + p.at.frac) * dt;
                    acc += p.w * g(j, col as f64 * h, w, col, TimeLookupRef(p.at))?;
                }
                Ok(acc)
            })
            .collect::<Result<Vec<f64>>>()?;
        let mut out = self.zeros();
        out.values_mut().copy_from_slice(&vals);
        Ok(out)
    }

    /// `F f` with `f` taken from the system.
    pub fn apply_f(&self, sys: &HyperbolicSystem) -> Result<SpaceTimeField> {
        if !sys.has_source() {
            return Ok(self.zeros());
        }
        self.integrate(|j, xi, w, _, _| sys.source(j, xi, w))
    }

    /// The boundary operator `G` on outflow traces `z` (layout `k * nt + l`).
    fn apply_g(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.nt];
        for j in 0..self.n {
            for l in 0..self.nt {
                let idx = (j * self.nt + l) * (self.nx + 1) + self.outflow_col(j);
                let node = &self.nodes[idx];
                let mut s = 0.0;
                for k in 0..self.n {
                    s += self.r[j][k] * self.lerp_trace(z, k, node.end);
                }
                out[j * self.nt + l] = node.c_end * s;
            }
        }
        out
    }

    /// `sup |c_j(x_j, 1 − x_j, t)| Σ_k |r_jk|` over the grid times.
    pub fn discrete_g_norm(&self) -> f64 {
        let mut best: f64 = 0.0;
        for j in 0..self.n {
            let row: f64 = self.r[j].iter().map(|v| v.abs()).sum();
            for l in 0..self.nt {
                let idx = (j * self.nt + l) * (self.nx + 1) + self.outflow_col(j);
                best = best.max(self.nodes[idx].c_end.abs() * row);
            }
        }
        best
    }

    /// `(I − C)^{-1} h` through the boundary system `z = G z + h̃`.
    pub fn invert_i_minus_c(&self, h: &SpaceTimeField, budget: usize) -> Result<(SpaceTimeField, NeumannStats)> {
        let g_norm = self.discrete_g_norm();
        if g_norm >= 1.0 {
            return Err(Error::DissipativityNotSatisfied {
                order: self.order as usize,
                norm: g_norm,
            });
        }
        let nt = self.nt;
        let mut ht = vec![0.0; self.n * nt];
        for k in 0..self.n {
            for l in 0..nt {
                ht[k * nt + l] = h.get(k, l, self.outflow_col(k));
            }
        }
        let scale = 1.0 + ht.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut z = ht.clone();
        let mut prev_update = f64::NAN;
        let mut stats = NeumannStats { iterations: 0, max_ratio: 0.0, final_update: 0.0 };
        loop {
            let gz = self.apply_g(&z);
            let mut update: f64 = 0.0;
            for q in 0..z.len() {
                let v = gz[q] + ht[q];
                update = update.max((v - z[q]).abs());
                z[q] = v;
            }
            stats.iterations += 1;
            stats.final_update = update;
            if prev_update.is_finite() && prev_update > 1e-10 * scale {
                stats.max_ratio = stats.max_ratio.max(update / prev_update);
            }
            prev_update = update;
            if update <= 1e-12 * scale {
                break;
            }
            if stats.iterations >= budget {
                return Err(Error::IterationBudget {
                    what: "Neumann series for (I - G)",
                    iterations: stats.iterations,
                    ratio: stats.max_ratio,
                });
            }
        }
        let u = self.map_nodes(|idx| {
            let (j, _, _) = self.node_coords(idx);
            let node = &self.nodes[idx];
            let mut s = 0.0;
            for k in 0..self.n {
                s += self.r[j][k] * self.lerp_trace(&z, k, node.end);
            }
            node.c_end * s + h.values()[idx]
        });
        Ok((u, stats))
    }

    /// Dense matrix of `I − C` (and `− D` when `with_d`) on this grid.
    pub fn dense_matrix(&self, with_d: bool) -> nalgebra::DMatrix<f64> {
        let nn = self.nodes.len();
        let mut a = nalgebra::DMatrix::<f64>::identity(nn, nn);
        let col_index = |k: usize, l: usize, i: usize| (k * self.nt + l) * (self.nx + 1) + i;
        for idx in 0..nn {
            let (j, _, i) = self.node_coords(idx);
            let node = &self.nodes[idx];
            for k in 0..self.n {
                let r = self.r[j][k];
                if r == 0.0 {
                    continue;
                }
                let c = self.outflow_col(k);
                for (l, w) in self.taps(node.end) {
                    a[(idx, col_index(k, l, c))] -= node.c_end * r * w;
                }
            }
            if with_d && self.coupled {
                for q in 0..node.len {
                    let p = &self.points[node.start + q];
                    let col = self.path_col(j, i, q);
                    let b = &self.couplings[(node.start + q) * self.n..(node.start + q + 1) * self.n];
                    for k in 0..self.n {
                        if b[k] == 0.0 {
                            continue;
                        }
                        for (l, w) in self.taps(p.at) {
                            a[(idx, col_index(k, l, col))] += p.w * b[k] * w;
                        }
                    }
                }
            }
        }
        a
    }
}

/// Opaque handle to a path-point time lookup, used by integrands that need
/// grid values along the path.
#[derive(Clone, Copy)]
pub struct TimeLookupRef(TimeLookup);

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PeriodicOptions {
    pub nx: usize,
    pub nt: usize,
    pub char_step: f64,
    pub tol: f64,
    pub budget: usize,
    pub neumann_budget: usize,
    /// Largest number of unknowns handled by dense LU in the fallback.
    pub dense_limit: usize,
}

impl Default for PeriodicOptions {
    fn default() -> Self {
        PeriodicOptions {
            nx: 64,
            nt: 64,
            char_step: crate::characteristics::DEFAULT_STEP,
            tol: 1e-9,
            budget: 200,
            neumann_budget: 10_000,
            dense_limit: 4096,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Iteration,
    DenseCollocation,
    Gmres,
}

#[derive(Debug, Clone, Serialize)]
pub struct PeriodicReport {
    pub method: SolveMethod,
    pub iterations: usize,
    pub last_update: f64,
    pub neumann: NeumannStats,
    pub g0_norm_discrete: f64,
    /// `‖u − Cu − Du − Ff‖_∞`.
    pub fixed_point_residual: f64,
    pub certificate_bound: f64,
    pub certified: bool,
    pub fallback_reason: Option<String>,
}

#[derive(Debug)]
pub struct PeriodicSolution {
    pub u: SpaceTimeField,
    pub ops: PathOperators,
    pub ff: SpaceTimeField,
    pub report: PeriodicReport,
}

fn source_sup(sys: &HyperbolicSystem, nx: usize, nt: usize, period: f64) -> Result<f64> {
    let mut m: f64 = 0.0;
    for j in 0..sys.n() {
        if sys.f_expr(j).as_const() == Some(0.0) {
            continue;
        }
        for l in 0..nt {
            for i in 0..=nx {
                m = m.max(sys.source(j, i as f64 / nx as f64, l as f64 * period / nt as f64)?.abs());
            }
        }
    }
    Ok(m)
}

/// `u − Cu − Du − rhs`.
pub fn fixed_point_defect(ops: &PathOperators, u: &SpaceTimeField, rhs: &SpaceTimeField) -> SpaceTimeField {
    let cu = ops.apply_c(u);
    let du = ops.apply_d(u);
    let mut r = u.clone();
    r.axpy(-1.0, &cu);
    r.axpy(-1.0, &du);
    r.axpy(-1.0, rhs);
    r
}

/// Solves `u = C_i u + D_i u + rhs` on the operator grid.
fn solve_fixed_point(
    ops: &PathOperators,
    rhs: &SpaceTimeField,
    opts: &PeriodicOptions,
) -> Result<(SpaceTimeField, SolveMethod, usize, f64, NeumannStats, Option<String>)> {
    let mut rhs1 = rhs.clone();
    rhs1.axpy(1.0, &ops.apply_d(rhs));
    let (mut u, mut neumann) = ops.invert_i_minus_c(&rhs1, opts.neumann_budget)?;
    if !ops.coupled {
        return Ok((u, SolveMethod::Iteration, 0, 0.0, neumann, None));
    }
    let mut history: Vec<f64> = Vec::new();
    let reason = loop {
        let cu = ops.apply_c(&u);
        let mut smooth = ops.apply_d(&cu);
        smooth.axpy(1.0, &ops.apply_d(&ops.apply_d(&u)));
        smooth.axpy(1.0, &rhs1);
        let (next, st) = ops.invert_i_minus_c(&smooth, opts.neumann_budget)?;
        neumann.iterations = neumann.iterations.max(st.iterations);
        neumann.max_ratio = neumann.max_ratio.max(st.max_ratio);
        let update = next.max_diff(&u);
        u = next;
        history.push(update);
        if !update.is_finite() {
            break "iteration diverged".to_string();
        }
        if update <= opts.tol * (1.0 + u.max_abs()) {
            return Ok((u, SolveMethod::Iteration, history.len(), update, neumann, None));
        }
        let k = history.len();
        if k >= 4 && history[k - 3..].iter().zip(&history[k - 4..k - 1]).all(|(a, b)| *a > 0.95 * b) {
            break format!("stagnated after {k} iterations (update {update:.3e})");
        }
        if k >= opts.budget {
            break format!("budget of {} iterations exhausted (update {update:.3e})", opts.budget);
        }
    };
    let (u, method) = direct_solve(ops, rhs, opts)?;
    Ok((u, method, history.len(), 0.0, neumann, Some(reason)))
}

/// Solves `(I − C − D) u = rhs` by dense LU or, on large grids, GMRES
/// preconditioned with `(I − C)^{-1}`.
pub fn direct_solve(ops: &PathOperators, rhs: &SpaceTimeField, opts: &PeriodicOptions) -> Result<(SpaceTimeField, SolveMethod)> {
    let nn = ops.unknowns();
    if nn <= opts.dense_limit {
        let x = linalg::dense_solve(ops.dense_matrix(true), rhs.values())?;
        let mut u = ops.zeros();
        u.values_mut().copy_from_slice(&x);
        return Ok((u, SolveMethod::DenseCollocation));
    }
    let (b, _) = ops.invert_i_minus_c(rhs, opts.neumann_budget)?;
    let apply = |v: &[f64]| -> Result<Vec<f64>> {
        let mut f = ops.zeros();
        f.values_mut().copy_from_slice(v);
        let (w, _) = ops.invert_i_minus_c(&ops.apply_d(&f), opts.neumann_budget)?;
        Ok(v.iter().zip(w.values()).map(|(a, b)| a - b).collect())
    };
    let (x, stats) = linalg::gmres(apply, b.values(), b.values().to_vec(), 40, 2000, 1e-12)?;
    if stats.relative_residual > 1e-10 {
        return Err(Error::SingularDiscretization(format!(
            "GMRES stalled at relative residual {:.3e}",
            stats.relative_residual
        )));
    }
    let mut u = ops.zeros();
    u.values_mut().copy_from_slice(&x);
    Ok((u, SolveMethod::Gmres))
}

/// The periodic solution of the system's own source.
pub fn solve_periodic(sys: &HyperbolicSystem, opts: &PeriodicOptions) -> Result<PeriodicSolution> {
    let period = sys
        .period()
        .ok_or_else(|| Error::InvalidSystem("solve_periodic needs a period".into()))?;
    let ops = PathOperators::build(sys, 0, opts.nx, opts.nt, opts.char_step)?;
    let g0 = ops.discrete_g_norm();
    if g0 >= 1.0 {
        return Err(Error::DissipativityNotSatisfied { order: 0, norm: g0 });
    }
    let ff = ops.apply_f(sys)?;
    let (u, method, iterations, last_update, neumann, reason) = solve_fixed_point(&ops, &ff, opts)?;
    let defect = fixed_point_defect(&ops, &u, &ff).max_abs();
    let bound = 1e-7 * (1.0 + source_sup(sys, opts.nx, opts.nt, period)?);
    Ok(PeriodicSolution {
        report: PeriodicReport {
            method,
            iterations,
            last_update,
            neumann,
            g0_norm_discrete: g0,
            fixed_point_residual: defect,
            certificate_bound: bound,
            certified: defect <= bound,
            fallback_reason: reason,
        },
        u,
        ops,
        ff,
    })
}

/// Source `∂_t u + a ∂_x u + b u` that makes `u` an exact solution.
pub fn manufactured_source(sys: &HyperbolicSystem, u: &[Expr]) -> Result<Vec<Expr>> {
    if u.len() != sys.n() {
        return Err(Error::InvalidArgument(format!("{} components for an n = {} system", u.len(), sys.n())));
    }
    Ok((0..sys.n())
        .map(|j| {
            let mut f = expr::add(
                u[j].differentiate(Var::T),
                expr::mul(sys.a_expr(j).clone(), u[j].differentiate(Var::X)),
            );
            for (k, uk) in u.iter().enumerate() {
                f = expr::add(f, expr::mul(sys.b_expr(j, k).clone(), uk.clone()));
            }
            f
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Residuals {
    pub pde: f64,
    pub boundary: f64,
    pub periodicity: f64,
}

/// PDE defect by centred differences at interior nodes, boundary defect, and
/// the closing defect across the wrap: the last slice `u(·, T − Δt)` is
/// stepped to `T` with the semi-Lagrangian scheme and compared with `u(·, 0)`.
pub fn residuals(sys: &HyperbolicSystem, u: &SpaceTimeField, char_step: f64) -> Result<Residuals> {
    let (n, nx, nt) = (u.n(), u.nx(), u.slices());
    let h = 1.0 / nx as f64;
    let dt = u.dt();
    let mut pde: f64 = 0.0;
    for j in 0..n {
        for l in 0..nt {
            let (lm, lp) = ((l + nt - 1) % nt, (l + 1) % nt);
            let t = u.time(l);
            for i in 1..nx {
                let x = i as f64 * h;
                let ut = (u.get(j, lp, i) - u.get(j, lm, i)) / (2.0 * dt);
                let ux = (u.get(j, l, i + 1) - u.get(j, l, i - 1)) / (2.0 * h);
                let mut v = ut + sys.speed(j, x, t)? * ux - sys.source(j, x, t)?;
                for k in 0..n {
                    v += sys.coupling(j, k, x, t)? * u.get(k, l, i);
                }
                pde = pde.max(v.abs());
            }
        }
    }
    let mut boundary: f64 = 0.0;
    for l in 0..nt {
        let f = u.slice(l);
        boundary = boundary.max(sys.check_compatibility(&f).into_iter().fold(0.0, f64::max));
    }
    let period = dt * nt as f64;
    let amax = sys.max_speed((0.0, period))?;
    let dt_max = 0.5f64.min(1.0 / (2.0 * amax));
    let sub = (dt / dt_max - 1e-9).ceil().max(1.0) as usize;
    let mut stepper = evolution::Stepper::new(sys, nx, dt / sub as f64, true, char_step)?;
    stepper.prepare(period - dt, period)?;
    let mut v = u.slice(nt - 1);
    for _ in 0..sub {
        v = stepper.step(&v)?;
    }
    let periodicity = v
        .values()
        .iter()
        .zip(u.slice(0).values())
        .fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()));
    Ok(Residuals { pde, boundary, periodicity })
}

#[derive(Debug, Clone, Serialize)]
pub struct C2Report {
    pub g1_norm: f64,
    pub g2_norm: f64,
    pub method: SolveMethod,
    /// `max |w − D_t u*|` with the centred periodic difference quotient.
    pub max_discrepancy: f64,
    pub w_sup: f64,
}

#[derive(Debug)]
pub struct C2Solution {
    pub w: SpaceTimeField,
    pub report: C2Report,
}

/// Solves `w = C_1 w + D_1 w + F_1(u*, f)` for `w = ∂_t u*` and compares with
/// the difference quotient of `u*`.
pub fn verify_c2(sys: &HyperbolicSystem, u: &SpaceTimeField, opts: &PeriodicOptions) -> Result<C2Solution> {
    let period = sys
        .period()
        .ok_or_else(|| Error::InvalidSystem("verify_c2 needs a period".into()))?;
    let g1 = dissipativity::gnorm(sys, 1, 256, None, opts.char_step)?;
    let g2 = dissipativity::gnorm(sys, 2, 256, None, opts.char_step)?;
    dissipativity::require(&g1)?;
    dissipativity::require(&g2)?;
    let (nx, nt) = (u.nx(), u.slices());
    if !u.is_periodic() {
        return Err(Error::InvalidArgument("verify_c2 needs a periodic field".into()));
    }
    let ops = PathOperators::build(sys, 1, nx, nt, opts.char_step)?;
    let n = sys.n();
    // F_1: ∫ d¹ [∂_t f_j − (∂_t a_j / a_j) f_j − Σ_k (∂_t b_jk − (∂_t a_j / a_j) b_jk) u_k]
    let f1 = ops.integrate(|j, xi, w, col, at| {
        let a = sys.speed(j, xi, w)?;
        let rho = sys.speed_dt(j, xi, w)? / a;
        let mut g = sys.source_dt(j, xi, w)? - rho * sys.source(j, xi, w)?;
        for k in 0..n {
            let coef = sys.coupling_dt(j, k, xi, w)? - rho * sys.coupling(j, k, xi, w)?;
            if coef != 0.0 {
                g -= coef * ops.lerp(u, k, col, at.0);
            }
        }
        Ok(g)
    })?;
    let (w, method, _, _, _, _) = solve_fixed_point(&ops, &f1, opts)?;
    let dt = period / nt as f64;
    let mut disc: f64 = 0.0;
    for j in 0..n {
        for l in 0..nt {
            let (lm, lp) = ((l + nt - 1) % nt, (l + 1) % nt);
            for i in 0..=nx {
                let fd = (u.get(j, lp, i) - u.get(j, lm, i)) / (2.0 * dt);
                disc = disc.max((w.get(j, l, i) - fd).abs());
            }
        }
    }
    Ok(C2Solution {
        report: C2Report {
            g1_norm: g1.norm,
            g2_norm: g2.norm,
            method,
            max_discrepancy: disc,
            w_sup: w.max_abs(),
        },
        w,
    })
}

#[derive(Debug, Clone)]
pub struct BoundedOptions {
    pub window: (f64, f64),
    pub nt: usize,
    pub nx: usize,
    pub burn_in: f64,
    pub dt_max: f64,
    pub char_step: f64,
    /// Initial field at `window.0 − burn_in`; zero when absent.
    pub start: Option<Field>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundedReport {
    pub start_time: f64,
    pub burn_in: f64,
    pub dt: f64,
    pub steps: usize,
    /// `M̂ e^{−α̂ burn_in}`: predicted sensitivity to the start data.
    pub forgetting_factor: f64,
}

/// Bounded solution on a window by evolving the inhomogeneous problem from
/// rest over a burn-in interval.
pub fn solve_bounded(
    sys: &HyperbolicSystem,
    stability: &StabilityReport,
    opts: &BoundedOptions,
) -> Result<(SpaceTimeField, BoundedReport)> {
    if !stability.exponentially_stable || !(stability.l2.alpha > 0.0) {
        return Err(Error::StabilityFlagAbsent(format!(
            "fitted L2 rate {:.4} is not positive",
            stability.l2.alpha
        )));
    }
    let need = 5.0 / stability.l2.alpha;
    if opts.burn_in < need {
        return Err(Error::StabilityFlagAbsent(format!(
            "burn-in {} shorter than 5/alpha = {need:.3}",
            opts.burn_in
        )));
    }
    let (t0, t1) = opts.window;
    if !(t1 > t0) || opts.nt == 0 {
        return Err(Error::InvalidArgument("empty window".into()));
    }
    let slice = (t1 - t0) / opts.nt as f64;
    let sub = (slice / opts.dt_max - 1e-9).ceil().max(1.0) as usize;
    let dt = slice / sub as f64;
    let burn_steps = (opts.burn_in / dt - 1e-9).ceil() as usize;
    let start_time = t0 - burn_steps as f64 * dt;
    let mut u = match &opts.start {
        Some(f) => {
            let mut f = f.clone();
            f.set_t(start_time);
            f
        }
        None => Field::zeros(sys.n(), opts.nx, start_time),
    };
    let mut stepper = evolution::Stepper::new(sys, opts.nx, dt, true, opts.char_step)?;
    stepper.prepare(start_time, t1)?;
    let mut out = SpaceTimeField::zeros_window(sys.n(), opts.nx, opts.nt, opts.window);
    let total = burn_steps + sub * opts.nt;
    for k in 1..=total {
        let mut next = stepper.step(&u)?;
        next.set_t(start_time + k as f64 * dt);
        if !next.is_finite() {
            return Err(Error::NonFinite { step: k });
        }
        u = next;
        if k == burn_steps {
            out.set_slice(0, &u);
        }
        if k > burn_steps && (k - burn_steps) % sub == 0 {
            out.set_slice((k - burn_steps) / sub, &u);
        }
    }
    if burn_steps == 0 {
        return Err(Error::InvalidArgument("burn-in must be positive".into()));
    }
    let burn = burn_steps as f64 * dt;
    Ok((
        out,
        BoundedReport {
            start_time,
            burn_in: burn,
            dt,
            steps: total,
            forgetting_factor: stability.l2.m * (-stability.l2.alpha * burn).exp(),
        },
    ))
}
