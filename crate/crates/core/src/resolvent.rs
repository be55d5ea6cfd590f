//! Resolvent problem at frozen time `t`:
//!
//! ```text
//! u' + a^{-1}(x,t)(b(x,t) + λ) u = g(x),   u_j(x_j) = R_j u
//! ```
//!
//! solved by the splitting `A_1 u + A_2 u = g` with `A_1 = d/dx + λ a^{-1}`
//! (diagonal, inverted by variation of constants and an n×n boundary solve)
//! and `A_2 = a^{-1} b`, iterating `u ← A_1^{-1}(g − A_2 u)`.
//!
//! Discretisation: on every cell `[x_i, x_{i+1}]` the rate `λ/a_j` is replaced
//! by its Simpson average and the forcing by its linear interpolant, and the
//! cell ODE is solved exactly. The "plug-back residual" is the defect of these
//! one-cell relations for the full equation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolution::{ensemble_rng, norms};
use crate::linalg;
use crate::system::{Field, HyperbolicSystem};

/// `(1 − e^{−z})/z` and `(1 − e^{−z}(1+z))/z²`.
fn phi12(z: f64) -> (f64, f64) {
    if z.abs() < 1e-3 {
        let p1 = 1.0 - z / 2.0 + z * z / 6.0 - z * z * z / 24.0;
        let p2 = 0.5 - z / 3.0 + z * z / 8.0 - z * z * z / 30.0;
        (p1, p2)
    } else {
        let em = (-z).exp();
        ((1.0 - em) / z, (1.0 - em * (1.0 + z)) / (z * z))
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    decay: f64,
    /// Weights of the forcing at the upstream and downstream node (signed).
    w_from: f64,
    w_to: f64,
}

struct Discretization<'a> {
    sys: &'a HyperbolicSystem,
    n: usize,
    m: usize,
    nx: usize,
    /// `cells[j][i]` for the cell `[x_i, x_{i+1}]`.
    cells: Vec<Vec<Cell>>,
    /// Nodal `a^{-1} b`, row-major per node.
    a_inv_b: Vec<Vec<f64>>,
}

impl<'a> Discretization<'a> {
    fn new(sys: &'a HyperbolicSystem, t: f64, lambda: f64, nx: usize) -> Result<Self> {
        let (n, m) = (sys.n(), sys.m());
        let h = 1.0 / nx as f64;
        let mut cells = vec![Vec::with_capacity(nx); n];
        for (j, row) in cells.iter_mut().enumerate() {
            let sign = if j < m { 1.0 } else { -1.0 };
            for i in 0..nx {
                let x0 = i as f64 * h;
                let inv = |x: f64| sys.speed(j, x, t).map(|a| 1.0 / a.abs());
                let avg = (inv(x0)? + 4.0 * inv(x0 + 0.5 * h)? + inv(x0 + h)?) / 6.0;
                let z = lambda * h * avg;
                let (p1, p2) = phi12(z);
                row.push(Cell {
                    decay: (-z).exp(),
                    w_from: sign * h * p2,
                    w_to: sign * h * (p1 - p2),
                });
            }
        }
        let mut a_inv_b = Vec::with_capacity(nx + 1);
        for i in 0..=nx {
            let x = i as f64 * h;
            let mut v = vec![0.0; n * n];
            for j in 0..n {
                let a = sys.speed(j, x, t)?;
                for k in 0..n {
                    v[j * n + k] = sys.coupling(j, k, x, t)? / a;
                }
            }
            a_inv_b.push(v);
        }
        Ok(Discretization { sys, n, m, nx, cells, a_inv_b })
    }

    /// Node indices of cell `i` for component `j` in marching order.
    fn ends(&self, j: usize, i: usize) -> (usize, usize) {
        if j < self.m {
            (i, i + 1)
        } else {
            (i + 1, i)
        }
    }

    fn cell_order(&self, j: usize) -> Box<dyn Iterator<Item = usize>> {
        if j < self.m {
            Box::new(0..self.nx)
        } else {
            Box::new((0..self.nx).rev())
        }
    }

    fn inflow(&self, j: usize) -> usize {
        if j < self.m {
            0
        } else {
            self.nx
        }
    }

    fn outflow(&self, j: usize) -> usize {
        self.nx - self.inflow(j)
    }

    fn apply_a2(&self, u: &Field) -> Field {
        let mut out = Field::zeros(self.n, self.nx, u.t());
        for i in 0..=self.nx {
            for j in 0..self.n {
                let s: f64 = (0..self.n).map(|k| self.a_inv_b[i][j * self.n + k] * u.get(k, i)).sum();
                out.set(j, i, s);
            }
        }
        out
    }

    /// `A_1^{-1} g`, plus the outflow gains `V_j` of the homogeneous problem.
    fn solve_a1(&self, g: &Field) -> Result<(Field, Vec<f64>)> {
        let (n, nx) = (self.n, self.nx);
        let mut p = Field::zeros(n, nx, g.t());
        let mut hom = Field::zeros(n, nx, g.t());
        for j in 0..n {
            hom.set(j, self.inflow(j), 1.0);
            for i in self.cell_order(j) {
                let c = self.cells[j][i];
                let (from, to) = self.ends(j, i);
                p.set(j, to, c.decay * p.get(j, from) + c.w_from * g.get(j, from) + c.w_to * g.get(j, to));
                hom.set(j, to, c.decay * hom.get(j, from));
            }
        }
        let gains: Vec<f64> = (0..n).map(|k| hom.get(k, self.outflow(k))).collect();
        let r = self.sys.r();
        let mat = DMatrix::from_fn(n, n, |j, k| f64::from(u8::from(j == k)) - r[j][k] * gains[k]);
        let rhs: Vec<f64> = (0..n)
            .map(|j| (0..n).map(|k| r[j][k] * p.get(k, self.outflow(k))).sum())
            .collect();
        let y = linalg::dense_solve(mat, &rhs)?;
        let mut u = p;
        for j in 0..n {
            for i in 0..=nx {
                let v = u.get(j, i) + hom.get(j, i) * y[j];
                u.set(j, i, v);
            }
        }
        Ok((u, gains))
    }

    /// Max defect of the one-cell relations of the full equation.
    fn residual(&self, u: &Field, g: &Field) -> f64 {
        let a2u = self.apply_a2(u);
        let mut worst: f64 = 0.0;
        for j in 0..self.n {
            for i in 0..self.nx {
                let c = self.cells[j][i];
                let (from, to) = self.ends(j, i);
                let forcing = |q: usize| g.get(j, q) - a2u.get(j, q);
                let d = u.get(j, to) - c.decay * u.get(j, from) - c.w_from * forcing(from) - c.w_to * forcing(to);
                worst = worst.max(d.abs());
            }
        }
        worst
    }

    fn dense(&self, g: &Field) -> Result<Field> {
        let (n, nx) = (self.n, self.nx);
        let idx = |j: usize, i: usize| j * (nx + 1) + i;
        let size = n * (nx + 1);
        let mut a = DMatrix::<f64>::zeros(size, size);
        let mut b = DVector::<f64>::zeros(size);
        let mut row = 0;
        for j in 0..n {
            for i in 0..nx {
                let c = self.cells[j][i];
                let (from, to) = self.ends(j, i);
                a[(row, idx(j, to))] += 1.0;
                a[(row, idx(j, from))] -= c.decay;
                for k in 0..n {
                    a[(row, idx(k, from))] += c.w_from * self.a_inv_b[from][j * n + k];
                    a[(row, idx(k, to))] += c.w_to * self.a_inv_b[to][j * n + k];
                }
                b[row] = c.w_from * g.get(j, from) + c.w_to * g.get(j, to);
                row += 1;
            }
        }
        let r = self.sys.r();
        for j in 0..n {
            a[(row, idx(j, self.inflow(j)))] += 1.0;
            for k in 0..n {
                a[(row, idx(k, self.outflow(k)))] -= r[j][k];
            }
            row += 1;
        }
        let x = linalg::dense_solve(a, b.as_slice())?;
        let mut u = Field::zeros(n, nx, g.t());
        for j in 0..n {
            for i in 0..=nx {
                u.set(j, i, x[idx(j, i)]);
            }
        }
        Ok(u)
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ResolventOptions {
    pub tol: f64,
    pub budget: usize,
}

impl Default for ResolventOptions {
    fn default() -> Self {
        ResolventOptions { tol: 1e-10, budget: 500 }
    }
}

#[derive(Debug, Clone)]
pub struct ResolventSolution {
    pub u: Field,
    pub report: ResolventReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolventReport {
    pub lambda: f64,
    pub t: f64,
    pub iterations: usize,
    /// Largest observed ratio of successive updates.
    pub contraction_ratio: f64,
    /// Defect of the discrete equation, relative to `1 + ‖g‖_∞`.
    pub residual: f64,
    pub boundary_defect: f64,
    pub l2: f64,
    pub g_l2: f64,
    /// `max_j` outflow gain of the diagonal part, `‖V‖`.
    pub v_norm: f64,
    /// `−ln ‖V‖ / λ`.
    pub delta: f64,
}

fn check_input(sys: &HyperbolicSystem, lambda: f64, g: &Field) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    if g.n() != sys.n() {
        return Err(Error::InvalidArgument(format!("g has {} components, system has {}", g.n(), sys.n())));
    }
    Ok(())
}

pub fn resolvent_solve(
    sys: &HyperbolicSystem,
    t: f64,
    lambda: f64,
    g: &Field,
    opts: &ResolventOptions,
) -> Result<ResolventSolution> {
    check_input(sys, lambda, g)?;
    let disc = Discretization::new(sys, t, lambda, g.nx())?;
    let g_sup = g.max_abs();
    let (mut u, gains) = disc.solve_a1(g)?;
    let mut iterations = 0;
    let mut ratio: f64 = 0.0;
    let mut prev = f64::NAN;
    loop {
        let res = disc.residual(&u, g) / (1.0 + g_sup);
        if res <= opts.tol {
            break;
        }
        if iterations >= opts.budget {
            return Err(Error::ContractionFailure { lambda, ratio });
        }
        let mut rhs = g.clone();
        rhs.axpy(-1.0, &disc.apply_a2(&u));
        let (next, _) = disc.solve_a1(&rhs)?;
        let mut diff = next.clone();
        diff.axpy(-1.0, &u);
        let update = diff.max_abs();
        if prev.is_finite() && prev > 0.0 {
            ratio = ratio.max(update / prev);
            if iterations >= 3 && update / prev >= 1.0 {
                return Err(Error::ContractionFailure { lambda, ratio: update / prev });
            }
        }
        prev = update;
        u = next;
        iterations += 1;
        if !u.is_finite() {
            return Err(Error::ContractionFailure { lambda, ratio: f64::INFINITY });
        }
    }
    let residual = disc.residual(&u, g) / (1.0 + g_sup);
    let boundary_defect = sys.check_compatibility(&u).into_iter().fold(0.0, f64::max);
    let v_norm = gains.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(ResolventSolution {
        report: ResolventReport {
            lambda,
            t,
            iterations,
            contraction_ratio: ratio,
            residual,
            boundary_defect,
            l2: norms(&u).0,
            g_l2: norms(g).0,
            v_norm,
            delta: -v_norm.ln() / lambda,
        },
        u,
    })
}

/// Direct solve of the same discrete equations (cross-check).
pub fn resolvent_dense(sys: &HyperbolicSystem, t: f64, lambda: f64, g: &Field) -> Result<Field> {
    check_input(sys, lambda, g)?;
    Discretization::new(sys, t, lambda, g.nx())?.dense(g)
}

/// Spectral-radius estimate of `A_1^{-1} A_2` by power iteration from a
/// seeded random start.
pub fn contraction_estimate(sys: &HyperbolicSystem, t: f64, lambda: f64, nx: usize, seed: u64) -> Result<f64> {
    let disc = Discretization::new(sys, t, lambda, nx)?;
    let mut rng = ensemble_rng(seed, 0);
    let mut v = Field::from_fn(sys.n(), nx, t, |_, _| rng.gen_range(-1.0..1.0));
    let mut est = 0.0;
    for _ in 0..40 {
        let (w, _) = disc.solve_a1(&disc.apply_a2(&v))?;
        let (nv, nw) = (norms(&v).0, norms(&w).0);
        if nv == 0.0 || nw == 0.0 {
            return Ok(0.0);
        }
        est = nw / nv;
        v = w;
        v.scale(1.0 / nw);
    }
    Ok(est)
}

/// Smallest `λ = 2^k` (k ≥ 0) whose contraction estimate is below 0.9.
pub fn lambda_min(sys: &HyperbolicSystem, t: f64, nx: usize, seed: u64) -> Result<(f64, f64)> {
    let mut lambda = 1.0;
    let mut last = f64::NAN;
    for _ in 0..40 {
        last = contraction_estimate(sys, t, lambda, nx, seed)?;
        if last < 0.9 {
            return Ok((lambda, last));
        }
        lambda *= 2.0;
    }
    Err(Error::ContractionFailure { lambda, ratio: last })
}
