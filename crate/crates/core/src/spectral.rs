//! Eigenvalues of the generator `−a∂_x − b` of an autonomous system under its
//! reflection conditions, i.e. values `μ` for which `a v' + (b + μ) v = 0` has
//! a nontrivial solution satisfying the boundary conditions. A grid search on
//! the boundary determinant works for any autonomous system; [`example1_spectrum`]
//! solves the transcendental characteristic equation of the two-component
//! example in closed form.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::system::HyperbolicSystem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
    pub residual: f64,
}

impl Eigenvalue {
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchBox {
    pub re: (f64, f64),
    pub im: (f64, f64),
}

impl SearchBox {
    pub fn contains(&self, z: Complex64, slack: f64) -> bool {
        z.re >= self.re.0 - slack && z.re <= self.re.1 + slack && z.im >= self.im.0 - slack && z.im <= self.im.1 + slack
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumMethod {
    Determinant,
    ClosedForm,
}

fn abscissa_json<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    pub method: SpectrumMethod,
    /// Sorted by real part, descending.
    pub eigenvalues: Vec<Eigenvalue>,
    /// `max Re μ`, or `−∞` (`null` in JSON) when nothing was found.
    #[serde(serialize_with = "abscissa_json")]
    pub abscissa: f64,
    pub search_box: SearchBox,
    pub grid: Option<(usize, usize)>,
    /// Seeds whose Newton iteration did not converge to an accepted root.
    pub rejected_seeds: usize,
    pub xi_range: Option<(f64, f64)>,
    /// `max_j |ξ_j|` over the closed-form roots.
    pub xi_bar: Option<f64>,
}

impl SpectrumReport {
    fn finish(mut self) -> Self {
        self.eigenvalues
            .sort_by(|a, b| b.re.total_cmp(&a.re).then(a.im.total_cmp(&b.im)));
        self.abscissa = self.eigenvalues.first().map_or(f64::NEG_INFINITY, |e| e.re);
        self
    }
}

const RESIDUAL_TOL: f64 = 1e-8;
const DEDUPE: f64 = 1e-6;

/// Boundary determinant `det(L_0 + L_1 Φ(1; μ))`, where `Φ` is the fundamental
/// matrix of `v' = −a^{-1}(b + μ) v` and `L_0`, `L_1` pick the boundary values
/// entering the reflection conditions.
pub struct BoundaryDeterminant<'a> {
    n: usize,
    l0: DMatrix<Complex64>,
    l1: DMatrix<Complex64>,
    a_min: f64,
    b_max: f64,
    /// Coefficient samples `(1/a_j, b_jk)` at `x = q/(2N)` for `N = 2^level`.
    samples: Vec<OnceLock<Vec<(Vec<f64>, Vec<f64>)>>>,
    sys: &'a HyperbolicSystem,
}

const MAX_LEVEL: usize = 22;

impl<'a> BoundaryDeterminant<'a> {
    pub fn new(sys: &'a HyperbolicSystem) -> Result<Self> {
        if !sys.is_autonomous() {
            return Err(Error::NotAutonomous(
                "the boundary determinant needs t-independent a and b".into(),
            ));
        }
        let (n, m) = (sys.n(), sys.m());
        let mut l0 = DMatrix::<Complex64>::zeros(n, n);
        let mut l1 = DMatrix::<Complex64>::zeros(n, n);
        for j in 0..n {
            if j < m {
                l0[(j, j)] += 1.0;
            } else {
                l1[(j, j)] += 1.0;
            }
            for k in 0..n {
                let r = sys.r()[j][k];
                if k >= m {
                    l0[(j, k)] -= r;
                } else {
                    l1[(j, k)] -= r;
                }
            }
        }
        let mut a_min = f64::INFINITY;
        let mut b_max: f64 = 0.0;
        for q in 0..=256 {
            let x = q as f64 / 256.0;
            for j in 0..n {
                let a = sys.speed(j, x, 0.0)?;
                if a == 0.0 || !a.is_finite() {
                    return Err(Error::InvalidSystem(format!("a_{j} vanishes at x = {x}")));
                }
                a_min = a_min.min(a.abs());
                let row: f64 = (0..n).map(|k| sys.coupling(j, k, x, 0.0).map(f64::abs)).sum::<Result<f64>>()?;
                b_max = b_max.max(row);
            }
        }
        Ok(BoundaryDeterminant {
            n,
            l0,
            l1,
            a_min,
            b_max,
            samples: (0..=MAX_LEVEL).map(|_| OnceLock::new()).collect(),
            sys,
        })
    }

    fn coefficients(&self, level: usize) -> Result<&Vec<(Vec<f64>, Vec<f64>)>> {
        if let Some(s) = self.samples[level].get() {
            return Ok(s);
        }
        let pts = 2usize << level;
        let n = self.n;
        let mut out = Vec::with_capacity(pts + 1);
        for q in 0..=pts {
            let x = q as f64 / pts as f64;
            let mut inv_a = Vec::with_capacity(n);
            let mut b = Vec::with_capacity(n * n);
            for j in 0..n {
                inv_a.push(1.0 / self.sys.speed(j, x, 0.0)?);
                for k in 0..n {
                    b.push(self.sys.coupling(j, k, x, 0.0)?);
                }
            }
            out.push((inv_a, b));
        }
        Ok(self.samples[level].get_or_init(|| out))
    }

    fn fundamental(&self, mu: Complex64, level: usize) -> Result<DMatrix<Complex64>> {
        let n = self.n;
        let nn = n * n;
        let steps = 1usize << level;
        let h = 1.0 / steps as f64;
        let coef = self.coefficients(level)?;
        // column-major n×n blocks in flat buffers
        let rhs = |q: usize, v: &[Complex64], out: &mut [Complex64]| {
            let (inv_a, b) = &coef[q];
            for c in 0..n {
                for j in 0..n {
                    let mut s = mu * v[c * n + j];
                    for k in 0..n {
                        s += b[j * n + k] * v[c * n + k];
                    }
                    out[c * n + j] = -s * inv_a[j];
                }
            }
        };
        let mut v = vec![Complex64::from(0.0); nn];
        for j in 0..n {
            v[j * n + j] = Complex64::from(1.0);
        }
        let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
            (v.clone(), v.clone(), v.clone(), v.clone(), v.clone());
        for s in 0..steps {
            rhs(2 * s, &v, &mut k1);
            for q in 0..nn {
                tmp[q] = v[q] + k1[q] * (0.5 * h);
            }
            rhs(2 * s + 1, &tmp, &mut k2);
            for q in 0..nn {
                tmp[q] = v[q] + k2[q] * (0.5 * h);
            }
            rhs(2 * s + 1, &tmp, &mut k3);
            for q in 0..nn {
                tmp[q] = v[q] + k3[q] * h;
            }
            rhs(2 * s + 2, &tmp, &mut k4);
            for q in 0..nn {
                v[q] += (k1[q] + (k2[q] + k3[q]) * 2.0 + k4[q]) * (h / 6.0);
            }
        }
        Ok(DMatrix::from_vec(n, n, v))
    }

    /// RK4 on `2^k` and `2^{k+1}` steps, Richardson-combined, with
    /// `h (|μ| + ‖b‖) / min|a| ≤ 1/32` on the coarser grid.
    pub fn eval(&self, mu: Complex64) -> Result<Complex64> {
        let stiffness = (mu.norm() + self.b_max) / self.a_min;
        let need = (32.0 * stiffness).max(64.0);
        let level = (need.log2().ceil() as usize).min(MAX_LEVEL - 1);
        let coarse = self.fundamental(mu, level)?;
        let fine = self.fundamental(mu, level + 1)?;
        let phi = (fine * Complex64::from(16.0) - coarse) / Complex64::from(15.0);
        Ok((&self.l0 + &self.l1 * phi).determinant())
    }
}

pub fn boundary_determinant(sys: &HyperbolicSystem, mu: Complex64) -> Result<Complex64> {
    BoundaryDeterminant::new(sys)?.eval(mu)
}

/// Newton's method with a caller-supplied derivative; returns the root when
/// the step falls below `1e-12 (1 + |z|)`.
fn newton(
    f: impl Fn(Complex64) -> Result<(Complex64, Complex64)>,
    z0: Complex64,
    max_iter: usize,
) -> Result<Option<Complex64>> {
    let mut z = z0;
    for _ in 0..max_iter {
        let (v, dv) = f(z)?;
        if dv.norm() == 0.0 || !dv.is_finite() {
            return Ok(None);
        }
        let step = v / dv;
        z -= step;
        if !z.is_finite() {
            return Ok(None);
        }
        if step.norm() <= 1e-12 * (1.0 + z.norm()) {
            return Ok(Some(z));
        }
    }
    Ok(None)
}

fn push_unique(list: &mut Vec<Eigenvalue>, e: Eigenvalue) {
    if !list.iter().any(|o| (o.value() - e.value()).norm() < DEDUPE) {
        list.push(e);
    }
}

/// Grid scan of `|det|` over the box; local minima seed Newton iterations
/// (centred-difference derivative); converged roots inside the box with
/// `|det| ≤ 1e-8` are kept.
pub fn find_eigenvalues(sys: &HyperbolicSystem, search: SearchBox, grid: (usize, usize)) -> Result<SpectrumReport> {
    if grid.0 < 2 || grid.1 < 2 || !(search.re.1 > search.re.0) || !(search.im.1 >= search.im.0) {
        return Err(Error::InvalidArgument("search box needs a non-degenerate grid".into()));
    }
    let det = BoundaryDeterminant::new(sys)?;
    let (nr, ni) = grid;
    let point = |p: usize, q: usize| {
        Complex64::new(
            search.re.0 + (search.re.1 - search.re.0) * p as f64 / (nr - 1) as f64,
            search.im.0 + (search.im.1 - search.im.0) * q as f64 / (ni - 1) as f64,
        )
    };
    let mags: Vec<f64> = (0..nr * ni)
        .into_par_iter()
        .map(|idx| det.eval(point(idx / ni, idx % ni)).map(|d| d.norm()))
        .collect::<Result<_>>()?;
    let at = |p: usize, q: usize| mags[p * ni + q];
    let mut seeds = Vec::new();
    for p in 0..nr {
        for q in 0..ni {
            let v = at(p, q);
            let mut is_min = true;
            for dp in -1i64..=1 {
                for dq in -1i64..=1 {
                    let (pp, qq) = (p as i64 + dp, q as i64 + dq);
                    if (dp, dq) == (0, 0) || pp < 0 || qq < 0 || pp >= nr as i64 || qq >= ni as i64 {
                        continue;
                    }
                    if at(pp as usize, qq as usize) < v {
                        is_min = false;
                    }
                }
            }
            if is_min {
                seeds.push(point(p, q));
            }
        }
    }
    let slack = 1e-9 * (1.0 + search.re.0.abs().max(search.re.1.abs()).max(search.im.1.abs()));
    let outcomes: Vec<Option<Eigenvalue>> = seeds
        .par_iter()
        .map(|&z0| {
            let f = |z: Complex64| -> Result<(Complex64, Complex64)> {
                let h = 1e-6 * (1.0 + z.norm());
                let dv = (det.eval(z + h)? - det.eval(z - h)?) / (2.0 * h);
                Ok((det.eval(z)?, dv))
            };
            let Some(z) = newton(f, z0, 60)? else {
                return Ok(None);
            };
            let z = if z.im.abs() <= slack { Complex64::new(z.re, 0.0) } else { z };
            let residual = det.eval(z)?.norm();
            Ok((residual <= RESIDUAL_TOL && search.contains(z, slack)).then_some(Eigenvalue {
                re: z.re,
                im: z.im,
                residual,
            }))
        })
        .collect::<Result<_>>()?;
    let mut eigenvalues = Vec::new();
    let mut rejected = 0;
    for o in outcomes {
        match o {
            Some(e) => push_unique(&mut eigenvalues, e),
            None => rejected += 1,
        }
    }
    Ok(SpectrumReport {
        method: SpectrumMethod::Determinant,
        eigenvalues,
        abscissa: f64::NEG_INFINITY,
        search_box: search,
        grid: Some(grid),
        rejected_seeds: rejected,
        xi_range: None,
        xi_bar: None,
    }
    .finish())
}

/// `r₂ z − 1 − (z/r₁ − 1) e^z` and its derivative; the generator eigenvalue
/// of the two-component example is `μ = (z − α)/2`.
pub fn example1_relation(r1: f64, r2: f64, z: Complex64) -> (Complex64, Complex64) {
    let e = z.exp();
    let v = r2 * z - 1.0 - (z / r1 - 1.0) * e;
    let dv = Complex64::from(r2) - e / r1 - (z / r1 - 1.0) * e;
    (v, dv)
}

/// `η(ξ)` from the modulus condition, when the radicand is nonnegative.
pub fn example1_eta(r1: f64, r2: f64, xi: f64) -> Option<f64> {
    let e2 = (2.0 * xi).exp();
    let num = (xi - r1).powi(2) * e2 - (xi * r2 - 1.0).powi(2) * r1 * r1;
    let den = r1 * r1 * r2 * r2 - e2;
    let rad = num / den;
    (rad >= 0.0 && rad.is_finite()).then(|| rad.sqrt())
}

/// `sin η − (1 − r₁r₂) η r₁ / (e^ξ [(ξ − r₁)² + η²])` (phase condition).
pub fn example1_phase(r1: f64, r2: f64, xi: f64, eta: f64) -> f64 {
    eta.sin() - (1.0 - r1 * r2) * eta * r1 / (xi.exp() * ((xi - r1).powi(2) + eta * eta))
}

/// Closed-form spectrum of [`crate::presets::example1`]: roots `z = ξ + iη`
/// of `r₂z − 1 = (z/r₁ − 1)e^z` found by scanning `ξ` along the modulus curve
/// `η(ξ)`, bracketing sign changes of the phase condition, and polishing with
/// Newton on the complex relation; real roots are found separately. Only roots
/// with `|Im μ| ≤ im_max` are returned (they accumulate at `ξ → ln(r₁r₂)`).
pub fn example1_spectrum(alpha: f64, r1: f64, r2: f64, xi_range: (f64, f64), im_max: f64) -> Result<SpectrumReport> {
    if r1 == 0.0 || !(xi_range.1 > xi_range.0) || !xi_range.0.is_finite() || !xi_range.1.is_finite() {
        return Err(Error::InvalidArgument("need r1 != 0 and a finite xi range".into()));
    }
    let eta_cap = 2.0 * im_max;
    let rel = |z: Complex64| Ok(example1_relation(r1, r2, z));
    let mut roots: Vec<Complex64> = Vec::new();
    let add = |z: Complex64, roots: &mut Vec<Complex64>| {
        if !roots.iter().any(|o| (o - z).norm() < DEDUPE) {
            roots.push(z);
        }
    };
    // complex branch
    let phase = |xi: f64| example1_eta(r1, r2, xi).map(|eta| (eta, example1_phase(r1, r2, xi, eta)));
    let mut stack: Vec<(f64, f64)> = Vec::new();
    let base = 4000;
    for q in 0..base {
        let w = (xi_range.1 - xi_range.0) / base as f64;
        stack.push((xi_range.0 + q as f64 * w, xi_range.0 + (q + 1) as f64 * w));
    }
    let mut brackets = Vec::new();
    while let Some((lo, hi)) = stack.pop() {
        let (Some((ea, ga)), Some((eb, gb))) = (phase(lo), phase(hi)) else {
            // radicand sign change inside: split to locate the valid part
            if hi - lo > 1e-12 && (phase(lo).is_some() || phase(hi).is_some()) {
                let mid = 0.5 * (lo + hi);
                stack.push((lo, mid));
                stack.push((mid, hi));
            }
            continue;
        };
        if ea.min(eb) > eta_cap {
            continue;
        }
        if (ea - eb).abs() > 0.1 && hi - lo > 1e-13 {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid));
            stack.push((mid, hi));
            continue;
        }
        if ga == 0.0 || ga.signum() != gb.signum() {
            brackets.push((lo, hi, ga));
        }
    }
    for (mut lo, mut hi, ga) in brackets {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            match phase(mid) {
                Some((_, g)) if g.signum() == ga.signum() && g != 0.0 => lo = mid,
                Some(_) => hi = mid,
                None => break,
            }
            if hi - lo < 1e-15 * (1.0 + lo.abs()) {
                break;
            }
        }
        let xi = 0.5 * (lo + hi);
        let Some(eta) = example1_eta(r1, r2, xi) else { continue };
        if eta <= 0.0 {
            continue;
        }
        if let Some(z) = newton(rel, Complex64::new(xi, eta), 60)? {
            if z.im > 1e-9 && example1_relation(r1, r2, z).0.norm() <= RESIDUAL_TOL {
                add(z, &mut roots);
            }
        }
    }
    // real branch
    let f_real = |x: f64| example1_relation(r1, r2, Complex64::from(x)).0.re;
    let nreal = 20_000;
    for q in 0..nreal {
        let w = (xi_range.1 - xi_range.0) / nreal as f64;
        let (mut lo, mut hi) = (xi_range.0 + q as f64 * w, xi_range.0 + (q + 1) as f64 * w);
        let (fa, fb) = (f_real(lo), f_real(hi));
        if fa.signum() == fb.signum() && fa != 0.0 {
            continue;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f_real(mid).signum() == fa.signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if let Some(z) = newton(rel, Complex64::from(0.5 * (lo + hi)), 60)? {
            let z = Complex64::from(z.re);
            // z = 0 is the excluded trivial root unless it is a genuine
            // eigenvalue, which happens exactly when r1 (1 + r2) = 1
            let trivial = z.norm() < 1e-7 && (r1 * (1.0 + r2) - 1.0).abs() > 1e-12;
            if !trivial && example1_relation(r1, r2, z).0.norm() <= RESIDUAL_TOL {
                add(if z.norm() < 1e-7 { Complex64::from(0.0) } else { z }, &mut roots);
            }
        }
    }
    let xi_bar = roots.iter().map(|z| z.re.abs()).fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
    let mut eigenvalues = Vec::new();
    for z in roots {
        let residual = example1_relation(r1, r2, z).0.norm();
        let mu = (z - alpha) / 2.0;
        if mu.im.abs() > im_max {
            continue;
        }
        eigenvalues.push(Eigenvalue { re: mu.re, im: mu.im, residual });
        if z.im != 0.0 {
            eigenvalues.push(Eigenvalue { re: mu.re, im: -mu.im, residual });
        }
    }
    let re_lo = (xi_range.0 - alpha) / 2.0;
    let re_hi = (xi_range.1 - alpha) / 2.0;
    Ok(SpectrumReport {
        method: SpectrumMethod::ClosedForm,
        eigenvalues,
        abscissa: f64::NEG_INFINITY,
        search_box: SearchBox { re: (re_lo, re_hi), im: (-im_max, im_max) },
        grid: None,
        rejected_seeds: 0,
        xi_range: Some(xi_range),
        xi_bar,
    }
    .finish())
}
