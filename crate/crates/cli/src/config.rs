use anyhow::{bail, Context, Result};
use serde::Deserialize;

use hyperstrip::characteristics::DEFAULT_STEP;
use hyperstrip::{Expr, HyperbolicSystem, Probe};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSection,
    #[serde(default)]
    pub numerics: Numerics,
    pub evolve: Option<EvolveSection>,
    pub stability: Option<StabilitySection>,
    pub gnorm: Option<GnormSection>,
    pub periodic: Option<PeriodicSection>,
    pub bounded: Option<BoundedSection>,
    pub spectrum: Option<SpectrumSection>,
    pub resolvent: Option<ResolventSection>,
    pub lyapunov: Option<LyapunovSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub n: usize,
    pub m: usize,
    pub a: Vec<String>,
    pub b: Vec<Vec<String>>,
    pub f: Option<Vec<String>>,
    pub r: Vec<Vec<f64>>,
    pub period: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    pub nx: usize,
    pub nt: usize,
    pub dt: f64,
    pub char_step: f64,
    pub tol: f64,
    pub budget: usize,
    pub neumann_budget: usize,
    pub t_window: Option<[f64; 2]>,
    pub seed: Option<u64>,
    /// Time samples per period for the dissipativity norms.
    pub samples: usize,
    pub probe: [usize; 2],
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            nx: 64,
            nt: 64,
            dt: 0.05,
            char_step: DEFAULT_STEP,
            tol: 1e-9,
            budget: 200,
            neumann_budget: 10_000,
            t_window: None,
            seed: None,
            samples: 256,
            probe: [64, 64],
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveSection {
    pub horizon: f64,
    #[serde(default = "default_stride")]
    pub stride: usize,
    pub initial: Option<Vec<String>>,
    #[serde(default = "yes")]
    pub with_source: bool,
}

fn default_stride() -> usize {
    20
}

fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilitySection {
    pub ensemble: usize,
    pub start: f64,
    pub horizon: f64,
    pub burn_in: f64,
}

impl Default for StabilitySection {
    fn default() -> Self {
        StabilitySection { ensemble: 8, start: 0.0, horizon: 12.0, burn_in: 4.0 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GnormSection {
    pub orders: Vec<u8>,
    pub bruteforce: bool,
}

impl Default for GnormSection {
    fn default() -> Self {
        GnormSection { orders: vec![0, 1, 2], bruteforce: false }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PeriodicSection {
    pub verify_c2: bool,
    pub dense_limit: usize,
}

impl Default for PeriodicSection {
    fn default() -> Self {
        PeriodicSection { verify_c2: false, dense_limit: 4096 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundedSection {
    pub window: [f64; 2],
    pub nt: usize,
    /// Defaults to `5/α̂ + 1`.
    pub burn_in: Option<f64>,
    pub dt_max: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSection {
    pub re: [f64; 2],
    pub im: [f64; 2],
    #[serde(default = "default_grid")]
    pub grid: [usize; 2],
    pub example1: Option<Example1Section>,
}

fn default_grid() -> [usize; 2] {
    [64, 64]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example1Section {
    pub alpha: f64,
    pub r1: f64,
    pub r2: f64,
    #[serde(default = "default_xi_range")]
    pub xi_range: [f64; 2],
}

fn default_xi_range() -> [f64; 2] {
    [-20.0, 20.0]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolventSection {
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub t: f64,
    pub g: Vec<String>,
    #[serde(default = "default_resolvent_nx")]
    pub nx: usize,
}

fn default_resolvent_nx() -> usize {
    256
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovSection {
    pub ensemble: usize,
    pub horizon: f64,
    pub slack: f64,
}

impl Default for LyapunovSection {
    fn default() -> Self {
        LyapunovSection { ensemble: 8, horizon: 10.0, slack: 0.1 }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        let s = &self.system;
        if s.a.len() != s.n {
            bail!("system.a: {} entries for n = {}", s.a.len(), s.n);
        }
        if s.b.len() != s.n || s.b.iter().any(|row| row.len() != s.n) {
            bail!("system.b: must be an {n}x{n} array", n = s.n);
        }
        if s.r.len() != s.n || s.r.iter().any(|row| row.len() != s.n) {
            bail!("system.r: must be an {n}x{n} array", n = s.n);
        }
        if let Some(f) = &s.f {
            if f.len() != s.n {
                bail!("system.f: {} entries for n = {}", f.len(), s.n);
            }
        }
        if let Some(p) = s.period {
            if !(p > 0.0 && p.is_finite()) {
                bail!("system.period: must be positive, got {p}");
            }
        }
        let nm = &self.numerics;
        if nm.nx < hyperstrip::system::MIN_NX {
            bail!("numerics.nx: at least {} required, got {}", hyperstrip::system::MIN_NX, nm.nx);
        }
        if nm.nt < 4 {
            bail!("numerics.nt: at least 4 required, got {}", nm.nt);
        }
        for (name, v) in [("dt", nm.dt), ("char_step", nm.char_step), ("tol", nm.tol)] {
            if !(v > 0.0 && v.is_finite()) {
                bail!("numerics.{name}: must be positive, got {v}");
            }
        }
        if nm.samples < hyperstrip::dissipativity::MIN_SAMPLES {
            bail!("numerics.samples: at least {} required", hyperstrip::dissipativity::MIN_SAMPLES);
        }
        if let Some([t0, t1]) = nm.t_window {
            if !(t1 > t0) {
                bail!("numerics.t_window: empty window [{t0}, {t1}]");
            }
        }
        Ok(())
    }

    pub fn build_system(&self) -> Result<HyperbolicSystem> {
        let s = &self.system;
        let parse = |what: String, src: &str| Expr::parse(src).with_context(|| format!("{what}: cannot parse {src:?}"));
        let a = s.a.iter().enumerate().map(|(j, e)| parse(format!("system.a[{j}]"), e)).collect::<Result<Vec<_>>>()?;
        let b = s
            .b
            .iter()
            .enumerate()
            .map(|(j, row)| {
                row.iter()
                    .enumerate()
                    .map(|(k, e)| parse(format!("system.b[{j}][{k}]"), e))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let f = match &s.f {
            Some(f) => f.iter().enumerate().map(|(j, e)| parse(format!("system.f[{j}]"), e)).collect::<Result<Vec<_>>>()?,
            None => vec![Expr::constant(0.0); s.n],
        };
        Ok(HyperbolicSystem::new(s.m, a, b, f, s.r.clone(), s.period)?)
    }

    pub fn window(&self) -> Option<(f64, f64)> {
        self.numerics
            .t_window
            .map(|[a, b]| (a, b))
            .or_else(|| self.system.period.map(|p| (0.0, p)))
    }

    pub fn probe(&self) -> Probe {
        Probe { nx: self.numerics.probe[0], nt: self.numerics.probe[1] }
    }
}

pub fn parse_exprs(what: &str, srcs: &[String]) -> Result<Vec<Expr>> {
    srcs.iter()
        .enumerate()
        .map(|(j, e)| Expr::parse(e).with_context(|| format!("{what}[{j}]: cannot parse {e:?}")))
        .collect()
}
