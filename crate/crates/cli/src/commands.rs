use anyhow::anyhow;
use clap::ValueEnum;
use serde_json::{json, Value};

use hyperstrip::dissipativity::{check_dissipativity, gnorm, gnorm_bruteforce};
use hyperstrip::evolution::{
    ensemble_rng, estimate_stability, evolve, random_compatible, EvolveOptions, StabilityOptions, StabilityReport,
};
use hyperstrip::lyapunov::{analyze_example2, LyapunovOptions};
use hyperstrip::periodic::{residuals, solve_bounded, solve_periodic, verify_c2, BoundedOptions, PeriodicOptions};
use hyperstrip::resolvent::{lambda_min, resolvent_solve, ResolventOptions};
use hyperstrip::spectral::{example1_spectrum, find_eigenvalues, SearchBox, SpectrumReport};
use hyperstrip::{Field, HyperbolicSystem};

use crate::config::{parse_exprs, RunConfig, StabilitySection};
use crate::output::Output;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Check,
    Gnorm,
    Evolve,
    Stability,
    Periodic,
    Bounded,
    Spectrum,
    Resolvent,
    Lyapunov,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Gnorm => "gnorm",
            Command::Evolve => "evolve",
            Command::Stability => "stability",
            Command::Periodic => "periodic",
            Command::Bounded => "bounded",
            Command::Spectrum => "spectrum",
            Command::Resolvent => "resolvent",
            Command::Lyapunov => "lyapunov",
        }
    }
}

#[derive(Debug)]
pub enum Failure {
    /// Bad input: exit code 2.
    Usage(anyhow::Error),
    /// A mathematical condition does not hold: exit code 1.
    Condition(anyhow::Error),
}

impl From<hyperstrip::Error> for Failure {
    fn from(e: hyperstrip::Error) -> Self {
        if e.is_condition_failure() {
            Failure::Condition(e.into())
        } else {
            Failure::Usage(e.into())
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<hyperstrip::Error>() {
            Ok(core) => core.into(),
            Err(other) => Failure::Usage(other),
        }
    }
}

pub struct Outcome {
    pub pass: bool,
    pub summary: Vec<String>,
    pub result: Value,
}

type Run = std::result::Result<Outcome, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow!(msg.into()))
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    sys: HyperbolicSystem,
    seed: Option<u64>,
    out: &'a Output,
}

impl Ctx<'_> {
    fn seed(&self, what: &str) -> std::result::Result<u64, Failure> {
        self.seed
            .ok_or_else(|| usage(format!("{what} is randomized: set numerics.seed or pass --seed")))
    }

    fn window_or(&self, fallback: (f64, f64)) -> (f64, f64) {
        self.cfg.window().unwrap_or(fallback)
    }

    fn validate(&self, window: (f64, f64)) -> std::result::Result<Value, Failure> {
        let rep = self.sys.validate_hyperbolicity(self.cfg.probe(), window)?;
        Ok(to_value(&rep))
    }

    fn stability(&self, section: &StabilitySection) -> std::result::Result<StabilityReport, Failure> {
        let nm = &self.cfg.numerics;
        Ok(estimate_stability(
            &self.sys,
            StabilityOptions {
                ensemble: section.ensemble,
                seed: self.seed("stability")?,
                start: section.start,
                horizon: section.horizon,
                burn_in: section.burn_in,
                nx: nm.nx,
                dt: nm.dt,
                char_step: nm.char_step,
            },
        )?)
    }
}

pub fn run(cmd: Command, cfg: &RunConfig, seed: Option<u64>, out: &Output) -> Run {
    let sys = cfg.build_system().map_err(Failure::Usage)?;
    let ctx = Ctx { cfg, sys, seed, out };
    match cmd {
        Command::Check => check(&ctx),
        Command::Gnorm => gnorms(&ctx),
        Command::Evolve => evolve_cmd(&ctx),
        Command::Stability => stability(&ctx),
        Command::Periodic => periodic(&ctx),
        Command::Bounded => bounded(&ctx),
        Command::Spectrum => spectrum(&ctx),
        Command::Resolvent => resolvent(&ctx),
        Command::Lyapunov => lyapunov(&ctx),
    }
}

fn check(ctx: &Ctx) -> Run {
    let window = ctx.cfg.window().ok_or_else(|| usage("non-periodic system: set numerics.t_window"))?;
    let hyper = ctx.validate(window)?;
    let nm = &ctx.cfg.numerics;
    let reports = check_dissipativity(&ctx.sys, nm.samples, ctx.cfg.window(), nm.char_step)?;
    let mut summary: Vec<String> = reports
        .iter()
        .map(|r| format!("G_{} norm {:.6} ({})", r.order, r.norm, if r.pass { "< 1" } else { ">= 1" }))
        .collect();
    let mut pass = reports.iter().all(|r| r.pass);
    let compat = match ctx.cfg.evolve.as_ref().and_then(|e| e.initial.as_ref()) {
        Some(init) => {
            let phi = Field::from_exprs(&parse_exprs("evolve.initial", init)?, nm.nx, window.0)?;
            let defects = ctx.sys.check_compatibility(&phi);
            let worst = defects.iter().cloned().fold(0.0, f64::max);
            summary.push(format!("initial data compatibility defect {worst:.3e}"));
            pass &= worst <= 1e-10;
            Some(defects)
        }
        None => None,
    };
    summary.insert(0, "hyperbolicity: ok".into());
    Ok(Outcome {
        pass,
        summary,
        result: json!({ "hyperbolicity": hyper, "dissipativity": to_value(&reports), "compatibility": compat }),
    })
}

fn gnorms(ctx: &Ctx) -> Run {
    let window = ctx.cfg.window().ok_or_else(|| usage("non-periodic system: set numerics.t_window"))?;
    ctx.validate(window)?;
    let section = ctx.cfg.gnorm.as_ref().map_or_else(Default::default, |g| g.orders.clone());
    let orders = if section.is_empty() { vec![0, 1, 2] } else { section };
    let brute = ctx.cfg.gnorm.as_ref().is_some_and(|g| g.bruteforce);
    let nm = &ctx.cfg.numerics;
    let mut reports = Vec::new();
    let mut summary = Vec::new();
    let mut pass = true;
    for &i in &orders {
        let rep = gnorm(&ctx.sys, i, nm.samples, ctx.cfg.window(), nm.char_step)?;
        let bound = if brute {
            let b = gnorm_bruteforce(&ctx.sys, i, nm.samples, ctx.cfg.window(), nm.char_step, ctx.seed("gnorm.bruteforce")?)?;
            summary.push(format!(
                "G_{i}: norm {:.8}, brute-force lower bound {:.8}",
                rep.norm, b.lower_bound
            ));
            Some(b)
        } else {
            summary.push(format!("G_{i}: norm {:.8}", rep.norm));
            None
        };
        pass &= rep.pass;
        reports.push(json!({ "report": to_value(&rep), "bruteforce": bound.map(|b| to_value(&b)) }));
    }
    Ok(Outcome { pass, summary, result: Value::Array(reports) })
}

fn evolve_cmd(ctx: &Ctx) -> Run {
    let section = ctx.cfg.evolve.as_ref().ok_or_else(|| usage("missing [evolve] section"))?;
    let nm = &ctx.cfg.numerics;
    let t0 = ctx.cfg.window().map_or(0.0, |w| w.0);
    ctx.validate(ctx.window_or((t0, t0 + section.horizon)))?;
    let phi = match &section.initial {
        Some(init) => Field::from_exprs(&parse_exprs("evolve.initial", init)?, nm.nx, t0)?,
        None => random_compatible(&ctx.sys, nm.nx, t0, &mut ensemble_rng(ctx.seed("evolve")?, 0)),
    };
    let tr = evolve(
        &ctx.sys,
        &phi,
        section.horizon,
        nm.dt,
        EvolveOptions { with_source: section.with_source, stride: section.stride.max(1), char_step: nm.char_step },
    )?;
    ctx.out.norms(&tr.times, &tr.l2, &tr.h1)?;
    for (k, snap) in tr.snapshots.iter().enumerate() {
        ctx.out.solution(k, snap)?;
    }
    let last = tr.l2.len() - 1;
    Ok(Outcome {
        pass: true,
        summary: vec![
            format!("{} steps of dt = {}", tr.times.len() - 1, tr.dt),
            format!("L2 norm {:.6e} -> {:.6e}", tr.l2[0], tr.l2[last]),
        ],
        result: json!({
            "steps": tr.times.len() - 1,
            "dt": tr.dt,
            "snapshots": tr.snapshots.len(),
            "stride": tr.stride,
            "l2_final": tr.l2[last],
            "h1_final": tr.h1[last],
        }),
    })
}

fn stability(ctx: &Ctx) -> Run {
    let section = ctx.cfg.stability.as_ref().map_or_else(StabilitySection::default, |s| StabilitySection { ..*s });
    ctx.validate(ctx.window_or((section.start, section.start + section.horizon)))?;
    let rep = ctx.stability(&section)?;
    Ok(Outcome {
        pass: rep.exponentially_stable,
        summary: vec![
            format!("L2: alpha = {:.6}, M = {:.4}", rep.l2.alpha, rep.l2.m),
            format!("H1: alpha = {:.6}, M = {:.4}", rep.h1.alpha, rep.h1.m),
        ],
        result: to_value(&rep),
    })
}

fn periodic_options(ctx: &Ctx) -> PeriodicOptions {
    let nm = &ctx.cfg.numerics;
    PeriodicOptions {
        nx: nm.nx,
        nt: nm.nt,
        char_step: nm.char_step,
        tol: nm.tol,
        budget: nm.budget,
        neumann_budget: nm.neumann_budget,
        dense_limit: ctx.cfg.periodic.as_ref().map_or(4096, |p| p.dense_limit),
    }
}

fn periodic(ctx: &Ctx) -> Run {
    let period = ctx.sys.period().ok_or_else(|| usage("periodic: system.period is required"))?;
    ctx.validate((0.0, period))?;
    let opts = periodic_options(ctx);
    let sol = solve_periodic(&ctx.sys, &opts)?;
    let res = residuals(&ctx.sys, &sol.u, opts.char_step)?;
    ctx.out.spacetime(&sol.u)?;
    let mut summary = vec![
        format!("method {:?}, {} outer iterations", sol.report.method, sol.report.iterations),
        format!(
            "fixed-point residual {:.3e} (bound {:.3e})",
            sol.report.fixed_point_residual, sol.report.certificate_bound
        ),
        format!("residuals: pde {:.3e}, boundary {:.3e}, periodicity {:.3e}", res.pde, res.boundary, res.periodicity),
    ];
    let c2 = if ctx.cfg.periodic.as_ref().is_some_and(|p| p.verify_c2) {
        let c = verify_c2(&ctx.sys, &sol.u, &opts)?;
        summary.push(format!("C2 diagnostic: max |w - D_t u*| = {:.3e}", c.report.max_discrepancy));
        Some(to_value(&c.report))
    } else {
        None
    };
    Ok(Outcome {
        pass: sol.report.certified,
        summary,
        result: json!({ "solve": to_value(&sol.report), "residuals": to_value(&res), "c2": c2, "sup": sol.u.max_abs() }),
    })
}

fn bounded(ctx: &Ctx) -> Run {
    let section = ctx.cfg.bounded.as_ref().ok_or_else(|| usage("missing [bounded] section"))?;
    let st_section = ctx.cfg.stability.as_ref().map_or_else(StabilitySection::default, |s| StabilitySection { ..*s });
    let [t0, t1] = section.window;
    let lead = section.burn_in.unwrap_or(0.0).max(st_section.horizon);
    ctx.validate(ctx.window_or((t0 - lead - 20.0, t1)))?;
    let st = ctx.stability(&st_section)?;
    let nm = &ctx.cfg.numerics;
    let burn_in = section.burn_in.unwrap_or(5.0 / st.l2.alpha.max(1e-12) + 1.0);
    let (u, rep) = solve_bounded(
        &ctx.sys,
        &st,
        &BoundedOptions {
            window: (t0, t1),
            nt: section.nt,
            nx: nm.nx,
            burn_in,
            dt_max: section.dt_max.unwrap_or(nm.dt),
            char_step: nm.char_step,
            start: None,
        },
    )?;
    ctx.out.spacetime(&u)?;
    Ok(Outcome {
        pass: true,
        summary: vec![
            format!("fitted L2 rate {:.6}, burn-in {:.4} from t = {:.4}", st.l2.alpha, rep.burn_in, rep.start_time),
            format!("start-data sensitivity bound {:.3e}", rep.forgetting_factor),
        ],
        result: json!({ "stability": to_value(&st), "bounded": to_value(&rep), "sup": u.max_abs() }),
    })
}

/// Each eigenvalue of `a` has a partner in `b` within `tol`, and vice versa.
fn pairwise_agree(a: &SpectrumReport, b: &SpectrumReport, tol: f64) -> bool {
    let covered = |x: &SpectrumReport, y: &SpectrumReport| {
        x.eigenvalues
            .iter()
            .all(|e| y.eigenvalues.iter().any(|f| (e.value() - f.value()).norm() <= tol))
    };
    a.eigenvalues.len() == b.eigenvalues.len() && covered(a, b) && covered(b, a)
}

fn spectrum(ctx: &Ctx) -> Run {
    let section = ctx.cfg.spectrum.as_ref().ok_or_else(|| usage("missing [spectrum] section"))?;
    let search = SearchBox { re: (section.re[0], section.re[1]), im: (section.im[0], section.im[1]) };
    let det = find_eigenvalues(&ctx.sys, search, (section.grid[0], section.grid[1]))?;
    ctx.out.spectrum("spectrum.csv", &det.eigenvalues)?;
    let mut summary = vec![format!(
        "determinant search: {} eigenvalues in the box, abscissa {}",
        det.eigenvalues.len(),
        det.abscissa
    )];
    let mut pass = det.abscissa < 0.0;
    let closed = match &section.example1 {
        Some(ex) => {
            let im_max = section.im[0].abs().max(section.im[1].abs());
            let mut cf = example1_spectrum(ex.alpha, ex.r1, ex.r2, (ex.xi_range[0], ex.xi_range[1]), im_max)?;
            let slack = 1e-9 * (1.0 + im_max);
            cf.eigenvalues.retain(|e| search.contains(e.value(), slack));
            cf.abscissa = cf.eigenvalues.first().map_or(f64::NEG_INFINITY, |e| e.re);
            cf.search_box = search;
            ctx.out.spectrum("closed_form.csv", &cf.eigenvalues)?;
            let agree = pairwise_agree(&det, &cf, 1e-6);
            summary.push(format!(
                "closed form: {} eigenvalues in the box, xi_bar {:?}; methods agree to 1e-6: {agree}",
                cf.eigenvalues.len(),
                cf.xi_bar
            ));
            pass &= agree;
            Some((cf, agree))
        }
        None => None,
    };
    summary.push(format!("all real parts negative: {}", det.abscissa < 0.0));
    Ok(Outcome {
        pass,
        summary,
        result: json!({
            "determinant": to_value(&det),
            "closed_form": closed.as_ref().map(|c| to_value(&c.0)),
            "methods_agree": closed.as_ref().map(|c| c.1),
        }),
    })
}

fn resolvent(ctx: &Ctx) -> Run {
    let section = ctx.cfg.resolvent.as_ref().ok_or_else(|| usage("missing [resolvent] section"))?;
    if section.g.len() != ctx.sys.n() {
        return Err(usage(format!("resolvent.g: {} entries for n = {}", section.g.len(), ctx.sys.n())));
    }
    if section.nx < hyperstrip::system::MIN_NX {
        return Err(usage(format!("resolvent.nx: at least {} required", hyperstrip::system::MIN_NX)));
    }
    let g = Field::from_exprs(&parse_exprs("resolvent.g", &section.g)?, section.nx, section.t)?;
    let opts = ResolventOptions::default();
    let mut reports = Vec::new();
    let mut summary = Vec::new();
    let mut pass = true;
    let mut prev_l2 = f64::INFINITY;
    for (k, &lambda) in section.lambdas.iter().enumerate() {
        match resolvent_solve(&ctx.sys, section.t, lambda, &g, &opts) {
            Ok(sol) => {
                let r = &sol.report;
                ctx.out.solution(k, &sol.u)?;
                summary.push(format!(
                    "lambda {lambda}: |u|_L2 = {:.6e}, residual {:.2e}, boundary {:.2e}, {} iterations",
                    r.l2, r.residual, r.boundary_defect, r.iterations
                ));
                pass &= r.residual <= 1e-8 && r.boundary_defect <= 1e-10 && r.l2 <= prev_l2;
                prev_l2 = r.l2;
                reports.push(to_value(r));
            }
            Err(e @ hyperstrip::Error::ContractionFailure { .. }) => {
                let hint = lambda_min(&ctx.sys, section.t, section.nx, ctx.seed.unwrap_or(0)).ok();
                summary.push(format!("lambda {lambda}: {e}; suggested lambda_min {:?}", hint.map(|h| h.0)));
                pass = false;
                reports.push(json!({ "lambda": lambda, "error": e.to_string(), "lambda_min": hint.map(|h| h.0) }));
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Outcome { pass, summary, result: Value::Array(reports) })
}

fn lyapunov(ctx: &Ctx) -> Run {
    let section = ctx.cfg.lyapunov.as_ref().map_or_else(Default::default, |s| crate::config::LyapunovSection { ..*s });
    ctx.validate(ctx.window_or((0.0, section.horizon)))?;
    let nm = &ctx.cfg.numerics;
    let rep = analyze_example2(
        &ctx.sys,
        &LyapunovOptions {
            ensemble: section.ensemble,
            seed: ctx.seed("lyapunov")?,
            nx: nm.nx,
            dt: nm.dt,
            horizon: section.horizon,
            char_step: nm.char_step,
            slack: section.slack,
        },
    )?;
    let envelope = rep.envelope.iter().cloned().fold(0.0, f64::max);
    Ok(Outcome {
        pass: rep.pass && envelope <= 1.05,
        summary: vec![
            format!("boundary margins: beta1* = {:e}, beta2* = {:e}", rep.margins.beta1, rep.margins.beta2),
            format!("worst measured d/dt log V = {:.4} (claimed <= -1)", rep.worst_rate),
            format!("worst envelope ratio V(t) e^(t-s) / V(s) = {envelope:.4}"),
        ],
        result: to_value(&rep),
    })
}
