//! One PASS/FAIL line per acceptance criterion. Runs the `hyperstrip`
//! binary where a criterion is about command output and the library
//! where it is about solver internals.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use hyperstrip::characteristics::DEFAULT_STEP;
use hyperstrip::dissipativity::{gnorm, gnorm_bruteforce, sign_matched_value};
use hyperstrip::evolution::{estimate_stability, StabilityOptions};
use hyperstrip::periodic::{
    manufactured_source, residuals, solve_bounded, solve_periodic, verify_c2, BoundedOptions, PathOperators,
    PeriodicOptions, SpaceTimeField,
};
use hyperstrip::spectral::example1_relation;
use hyperstrip::{presets, Expr, HyperbolicSystem, Probe};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Verdict = Result<String, String>;

const EXAMPLE1: &str = r#"
[system]
n = 2
m = 1
a = ["1", "-1"]
b = [["0", "0"], ["-1", "3"]]
r = [[0.0, 0.5], [0.5, 0.0]]

[numerics]
nx = 64
dt = 0.05
t_window = [0.0, 20.0]
seed = 2024

[stability]
ensemble = 8
horizon = 12.0
burn_in = 4.0

[spectrum]
re = [-8.0, 2.0]
im = [0.0, 40.0]
grid = [64, 64]

[spectrum.example1]
alpha = 3.0
r1 = 0.5
r2 = 0.5

[resolvent]
lambdas = [10.0, 40.0, 160.0]
g = ["sin(pi*x)", "x*(1 - x)"]
nx = 256
"#;

const EXAMPLE2: &str = r#"
[system]
n = 2
m = 1
a = ["1 - 0.25*sin(t)", "-(3+x)"]
b = [["3", "0"], ["0", "0"]]
f = ["cos(t)", "sin(t)*x"]
r = [[0.0, 1.5491933384829668], [0.4330127018922193, 0.0]]
period = 6.283185307179586

[numerics]
nx = 32
nt = 32
dt = 0.05
seed = 99

[stability]
ensemble = 8
horizon = 6.0
burn_in = 1.0

[lyapunov]
ensemble = 8
horizon = 10.0

[gnorm]
orders = [0, 1, 2]
"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        Workspace { dir: tempfile::tempdir().expect("temp dir") }
    }

    fn config(&self, name: &str, body: &str) -> PathBuf {
        let p = self.dir.path().join(name);
        fs::write(&p, body).expect("write config");
        p
    }

    /// Runs a command; returns the exit code and the parsed report.
    fn run(&self, cmd: &str, config: &Path, out: &str) -> Result<(i32, Value, PathBuf), String> {
        let out = self.dir.path().join(out);
        let status = Command::new(env!("CARGO_BIN_EXE_hyperstrip"))
            .args([cmd, "--config"])
            .arg(config)
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        let code = status.status.code().unwrap_or(-1);
        let text = fs::read_to_string(out.join("report.json"))
            .map_err(|_| format!("{cmd}: no report.json (exit {code}): {}", String::from_utf8_lossy(&status.stderr)))?;
        let report: Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        Ok((code, report, out))
    }
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn validated(sys: HyperbolicSystem, window: (f64, f64)) -> HyperbolicSystem {
    sys.validate_hyperbolicity(Probe::default(), window).expect("hyperbolic");
    sys
}

fn example1_spectrum(ws: &Workspace) -> Verdict {
    let cfg = ws.config("ex1.toml", EXAMPLE1);
    let (code, rep, _) = ws.run("spectrum", &cfg, "ex1_spectrum")?;
    let det = &rep["result"]["determinant"]["eigenvalues"];
    let eig: Vec<Complex64> = det
        .as_array()
        .ok_or("no eigenvalues")?
        .iter()
        .map(|e| Complex64::new(f(&e["re"]), f(&e["im"])))
        .collect();
    let worst_relation = eig
        .iter()
        .map(|&l| example1_relation(0.5, 0.5, 3.0 + 2.0 * l).0.norm())
        .fold(0.0, f64::max);
    let agree = rep["result"]["methods_agree"].as_bool() == Some(true);
    let all_negative = eig.iter().all(|l| l.re < 0.0);
    check(
        code == 0 && eig.len() >= 5 && worst_relation <= 1e-8 && agree && all_negative,
        format!(
            "{} eigenvalues, abscissa {:.9}, worst relation residual {worst_relation:.1e}, methods agree {agree}, exit {code}",
            eig.len(),
            f(&rep["result"]["determinant"]["abscissa"])
        ),
    )
}

fn example1_stability(ws: &Workspace) -> Verdict {
    let cfg = ws.config("ex1.toml", EXAMPLE1);
    let (_, sp, _) = ws.run("spectrum", &cfg, "ex1_spectrum_b")?;
    let (code, st, _) = ws.run("stability", &cfg, "ex1_stability")?;
    let abscissa = f(&sp["result"]["determinant"]["abscissa"]);
    let alpha = f(&st["result"]["l2"]["alpha"]);
    let rel = (alpha + abscissa).abs() / abscissa.abs();
    check(
        code == 0 && rel <= 0.15,
        format!("fitted rate {alpha:.5} vs -abscissa {:.5}: relative gap {rel:.4} (<= 0.15)", -abscissa),
    )
}

fn example2_lyapunov(ws: &Workspace) -> Verdict {
    let cfg = ws.config("ex2.toml", EXAMPLE2);
    let (code, rep, _) = ws.run("lyapunov", &cfg, "ex2_lyapunov")?;
    let r = &rep["result"];
    let (b1, b2) = (f(&r["margins"]["beta1"]), f(&r["margins"]["beta2"]));
    let envelope = r["envelope"].as_array().ok_or("no envelope")?;
    let worst = envelope.iter().map(f).fold(0.0, f64::max);
    check(
        code == 0 && b1.abs() <= 1e-12 && b2.abs() <= 1e-12 && envelope.len() == 8 && worst <= 1.05,
        format!("margins {b1:e}, {b2:e}; worst V(t)e^(t-s)/V(s) over 8 seeds, t-s in [0,10]: {worst:.4}"),
    )
}

fn example2_dissipativity(ws: &Workspace) -> Verdict {
    let cfg = ws.config("ex2.toml", EXAMPLE2);
    let (code, rep, _) = ws.run("gnorm", &cfg, "ex2_gnorm")?;
    let mut ok = code == 0;
    let mut parts = Vec::new();
    for entry in rep["result"].as_array().ok_or("no reports")? {
        let r = &entry["report"];
        let i = f(&r["order"]);
        let s1 = f(&r["components"][0]);
        let s2 = f(&r["components"][1]);
        let b1 = (12.0f64 / 5.0).sqrt() * (-12.0 / 5.0 + i * 4.0 / 9.0).exp();
        ok &= s1 <= b1 + 1e-6 && s2 <= 3.0f64.sqrt() / 4.0 + 1e-6 && r["pass"] == Value::Bool(true);
        parts.push(format!("i={i}: s1 {s1:.5} <= {b1:.5}, s2 {s2:.5}"));
    }
    check(ok && parts.len() == 3, parts.join("; "))
}

fn gnorm_oracle() -> Verdict {
    let (mut excess, mut gap) = (f64::NEG_INFINITY, 0.0f64);
    for seed in 0..20 {
        let sys = presets::random_system(seed).map_err(|e| e.to_string())?;
        let sys = validated(sys, (0.0, TAU));
        for i in 0..3 {
            let g = gnorm(&sys, i, 128, None, DEFAULT_STEP).map_err(|e| e.to_string())?;
            let b = gnorm_bruteforce(&sys, i, 128, None, DEFAULT_STEP, 1000 + seed).map_err(|e| e.to_string())?;
            excess = excess.max(b.lower_bound - g.norm);
            for j in 0..sys.n() {
                let v = sign_matched_value(&sys, i, j, g.argmax[j], DEFAULT_STEP).map_err(|e| e.to_string())?;
                gap = gap.max((v - g.components[j]).abs());
            }
        }
    }
    check(
        excess <= 1e-6 && gap <= 1e-6,
        format!("20 systems x 3 orders: max(bruteforce - gnorm) = {excess:.2e}, sign-matched gap {gap:.2e}"),
    )
}

fn exact(r1: f64, r2: f64) -> Vec<Expr> {
    vec![
        Expr::parse(&format!("sin(t)*x*(1-x) + (1 + 0.5*cos(t))*({r1:e} + (1 - {r1:e})*x)")).unwrap(),
        Expr::parse(&format!("(1 + 0.5*cos(t))*(1 + ({r2:e} - 1)*x)")).unwrap(),
    ]
}

fn manufactured(base: HyperbolicSystem) -> (HyperbolicSystem, Vec<Expr>) {
    let base = validated(base, (0.0, TAU));
    let ue = exact(base.r()[0][1], base.r()[1][0]);
    let f = manufactured_source(&base, &ue).unwrap();
    (validated(base.with_source(f).unwrap(), (0.0, TAU)), ue)
}

fn popts(n: usize) -> PeriodicOptions {
    PeriodicOptions { nx: n, nt: n, ..Default::default() }
}

fn periodic_order() -> Verdict {
    let (r1, r2) = presets::example2_critical_coefficients();
    let cases = [
        ("example 1", presets::example1(3.0, 0.5, 0.5, Some(TAU)).unwrap()),
        ("example 2", presets::example2(r1, r2).unwrap()),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, base) in cases {
        let (sys, ue) = manufactured(base);
        let mut errs = Vec::new();
        let mut last = None;
        for n in [32, 64, 128] {
            let sol = solve_periodic(&sys, &popts(n)).map_err(|e| e.to_string())?;
            errs.push(sol.u.max_diff(&SpaceTimeField::from_exprs(&ue, n, n, TAU).unwrap()));
            last = Some(residuals(&sys, &sol.u, DEFAULT_STEP).map_err(|e| e.to_string())?);
        }
        let res = last.unwrap();
        let (q1, q2) = (errs[0] / errs[1], errs[1] / errs[2]);
        ok &= q1 >= 3.5 && q2 >= 3.5 && res.pde <= 1e-3 && res.boundary <= 1e-3 && res.periodicity <= 1e-3;
        parts.push(format!(
            "{name}: ratios {q1:.2}, {q2:.2}; residuals at 128 ({:.1e}, {:.1e}, {:.1e})",
            res.pde, res.boundary, res.periodicity
        ));
    }
    check(ok, parts.join("; "))
}

fn window_gap(bounded: &SpaceTimeField, periodic: &SpaceTimeField) -> f64 {
    let mut gap: f64 = 0.0;
    for j in 0..periodic.n() {
        for l in 0..=periodic.slices() {
            for i in 0..=periodic.nx() {
                gap = gap.max((bounded.get(j, l, i) - periodic.get(j, l % periodic.slices(), i)).abs());
            }
        }
    }
    gap
}

fn uniqueness_linearity() -> Verdict {
    let base = || validated(presets::example1(3.0, 0.5, 0.5, Some(TAU)).unwrap(), (0.0, TAU));
    let with = |f: [&str; 2]| {
        let src = f.iter().map(|s| Expr::parse(s).unwrap()).collect();
        validated(base().with_source(src).unwrap(), (0.0, TAU))
    };
    let o = popts(64);
    let zero = solve_periodic(&base(), &o).map_err(|e| e.to_string())?.u.max_abs();
    let u1 = solve_periodic(&with(["sin(t)", "x*cos(2*t)"]), &o).map_err(|e| e.to_string())?.u;
    let u2 = solve_periodic(&with(["cos(t)*(1-x)", "0.3"]), &o).map_err(|e| e.to_string())?.u;
    let mut add = solve_periodic(&with(["sin(t) + cos(t)*(1-x)", "x*cos(2*t) + 0.3"]), &o)
        .map_err(|e| e.to_string())?
        .u;
    add.axpy(-1.0, &u1);
    add.axpy(-1.0, &u2);
    let additivity = add.max_abs();

    let stab = estimate_stability(
        &base(),
        StabilityOptions {
            ensemble: 8,
            seed: 17,
            start: 0.0,
            horizon: 12.0,
            burn_in: 4.0,
            nx: 64,
            dt: 0.05,
            char_step: DEFAULT_STEP,
        },
    )
    .map_err(|e| e.to_string())?;
    let sys = with(["sin(t)", "x*cos(t)"]);
    let solve = |n: usize| -> Result<(SpaceTimeField, SpaceTimeField), String> {
        let p = solve_periodic(&sys, &popts(n)).map_err(|e| e.to_string())?.u;
        let bopts = BoundedOptions {
            window: (0.0, TAU),
            nt: n,
            nx: n,
            burn_in: 10.0 / stab.l2.alpha,
            dt_max: TAU / n as f64 / 4.0,
            char_step: DEFAULT_STEP,
            start: None,
        };
        let (b, _) = solve_bounded(&sys, &stab, &bopts).map_err(|e| e.to_string())?;
        Ok((p, b))
    };
    let (pc, bc) = solve(32)?;
    let (pf, bf) = solve(64)?;
    let tol = 4.0 / 3.0 * (pf.coarsen(2).max_diff(&pc) + bf.coarsen(2).max_diff(&bc));
    let gap = window_gap(&bf, &pf);
    check(
        zero == 0.0 && additivity <= 1e-8 && gap <= tol,
        format!("|u*(0)| = {zero:e}, additivity defect {additivity:.1e}, bounded vs periodic {gap:.2e} <= {tol:.2e}"),
    )
}

fn neumann_certificate() -> Verdict {
    let (r1, r2) = presets::example2_critical_coefficients();
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, sys) in [
        ("example 1", validated(presets::example1(3.0, 0.5, 0.5, Some(TAU)).unwrap(), (0.0, TAU))),
        ("example 2", validated(presets::example2(r1, r2).unwrap(), (0.0, TAU))),
    ] {
        let ops = PathOperators::build(&sys, 0, 24, 24, DEFAULT_STEP).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut h = ops.zeros();
        h.values_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let (u, stats) = ops.invert_i_minus_c(&h, 10_000).map_err(|e| e.to_string())?;
        let mut defect = u.clone();
        defect.axpy(-1.0, &ops.apply_c(&u));
        defect.axpy(-1.0, &h);
        let g0 = gnorm(&sys, 0, 256, None, DEFAULT_STEP).map_err(|e| e.to_string())?.norm;
        let x = ops
            .dense_matrix(false)
            .lu()
            .solve(&nalgebra::DVector::from_column_slice(h.values()))
            .ok_or("dense collocation matrix is singular")?;
        let dense_gap = x.iter().zip(u.values()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        ok &= defect.max_abs() <= 1e-12 && stats.max_ratio <= g0 + 0.05 && dense_gap <= 1e-6;
        parts.push(format!(
            "{name}: residual {:.1e}, ratio {:.4} (||G_0|| {g0:.4}), dense gap {dense_gap:.1e}",
            defect.max_abs(),
            stats.max_ratio
        ));
    }
    check(ok, parts.join("; "))
}

fn c2_diagnostic() -> Verdict {
    let (r1, r2) = presets::example2_critical_coefficients();
    let (sys, _) = manufactured(presets::example2(r1, r2).unwrap());
    let mut disc = Vec::new();
    for n in [32, 64, 128] {
        let sol = solve_periodic(&sys, &popts(n)).map_err(|e| e.to_string())?;
        disc.push(verify_c2(&sys, &sol.u, &popts(n)).map_err(|e| e.to_string())?.report.max_discrepancy);
    }
    let (q1, q2) = (disc[0] / disc[1], disc[1] / disc[2]);
    check(
        q1 >= 1.8 && q2 >= 1.8,
        format!("max |w - D_t u*| at 32/64/128: {:.2e}, {:.2e}, {:.2e} (ratios {q1:.2}, {q2:.2})", disc[0], disc[1], disc[2]),
    )
}

fn resolvent(ws: &Workspace) -> Verdict {
    let cfg = ws.config("ex1.toml", EXAMPLE1);
    let (code, rep, _) = ws.run("resolvent", &cfg, "ex1_resolvent")?;
    let rows = rep["result"].as_array().ok_or("no results")?;
    let res: Vec<f64> = rows.iter().map(|r| f(&r["residual"])).collect();
    let l2: Vec<f64> = rows.iter().map(|r| f(&r["l2"])).collect();
    let monotone = l2.windows(2).all(|w| w[1] <= w[0]);
    check(
        code == 0 && rows.len() == 3 && res.iter().all(|&r| r <= 1e-8) && monotone,
        format!(
            "lambda 10/40/160: residuals {}, L2 norms {}",
            res.iter().map(|r| format!("{r:.1e}")).collect::<Vec<_>>().join(", "),
            l2.iter().map(|v| format!("{v:.4e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap_or_default()))
                .collect()
        })
        .unwrap_or_default();
    files.sort();
    files
}

fn determinism(ws: &Workspace) -> Verdict {
    let ex1 = ws.config("ex1.toml", EXAMPLE1);
    let ex2 = ws.config("ex2.toml", EXAMPLE2);
    let runs = [
        ("spectrum", &ex1),
        ("stability", &ex1),
        ("resolvent", &ex1),
        ("gnorm", &ex2),
        ("periodic", &ex2),
        ("bounded", &ex2),
        ("lyapunov", &ex2),
    ];
    let bounded = format!("{EXAMPLE2}\n[bounded]\nwindow = [0.0, 6.283185307179586]\nnt = 32\n");
    let ex2b = ws.config("ex2b.toml", &bounded);
    let mut files = 0;
    for (cmd, cfg) in runs {
        let cfg = if cmd == "bounded" { &ex2b } else { cfg };
        let (_, _, a) = ws.run(cmd, cfg, &format!("det_{cmd}_a"))?;
        let (_, _, b) = ws.run(cmd, cfg, &format!("det_{cmd}_b"))?;
        let (fa, fb) = (dir_bytes(&a), dir_bytes(&b));
        if fa.is_empty() || fa != fb {
            return Err(format!("{cmd}: outputs differ between identical runs"));
        }
        files += fa.len();
    }
    check(true, format!("7 commands run twice, {files} output files byte-identical"))
}

fn main() {
    let ws = Workspace::new();
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict + '_>)> = vec![
        ("example 1 spectrum", Box::new(|| example1_spectrum(&ws))),
        ("example 1 stability cross-check", Box::new(|| example1_stability(&ws))),
        ("example 2 Lyapunov", Box::new(|| example2_lyapunov(&ws))),
        ("example 2 dissipativity", Box::new(|| example2_dissipativity(&ws))),
        ("G-norm oracle equivalence", Box::new(gnorm_oracle)),
        ("periodic solver order", Box::new(periodic_order)),
        ("uniqueness and linearity", Box::new(uniqueness_linearity)),
        ("(I - C)^-1 certificate", Box::new(neumann_certificate)),
        ("C2 diagnostic", Box::new(c2_diagnostic)),
        ("resolvent", Box::new(|| resolvent(&ws))),
        ("determinism", Box::new(|| determinism(&ws))),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let verdict = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("PASS [{:>2}] {name}: {detail} ({secs:.1}s)", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{:>2}] {name}: {detail} ({secs:.1}s)", k + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
