use hyperstrip::characteristics::DEFAULT_STEP;
use hyperstrip::evolution::{estimate_stability, StabilityOptions};
use hyperstrip::lyapunov::{analyze_example2, boundary_margins_example2, LyapunovOptions};
use hyperstrip::resolvent::{resolvent_solve, ResolventOptions};
use hyperstrip::spectral::{example1_relation, find_eigenvalues, SearchBox};
use hyperstrip::{presets, Expr, Field, Probe};

#[test]
fn example1_decay_rate_matches_spectral_abscissa() {
    let sys = presets::example1(3.0, 0.5, 0.5, None).unwrap();
    sys.validate_hyperbolicity(Probe::default(), (0.0, 20.0)).unwrap();
    let sp = find_eigenvalues(&sys, SearchBox { re: (-8.0, 2.0), im: (0.0, 12.0) }, (48, 48)).unwrap();
    for e in &sp.eigenvalues {
        let (f, _) = example1_relation(0.5, 0.5, 3.0 + 2.0 * e.value());
        assert!(f.norm() <= 1e-8, "{e:?}");
    }
    let fit = estimate_stability(
        &sys,
        StabilityOptions {
            ensemble: 8,
            seed: 21,
            start: 0.0,
            horizon: 12.0,
            burn_in: 4.0,
            nx: 64,
            dt: 0.05,
            char_step: DEFAULT_STEP,
        },
    )
    .unwrap();
    let rel = (fit.l2.alpha + sp.abscissa).abs() / sp.abscissa.abs();
    assert!(rel <= 0.15, "alpha {} abscissa {}", fit.l2.alpha, sp.abscissa);
}

#[test]
fn resolvent_sweep_is_accurate_and_norms_decrease() {
    let sys = presets::example1(3.0, 0.5, 0.5, None).unwrap();
    sys.validate_hyperbolicity(Probe::default(), (0.0, 1.0)).unwrap();
    let g = Field::from_exprs(&[Expr::parse("sin(pi*x)").unwrap(), Expr::parse("x*(1-x)").unwrap()], 256, 0.0).unwrap();
    let mut prev = f64::INFINITY;
    let mut first_scaled = None;
    for lambda in [10.0, 40.0, 160.0] {
        let sol = resolvent_solve(&sys, 0.0, lambda, &g, &ResolventOptions::default()).unwrap();
        assert!(sol.report.residual <= 1e-8, "{:?}", sol.report);
        assert!(sol.report.l2 <= prev);
        prev = sol.report.l2;
        // √λ‖u‖ stays bounded along the sweep.
        let scaled = lambda.sqrt() * sol.report.l2;
        assert!(scaled <= 2.0 * *first_scaled.get_or_insert(scaled), "{scaled}");
    }
}

#[test]
fn example2_lyapunov_functional_decays() {
    let (r1, r2) = presets::example2_critical_coefficients();
    let m = boundary_margins_example2(r1, r2);
    assert!(m.beta1.abs() <= 1e-12 && m.beta2.abs() <= 1e-12, "{m:?}");
    let sys = presets::example2(r1, r2).unwrap();
    sys.validate_hyperbolicity(Probe::default(), (0.0, std::f64::consts::TAU)).unwrap();
    let rep = analyze_example2(
        &sys,
        &LyapunovOptions { horizon: 10.0, seed: 4, ..Default::default() },
    )
    .unwrap();
    assert!(rep.pass, "{rep:?}");
    assert!(rep.envelope.iter().all(|&e| e <= 1.05), "{:?}", rep.envelope);
}
