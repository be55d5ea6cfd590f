use std::f64::consts::TAU;

use hyperstrip::characteristics::DEFAULT_STEP;
use hyperstrip::evolution::{estimate_stability, StabilityOptions};
use hyperstrip::periodic::{
    manufactured_source, residuals, solve_bounded, solve_periodic, verify_c2, BoundedOptions, PathOperators,
    PeriodicOptions, SpaceTimeField,
};
use hyperstrip::{presets, Expr, HyperbolicSystem, Probe};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Smooth, `2π`-periodic and compatible with `u_1(0) = r1 u_2(0)`,
/// `u_2(1) = r2 u_1(1)`.
fn exact(r1: f64, r2: f64) -> Vec<Expr> {
    vec![
        Expr::parse(&format!("sin(t)*x*(1-x) + (1 + 0.5*cos(t))*({r1:e} + (1 - {r1:e})*x)")).unwrap(),
        Expr::parse(&format!("(1 + 0.5*cos(t))*(1 + ({r2:e} - 1)*x)")).unwrap(),
    ]
}

fn validated(sys: HyperbolicSystem) -> HyperbolicSystem {
    sys.validate_hyperbolicity(Probe::default(), (0.0, TAU)).unwrap();
    sys
}

fn manufactured(base: HyperbolicSystem) -> (HyperbolicSystem, Vec<Expr>) {
    let base = validated(base);
    let (r1, r2) = (base.r()[0][1], base.r()[1][0]);
    let ue = exact(r1, r2);
    let sys = validated(base.with_source(manufactured_source(&base, &ue).unwrap()).unwrap());
    (sys, ue)
}

fn opts(n: usize) -> PeriodicOptions {
    PeriodicOptions { nx: n, nt: n, ..Default::default() }
}

#[test]
fn manufactured_solution_converges_at_second_order() {
    let (r1, r2) = presets::example2_critical_coefficients();
    let (sys, ue) = manufactured(presets::example2(r1, r2).unwrap());
    let errors: Vec<f64> = [16, 32, 64]
        .iter()
        .map(|&n| {
            let sol = solve_periodic(&sys, &opts(n)).unwrap();
            assert!(sol.report.certified);
            sol.u.max_diff(&SpaceTimeField::from_exprs(&ue, n, n, TAU).unwrap())
        })
        .collect();
    assert!(errors[0] / errors[1] >= 3.5, "{errors:?}");
    assert!(errors[1] / errors[2] >= 3.5, "{errors:?}");
}

#[test]
fn coupled_manufactured_residuals_are_small() {
    let (sys, _) = manufactured(presets::example1(3.0, 0.5, 0.5, Some(TAU)).unwrap());
    let sol = solve_periodic(&sys, &opts(64)).unwrap();
    let res = residuals(&sys, &sol.u, DEFAULT_STEP).unwrap();
    assert!(res.pde <= 5e-3 && res.boundary <= 1e-10 && res.periodicity <= 5e-3, "{res:?}");
}

#[test]
fn zero_source_gives_zero_and_solution_is_linear() {
    let base = || validated(presets::example1(3.0, 0.5, 0.5, Some(TAU)).unwrap());
    let with = |f: [&str; 2]| validated(base().with_source(f.iter().map(|s| Expr::parse(s).unwrap()).collect()).unwrap());
    let o = opts(32);
    let zero = solve_periodic(&base(), &o).unwrap();
    assert_eq!(zero.u.max_abs(), 0.0);
    let u1 = solve_periodic(&with(["sin(t)", "x*cos(2*t)"]), &o).unwrap().u;
    let u2 = solve_periodic(&with(["cos(t)*(1-x)", "0.3"]), &o).unwrap().u;
    let mut u12 = solve_periodic(&with(["sin(t) + cos(t)*(1-x)", "x*cos(2*t) + 0.3"]), &o).unwrap().u;
    u12.axpy(-1.0, &u1);
    u12.axpy(-1.0, &u2);
    assert!(u12.max_abs() <= 1e-8, "{}", u12.max_abs());
}

#[test]
fn neumann_inverse_matches_dense_collocation() {
    let (r1, r2) = presets::example2_critical_coefficients();
    for sys in [
        validated(presets::example2(r1, r2).unwrap()),
        validated(presets::example1(3.0, 0.5, 0.5, Some(TAU)).unwrap()),
    ] {
        let ops = PathOperators::build(&sys, 0, 16, 16, DEFAULT_STEP).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut h = ops.zeros();
        h.values_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let (u, stats) = ops.invert_i_minus_c(&h, 10_000).unwrap();
        let mut defect = u.clone();
        defect.axpy(-1.0, &ops.apply_c(&u));
        defect.axpy(-1.0, &h);
        assert!(defect.max_abs() <= 1e-12, "{}", defect.max_abs());
        assert!(stats.max_ratio <= ops.discrete_g_norm() + 0.05, "{stats:?}");

        let lu = ops.dense_matrix(false).lu();
        let x = lu.solve(&nalgebra::DVector::from_column_slice(h.values())).unwrap();
        let gap = x.iter().zip(u.values()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(gap <= 1e-6, "{gap}");
    }
}

#[test]
fn time_derivative_diagnostic_converges() {
    let (r1, r2) = presets::example2_critical_coefficients();
    let (sys, _) = manufactured(presets::example2(r1, r2).unwrap());
    let disc: Vec<f64> = [16, 32, 64]
        .iter()
        .map(|&n| {
            let sol = solve_periodic(&sys, &opts(n)).unwrap();
            verify_c2(&sys, &sol.u, &opts(n)).unwrap().report.max_discrepancy
        })
        .collect();
    assert!(disc[0] / disc[1] >= 1.8 && disc[1] / disc[2] >= 1.8, "{disc:?}");
}

/// Largest difference on the common nodes of a window field
/// (`nt + 1` slices over one period) and a periodic one.
fn window_gap(bounded: &SpaceTimeField, periodic: &SpaceTimeField) -> f64 {
    let mut gap: f64 = 0.0;
    for j in 0..periodic.n() {
        for l in 0..=periodic.slices() {
            for i in 0..=periodic.nx() {
                let p = periodic.get(j, l % periodic.slices(), i);
                gap = gap.max((bounded.get(j, l, i) - p).abs());
            }
        }
    }
    gap
}

#[test]
fn bounded_solution_agrees_with_periodic() {
    let base = validated(presets::example1(3.0, 0.5, 0.5, Some(TAU)).unwrap());
    let stab = estimate_stability(
        &base,
        StabilityOptions {
            ensemble: 8,
            seed: 3,
            start: 0.0,
            horizon: 10.0,
            burn_in: 2.0,
            nx: 64,
            dt: 0.05,
            char_step: DEFAULT_STEP,
        },
    )
    .unwrap();
    let sys = validated(
        base.with_source(vec![Expr::parse("sin(t)").unwrap(), Expr::parse("x*cos(t)").unwrap()]).unwrap(),
    );
    let solve = |n: usize| {
        let p = solve_periodic(&sys, &opts(n)).unwrap().u;
        let (b, _) = solve_bounded(
            &sys,
            &stab,
            &BoundedOptions {
                window: (0.0, TAU),
                nt: n,
                nx: n,
                burn_in: 10.0 / stab.l2.alpha,
                dt_max: TAU / n as f64 / 4.0,
                char_step: DEFAULT_STEP,
                start: None,
            },
        )
        .unwrap();
        (p, b)
    };
    let (pc, bc) = solve(16);
    let (pf, bf) = solve(32);
    let est_p = 4.0 / 3.0 * pf.coarsen(2).max_diff(&pc);
    let est_b = 4.0 / 3.0 * bf.coarsen(2).max_diff(&bc);
    let gap = window_gap(&bf, &pf);
    assert!(gap <= est_p + est_b, "gap {gap:e}, estimates {est_p:e} + {est_b:e}");
}
