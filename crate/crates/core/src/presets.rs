//! Ready-made systems used by the tests, the shipped configs and the CLI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::system::HyperbolicSystem;

/// `∂_t u_1 + ∂_x u_1 = 0`, `∂_t u_2 − ∂_x u_2 + α u_2 − u_1 = 0` with
/// `u_1(0,t) = r1 u_2(0,t)` and `u_2(1,t) = r2 u_1(1,t)`.
pub fn example1(alpha: f64, r1: f64, r2: f64, period: Option<f64>) -> Result<HyperbolicSystem> {
    let alpha = format!("{alpha:e}");
    HyperbolicSystem::parse(
        1,
        &["1", "-1"],
        &[&["0", "0"], &["-1", &alpha]],
        &["0", "0"],
        vec![vec![0.0, r1], vec![r2, 0.0]],
        period,
    )
}

/// The decoupled nonautonomous pair with speeds `1 − sin(t)/4` and `−(3+x)`,
/// damping 3 on the first component and the same boundary coupling as
/// [`example1`]. Period `2π`.
pub fn example2(r1: f64, r2: f64) -> Result<HyperbolicSystem> {
    HyperbolicSystem::parse(
        1,
        &["1 - 0.25*sin(t)", "-(3+x)"],
        &[&["3", "0"], &["0", "0"]],
        &["0", "0"],
        vec![vec![0.0, r1], vec![r2, 0.0]],
        Some(2.0 * std::f64::consts::PI),
    )
}

/// Boundary coefficients at which both boundary terms of the quadratic
/// Lyapunov functional for [`example2`] vanish at their worst time.
pub fn example2_critical_coefficients() -> (f64, f64) {
    ((12.0f64 / 5.0).sqrt(), 3.0f64.sqrt() / 4.0)
}

/// Scalar transport `∂_t u + c ∂_x u = 0` (`c > 0`) with `u(0,t) = r u(1,t)`.
pub fn transport(speed: f64, r: f64, period: Option<f64>) -> Result<HyperbolicSystem> {
    let c = format!("{speed:e}");
    HyperbolicSystem::parse(1, &[&c], &[&["0"]], &["0"], vec![vec![r]], period)
}

/// A seeded random `2π`-periodic system with two or three components:
/// time- and space-dependent speeds bounded away from zero, constant
/// couplings and reflection coefficients in `[−1, 1]`.
pub fn random_system(seed: u64) -> Result<HyperbolicSystem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=3usize);
    let m = rng.gen_range(1..n);
    // Same-sign speeds share one modulation so they stay well separated.
    let mut modulation = || {
        let wobble = rng.gen_range(0.0..0.3);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let slope = rng.gen_range(-0.3..0.3);
        format!("(1 + {wobble:e}*sin(t + {phase:e}))*(1 + {slope:e}*x)")
    };
    let (pos, neg) = (modulation(), modulation());
    let mut base = 0.0;
    let a: Vec<String> = (0..n)
        .map(|j| {
            if j == 0 || j == m {
                base = 0.0;
            }
            base += rng.gen_range(0.6..1.4);
            if j < m {
                format!("{base:e}*{pos}")
            } else {
                format!("-{base:e}*{neg}")
            }
        })
        .collect();
    let b: Vec<Vec<String>> = (0..n)
        .map(|j| {
            (0..n)
                .map(|k| {
                    let v: f64 = if j == k { rng.gen_range(-0.5..2.0) } else { rng.gen_range(-1.0..1.0) };
                    format!("{v:e}")
                })
                .collect()
        })
        .collect();
    let r: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let a_ref: Vec<&str> = a.iter().map(String::as_str).collect();
    let b_rows: Vec<Vec<&str>> = b.iter().map(|row| row.iter().map(String::as_str).collect()).collect();
    let b_ref: Vec<&[&str]> = b_rows.iter().map(Vec::as_slice).collect();
    let zero = vec!["0"; n];
    HyperbolicSystem::parse(m, &a_ref, &b_ref, &zero, r, Some(std::f64::consts::TAU))
}
