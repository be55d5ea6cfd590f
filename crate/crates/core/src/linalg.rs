//! Small linear-algebra helpers: dense LU via nalgebra and restarted GMRES
//! for matrix-free operators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub(crate) fn dense_solve(a: DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let lu = a.lu();
    let x = lu
        .solve(&DVector::from_column_slice(b))
        .ok_or_else(|| Error::SingularDiscretization("dense collocation matrix is singular".into()))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularDiscretization("dense solve produced non-finite values".into()));
    }
    Ok(x.as_slice().to_vec())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GmresStats {
    pub relative_residual: f64,
}

/// Restarted GMRES(`restart`) with modified Gram-Schmidt and Givens rotations.
pub(crate) fn gmres(
    apply: impl Fn(&[f64]) -> Result<Vec<f64>>,
    b: &[f64],
    x0: Vec<f64>,
    restart: usize,
    max_iter: usize,
    rtol: f64,
) -> Result<(Vec<f64>, GmresStats)> {
    let n = b.len();
    let bnorm = norm(b).max(f64::MIN_POSITIVE);
    let mut x = x0;
    let mut total = 0;
    loop {
        let ax = apply(&x)?;
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        if beta / bnorm <= rtol || total >= max_iter {
            return Ok((x, GmresStats { relative_residual: beta / bnorm }));
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|ri| ri / beta).collect()];
        let mut h = vec![vec![0.0; restart]; restart + 1];
        let mut cs = vec![0.0; restart];
        let mut sn = vec![0.0; restart];
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..restart {
            let mut w = apply(&v[k])?;
            for (q, vq) in v.iter().enumerate() {
                h[q][k] = dot(&w, vq);
                for (wi, vi) in w.iter_mut().zip(vq) {
                    *wi -= h[q][k] * vi;
                }
            }
            h[k + 1][k] = norm(&w);
            for q in 0..k {
                let t = cs[q] * h[q][k] + sn[q] * h[q + 1][k];
                h[q + 1][k] = -sn[q] * h[q][k] + cs[q] * h[q + 1][k];
                h[q][k] = t;
            }
            let den = h[k][k].hypot(h[k + 1][k]);
            cs[k] = h[k][k] / den;
            sn[k] = h[k + 1][k] / den;
            h[k][k] = den;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            total += 1;
            let lucky = h[k + 1][k] == 0.0 && den == 0.0;
            if (g[k + 1].abs() / bnorm) <= rtol || total >= max_iter || lucky {
                break;
            }
            let wn = norm(&w);
            if wn == 0.0 {
                break;
            }
            v.push(w.iter().map(|wi| wi / wn).collect());
        }
        // back substitution
        let mut y = vec![0.0; k_used];
        for q in (0..k_used).rev() {
            let mut s = g[q];
            for p in q + 1..k_used {
                s -= h[q][p] * y[p];
            }
            y[q] = s / h[q][q];
        }
        for (q, yq) in y.iter().enumerate() {
            for i in 0..n {
                x[i] += yq * v[q][i];
            }
        }
    }
}
