//! Lanczos approximation of `exp(−i t H) v` for Hermitian `H`.

use faer::{Mat, Side};
use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::linalg::{axpy, dot, is_finite, norm, scale, ZERO};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KrylovError {
    #[error("Lanczos exponential not converged at dimension {dim}: error estimate {estimate:e} > {tol:e}")]
    NotConverged { dim: usize, estimate: f64, tol: f64 },
    #[error("non-finite value in Krylov iteration")]
    NonFinite,
}

#[derive(Clone, Copy, Debug)]
pub struct KrylovOutcome {
    pub dim: usize,
    pub estimate: f64,
}

/// Returns `exp(−i t H) v` where `apply(x, y)` writes `y = H x`.
/// Stops once the a-posteriori estimate `β_k |e_kᵀ exp(−itT) e_1| ‖v‖` drops
/// below `tol · ‖v‖`, or the Krylov space becomes invariant.
pub fn expm_apply<F>(mut apply: F, v: &[C64], t: f64, max_dim: usize, tol: f64) -> Result<(Vec<C64>, KrylovOutcome), KrylovError>
where
    F: FnMut(&[C64], &mut [C64]),
{
    let n = v.len();
    let beta0 = norm(v);
    if beta0 == 0.0 || t == 0.0 {
        return Ok((v.to_vec(), KrylovOutcome { dim: 0, estimate: 0.0 }));
    }
    let max_dim = max_dim.clamp(1, n.max(1));
    let mut basis: Vec<Vec<C64>> = Vec::with_capacity(max_dim);
    let mut q = v.to_vec();
    scale(&mut q, C64::new(1.0 / beta0, 0.0));
    basis.push(q);
    let mut alpha: Vec<f64> = Vec::with_capacity(max_dim);
    let mut beta: Vec<f64> = Vec::with_capacity(max_dim);
    let mut w = vec![ZERO; n];
    let mut coeffs: Vec<C64>;
    let mut estimate;

    loop {
        let j = basis.len() - 1;
        w.iter_mut().for_each(|z| *z = ZERO);
        apply(&basis[j], &mut w);
        if !is_finite(&w) {
            return Err(KrylovError::NonFinite);
        }
        let a = dot(&basis[j], &w).re;
        alpha.push(a);
        axpy(&mut w, C64::new(-a, 0.0), &basis[j]);
        if j > 0 {
            axpy(&mut w, C64::new(-beta[j - 1], 0.0), &basis[j - 1]);
        }
        // full reorthogonalization, twice
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &w);
                axpy(&mut w, -c, b);
            }
        }
        let b = norm(&w);
        let k = alpha.len();
        coeffs = tridiagonal_expm(&alpha, &beta, t);
        let scale_t = alpha.iter().map(|x| x.abs()).chain(beta.iter().copied()).fold(b, f64::max).max(1.0);
        let invariant = b <= 1e-14 * scale_t || k == n;
        estimate = b * coeffs[k - 1].norm();
        if invariant || estimate <= tol {
            break;
        }
        if k >= max_dim {
            return Err(KrylovError::NotConverged { dim: k, estimate, tol });
        }
        beta.push(b);
        let mut next = w.clone();
        scale(&mut next, C64::new(1.0 / b, 0.0));
        basis.push(next);
    }

    let mut out = vec![ZERO; n];
    for (c, q) in coeffs.iter().zip(&basis) {
        axpy(&mut out, c * beta0, q);
    }
    if !is_finite(&out) {
        return Err(KrylovError::NonFinite);
    }
    Ok((out, KrylovOutcome { dim: alpha.len(), estimate }))
}

/// `exp(−i t T) e_1` for the symmetric tridiagonal `T` with diagonal `alpha`
/// and off-diagonal `beta` (length `alpha.len() − 1` is used).
fn tridiagonal_expm(alpha: &[f64], beta: &[f64], t: f64) -> Vec<C64> {
    let k = alpha.len();
    if k == 1 {
        return vec![C64::from_polar(1.0, -t * alpha[0])];
    }
    let tmat = Mat::<f64>::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i == j + 1 {
            beta[j]
        } else if j == i + 1 {
            beta[i]
        } else {
            0.0
        }
    });
    let eig = tmat.self_adjoint_eigen(Side::Lower).expect("tridiagonal eigendecomposition");
    let u = eig.U();
    let s = eig.S().column_vector();
    (0..k)
        .map(|i| {
            let mut acc = ZERO;
            for m in 0..k {
                acc += C64::from_polar(u[(i, m)] * u[(0, m)], -t * s[m]);
            }
            acc
        })
        .collect()
}
