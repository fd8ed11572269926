//! Orthogonal-polynomial chain mapping of a discretized bath measure.
//!
//! The diagonal `ε_k` and off-diagonal `t_k` of the Jacobi matrix of the
//! measure's orthonormal polynomials become the on-site energies and
//! hoppings of a nearest-neighbour chain; the system couples to site 0 with
//! strength `κ₀ = sqrt(Σ_j w_j)`.
//!
//! Two independent routes are provided: a discretized Stieltjes procedure
//! on polynomial values with compensated sums, and Lanczos tridiagonalization
//! of `diag(ω_j)` with full reorthogonalization.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{kahan_sum, Real};
use crate::spectral::{Branch, DiscretizedMeasure};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("chain length must be at least 1")]
    ZeroLength,
    #[error("measure has {available} support points with positive weight; at most N = {available} chain sites can be mapped (requested {requested})")]
    InsufficientSupport { requested: usize, available: usize },
    #[error("recurrence broke down: squared hopping t_{index}^2 = {value:e} is not positive")]
    Breakdown { index: usize, value: f64 },
    #[error("malformed coefficient table: {0}")]
    Parse(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainMethod {
    #[default]
    Stieltjes,
    Lanczos,
}

/// Coefficients of one mapped chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainCoefficients<T> {
    /// On-site energies `ε_0 … ε_{N−1}`.
    pub eps: Vec<T>,
    /// Hoppings `t_0 … t_{N−2}` between sites k and k+1.
    pub hop: Vec<T>,
    /// System–site-0 coupling.
    pub kappa0: T,
    pub branch: Branch,
}

impl<T: Real> ChainCoefficients<T> {
    /// A zero-length chain (no bath weight on this branch).
    pub fn absent(branch: Branch) -> Self {
        Self { eps: Vec::new(), hop: Vec::new(), kappa0: T::zero(), branch }
    }

    pub fn len(&self) -> usize {
        self.eps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eps.is_empty()
    }

    /// Plain-text dump: a header with κ₀ and branch, then `index ε t` rows.
    /// The last row carries `t = 0` (no further site).
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# branch={} kappa0={:e} sites={}", self.branch, self.kappa0, self.len());
        let _ = writeln!(s, "# index eps t");
        for (k, e) in self.eps.iter().enumerate() {
            let t = self.hop.get(k).copied().unwrap_or_else(T::zero);
            let _ = writeln!(s, "{k} {e:e} {t:e}");
        }
        s
    }

    pub fn from_table(text: &str) -> Result<Self, ChainError> {
        let err = |m: &str| ChainError::Parse(m.to_string());
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| err("empty table"))?;
        let mut branch = None;
        let mut kappa0 = None;
        let mut sites = None;
        for field in header.trim_start_matches('#').split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(|| err("bad header field"))?;
            match k {
                "branch" => {
                    branch = Some(match v {
                        "L" => Branch::L,
                        "R" => Branch::R,
                        _ => return Err(err("unknown branch")),
                    })
                }
                "kappa0" => kappa0 = Some(parse_real::<T>(v)?),
                "sites" => sites = Some(v.parse::<usize>().map_err(|_| err("bad site count"))?),
                _ => return Err(err("unknown header key")),
            }
        }
        let (branch, kappa0, sites) = match (branch, kappa0, sites) {
            (Some(b), Some(k), Some(n)) => (b, k, n),
            _ => return Err(err("incomplete header")),
        };
        let mut eps = Vec::with_capacity(sites);
        let mut hop = Vec::with_capacity(sites.saturating_sub(1));
        for line in lines.filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 3 {
                return Err(err("row needs three columns"));
            }
            if cols[0].parse::<usize>().ok() != Some(eps.len()) {
                return Err(err("rows out of order"));
            }
            eps.push(parse_real::<T>(cols[1])?);
            hop.push(parse_real::<T>(cols[2])?);
        }
        if eps.len() != sites {
            return Err(err("row count does not match header"));
        }
        hop.truncate(sites.saturating_sub(1));
        Ok(Self { eps, hop, kappa0, branch })
    }
}

fn parse_real<T: Real>(s: &str) -> Result<T, ChainError> {
    s.parse::<f64>()
        .map(T::lit)
        .map_err(|_| ChainError::Parse(format!("not a number: {s}")))
}

/// Maps `measure` onto an `n`-site chain.
pub fn map_to_chain<T: Real>(
    measure: &DiscretizedMeasure<T>,
    n: usize,
    method: ChainMethod,
    branch: Branch,
) -> Result<ChainCoefficients<T>, ChainError> {
    if measure.empty {
        return Ok(ChainCoefficients::absent(branch));
    }
    if n == 0 {
        return Err(ChainError::ZeroLength);
    }
    let available = measure.positive_support();
    if available < n {
        return Err(ChainError::InsufficientSupport { requested: n, available });
    }
    let total = measure.total_weight();
    let (eps, hop) = match method {
        ChainMethod::Stieltjes => stieltjes(&measure.nodes, &measure.weights, total, n)?,
        ChainMethod::Lanczos => lanczos(&measure.nodes, &measure.weights, total, n)?,
    };
    Ok(ChainCoefficients { eps, hop, kappa0: total.sqrt(), branch })
}

/// Largest `|Stieltjes − Lanczos|` over all coefficients including κ₀.
pub fn cross_validate<T: Real>(measure: &DiscretizedMeasure<T>, n: usize) -> Result<T, ChainError> {
    let a = map_to_chain(measure, n, ChainMethod::Stieltjes, Branch::R)?;
    let b = map_to_chain(measure, n, ChainMethod::Lanczos, Branch::R)?;
    let diffs = a
        .eps
        .iter()
        .zip(&b.eps)
        .chain(a.hop.iter().zip(&b.hop))
        .map(|(x, y)| (*x - *y).abs())
        .chain(std::iter::once((a.kappa0 - b.kappa0).abs()));
    Ok(diffs.fold(T::zero(), T::max))
}

fn breakdown_floor<T: Real>(nodes: &[T]) -> T {
    let scale = nodes.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    T::epsilon() * scale * scale
}

/// Discretized Stieltjes procedure. Polynomials are kept normalized at each
/// step so long chains neither overflow nor underflow.
fn stieltjes<T: Real>(x: &[T], w: &[T], total: T, n: usize) -> Result<(Vec<T>, Vec<T>), ChainError> {
    let m = x.len();
    let floor = breakdown_floor(x);
    let mut p_prev = vec![T::zero(); m];
    let mut p = vec![T::one() / total.sqrt(); m];
    let mut eps = Vec::with_capacity(n);
    let mut hop = Vec::with_capacity(n.saturating_sub(1));
    let mut t_prev = T::zero();
    for k in 0..n {
        let norm = kahan_sum(w.iter().zip(&p).map(|(&wj, &pj)| wj * pj * pj));
        let a = kahan_sum(x.iter().zip(w).zip(&p).map(|((&xj, &wj), &pj)| wj * xj * pj * pj)) / norm;
        eps.push(a);
        if k + 1 == n {
            break;
        }
        let q: Vec<T> = (0..m).map(|j| (x[j] - a) * p[j] - t_prev * p_prev[j]).collect();
        let t2 = kahan_sum(w.iter().zip(&q).map(|(&wj, &qj)| wj * qj * qj)) / norm;
        if !(t2 > floor) || !t2.is_finite() {
            return Err(ChainError::Breakdown { index: k, value: t2.to_f64_lossy() });
        }
        let t = t2.sqrt();
        hop.push(t);
        p_prev = p;
        p = q.into_iter().map(|v| v / t).collect();
        t_prev = t;
    }
    Ok((eps, hop))
}

/// Lanczos tridiagonalization of `diag(x)` started from `sqrt(w)/‖sqrt(w)‖`,
/// with two passes of classical Gram–Schmidt against all previous vectors.
fn lanczos<T: Real>(x: &[T], w: &[T], total: T, n: usize) -> Result<(Vec<T>, Vec<T>), ChainError> {
    let floor = breakdown_floor(x);
    let dot = |a: &[T], b: &[T]| kahan_sum(a.iter().zip(b).map(|(&u, &v)| u * v));
    let inv = T::one() / total.sqrt();
    let mut basis: Vec<Vec<T>> = vec![w.iter().map(|&wj| wj.sqrt() * inv).collect()];
    let mut eps = Vec::with_capacity(n);
    let mut hop = Vec::with_capacity(n.saturating_sub(1));
    for k in 0..n {
        let v = &basis[k];
        let mut u: Vec<T> = x.iter().zip(v).map(|(&xj, &vj)| xj * vj).collect();
        let a = dot(&u, v);
        eps.push(a);
        if k + 1 == n {
            break;
        }
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&u, b);
                u.iter_mut().zip(b).for_each(|(uj, &bj)| *uj -= c * bj);
            }
        }
        let t2 = dot(&u, &u);
        if !(t2 > floor) || !t2.is_finite() {
            return Err(ChainError::Breakdown { index: k, value: t2.to_f64_lossy() });
        }
        let t = t2.sqrt();
        hop.push(t);
        basis.push(u.into_iter().map(|v| v / t).collect());
    }
    Ok((eps, hop))
}
