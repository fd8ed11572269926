//! Reference backends: exact state-vector propagation of small chain models
//! and the noninteracting-blip integro-differential equation.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::krylov::{expm_apply, KrylovError};
use crate::model::{ChainModel, Site};
use crate::quadrature::{integrate_adaptive, QuadratureError};
use crate::scalar::Real;
use crate::spectral::SpectralDensity;
use crate::zeno::{expand_markovian, CycleDiagnostics, MeasurementProtocol, ProtocolMode, ZenoError, ZenoRecord, UNDERFLOW_FLOOR};

pub const DEFAULT_DENSE_CAP: usize = 4096;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("Hilbert-space dimension {dim} exceeds the dense cap {cap}")]
    TooLarge { dim: usize, cap: usize },
    #[error("Hamiltonian is not Hermitian: defect {0:e}")]
    NotHermitian(f64),
    #[error(transparent)]
    Krylov(#[from] KrylovError),
    #[error("unitarity lost: |norm − 1| = {0:e}")]
    Unitarity(f64),
    #[error("quadrature for {what} at tau = {tau}: {source}")]
    Quadrature { what: &'static str, tau: f64, source: QuadratureError },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Protocol(#[from] ZenoError),
}

/// Compressed-row Hermitian operator.
#[derive(Clone, Debug)]
pub struct SparseHermitian {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseHermitian {
    fn from_triplets(dim: usize, mut t: Vec<(usize, usize, C64)>) -> Self {
        t.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(t.len());
        let mut vals: Vec<C64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *vals.last_mut().expect("entry") += v;
                continue;
            }
            cols.push(c);
            vals.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { dim, row_ptr, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `y += H x`.
    pub fn apply_add(&self, x: &[C64], y: &mut [C64]) {
        for r in 0..self.dim {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[r] += acc;
        }
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        let row = &self.cols[self.row_ptr[r]..self.row_ptr[r + 1]];
        match row.binary_search(&c) {
            Ok(k) => self.vals[self.row_ptr[r] + k],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    /// `max |H_rc − conj(H_cr)|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.dim {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.cols[k];
                worst = worst.max((self.vals[k] - self.get(c, r).conj()).norm());
            }
        }
        worst
    }

    pub fn expectation(&self, psi: &[C64]) -> f64 {
        let mut y = vec![C64::new(0.0, 0.0); self.dim];
        self.apply_add(psi, &mut y);
        psi.iter().zip(&y).map(|(a, b)| (a.conj() * b).re).sum()
    }
}

/// A chain model small enough for state-vector evolution. The Hamiltonian is
/// assembled from the chain coefficients by acting on occupation-number
/// basis states, independently of the term list used by the MPS code.
#[derive(Clone, Debug)]
pub struct DenseInstance {
    pub model: ChainModel,
    pub hamiltonian: SparseHermitian,
    pub psi: Vec<C64>,
    dims: Vec<usize>,
    strides: Vec<usize>,
    system_site: usize,
}

impl DenseInstance {
    pub fn new(model: &ChainModel) -> Result<Self, OracleError> {
        Self::with_cap(model, DEFAULT_DENSE_CAP)
    }

    pub fn with_cap(model: &ChainModel, cap: usize) -> Result<Self, OracleError> {
        let dims = model.dims().to_vec();
        let dim = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).unwrap_or(usize::MAX);
        if dim > cap {
            return Err(OracleError::TooLarge { dim, cap });
        }
        let mut strides = Vec::with_capacity(dims.len());
        let mut s = 1;
        for &d in &dims {
            strides.push(s);
            s *= d;
        }
        let system_site = model.system_site();
        let hamiltonian = assemble(model, &dims, &strides, dim);
        let defect = hamiltonian.hermiticity_defect();
        if defect > 1e-12 {
            return Err(OracleError::NotHermitian(defect));
        }
        // |e⟩ is occupation 0 on the qubit; every boson in vacuum.
        let mut psi = vec![C64::new(0.0, 0.0); dim];
        psi[0] = C64::new(1.0, 0.0);
        Ok(Self { model: model.clone(), hamiltonian, psi, dims, strides, system_site })
    }

    pub fn dim(&self) -> usize {
        self.psi.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn reset(&mut self) {
        self.psi.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        self.psi[0] = C64::new(1.0, 0.0);
    }

    fn qubit_bit(&self, idx: usize) -> usize {
        (idx / self.strides[self.system_site]) % 2
    }

    pub fn sigma_z(&self) -> f64 {
        let (mut up, mut down) = (0.0, 0.0);
        for (i, a) in self.psi.iter().enumerate() {
            if self.qubit_bit(i) == 0 {
                up += a.norm_sqr();
            } else {
                down += a.norm_sqr();
            }
        }
        (up - down) / (up + down)
    }

    pub fn norm(&self) -> f64 {
        self.psi.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn energy(&self) -> f64 {
        self.hamiltonian.expectation(&self.psi) / self.norm().powi(2)
    }

    /// Advances by `t` with one Krylov exponential.
    pub fn advance(&mut self, t: f64) -> Result<(), OracleError> {
        let h = &self.hamiltonian;
        let (out, _) = expm_apply(|x, y| h.apply_add(x, y), &self.psi, t, 80, 1e-14)?;
        self.psi = out;
        Ok(())
    }

    /// Applies `|e⟩⟨e|` on the qubit; returns the squared norm afterwards.
    pub fn project_excited(&mut self) -> f64 {
        let stride = self.strides[self.system_site];
        for (i, a) in self.psi.iter_mut().enumerate() {
            if (i / stride) % 2 == 1 {
                *a = C64::new(0.0, 0.0);
            }
        }
        self.psi.iter().map(|a| a.norm_sqr()).sum()
    }
}

fn assemble(model: &ChainModel, dims: &[usize], strides: &[usize], dim: usize) -> SparseHermitian {
    let layout = model.layout();
    let sys = model.system_site();
    let half_delta = 0.5 * model.system.delta;
    let r = &model.right;
    let l = model.left.as_ref();
    let pos = |s: Site| layout.iter().position(|&x| x == s).expect("site in layout");

    // (site, energy) and (site a, site b, amplitude) lists, with the L-branch signs applied.
    let mut onsite: Vec<(usize, f64)> = Vec::new();
    let mut hops: Vec<(usize, usize, f64)> = Vec::new();
    let mut edges: Vec<(usize, f64)> = Vec::new();
    for k in 0..r.len() {
        onsite.push((pos(Site::Right(k)), r.eps[k]));
        if k + 1 < r.len() {
            hops.push((pos(Site::Right(k)), pos(Site::Right(k + 1)), r.hop[k]));
        }
    }
    if !r.is_empty() && r.kappa0 != 0.0 {
        edges.push((pos(Site::Right(0)), 0.5 * r.kappa0));
    }
    if let Some(l) = l {
        for k in 0..l.len() {
            onsite.push((pos(Site::Left(k)), -l.eps[k]));
            if k + 1 < l.len() {
                hops.push((pos(Site::Left(k)), pos(Site::Left(k + 1)), -l.hop[k]));
            }
        }
        if !l.is_empty() && l.kappa0 != 0.0 {
            edges.push((pos(Site::Left(0)), 0.5 * l.kappa0));
        }
    }

    let occ = |idx: usize, site: usize| (idx / strides[site]) % dims[site];
    let mut t: Vec<(usize, usize, C64)> = Vec::with_capacity(dim * (2 + 2 * edges.len() + 2 * hops.len()));
    let re = |x: f64| C64::new(x, 0.0);
    for idx in 0..dim {
        let q = occ(idx, sys);
        let sz = if q == 0 { 1.0 } else { -1.0 };
        if half_delta != 0.0 {
            let flipped = if q == 0 { idx + strides[sys] } else { idx - strides[sys] };
            t.push((flipped, idx, re(half_delta)));
        }
        let diag: f64 = onsite.iter().map(|&(s, e)| e * occ(idx, s) as f64).sum();
        if diag != 0.0 {
            t.push((idx, idx, re(diag)));
        }
        for &(s, g) in &edges {
            let n = occ(idx, s);
            if n + 1 < dims[s] {
                t.push((idx + strides[s], idx, re(sz * g * ((n + 1) as f64).sqrt())));
            }
            if n > 0 {
                t.push((idx - strides[s], idx, re(sz * g * (n as f64).sqrt())));
            }
        }
        for &(a, b, amp) in &hops {
            let (na, nb) = (occ(idx, a), occ(idx, b));
            // b_a† b_b
            if nb > 0 && na + 1 < dims[a] {
                let to = idx + strides[a] - strides[b];
                t.push((to, idx, re(amp * ((na + 1) as f64 * nb as f64).sqrt())));
            }
            // b_b† b_a
            if na > 0 && nb + 1 < dims[b] {
                let to = idx + strides[b] - strides[a];
                t.push((to, idx, re(amp * ((nb + 1) as f64 * na as f64).sqrt())));
            }
        }
    }
    SparseHermitian::from_triplets(dim, t)
}

/// ⟨σ_z⟩ and the return amplitude `⟨ψ(0)|ψ(t)⟩` on a uniform grid.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct DenseTrajectory {
    pub t: Vec<f64>,
    pub sigma_z: Vec<f64>,
    pub survival_amplitude: Vec<(f64, f64)>,
    pub norm: Vec<f64>,
}

/// Propagates the instance's state for `duration` in steps of `dt`,
/// recording after every step (and at t = 0).
pub fn dense_propagate(instance: &mut DenseInstance, duration: f64, dt: f64) -> Result<DenseTrajectory, OracleError> {
    if !(dt > 0.0) || !(duration >= 0.0) {
        return Err(OracleError::Invalid(format!("need dt > 0 and duration >= 0, got dt = {dt}, duration = {duration}")));
    }
    let steps = (duration / dt).round() as usize;
    let psi0 = instance.psi.clone();
    let mut traj = DenseTrajectory::default();
    let record = |inst: &DenseInstance, t: f64, traj: &mut DenseTrajectory| -> Result<(), OracleError> {
        let n = inst.norm();
        if (n - 1.0).abs() > 1e-12 {
            return Err(OracleError::Unitarity((n - 1.0).abs()));
        }
        let amp: C64 = psi0.iter().zip(&inst.psi).map(|(a, b)| a.conj() * b).sum();
        traj.t.push(t);
        traj.sigma_z.push(inst.sigma_z());
        traj.survival_amplitude.push((amp.re, amp.im));
        traj.norm.push(n);
        Ok(())
    };
    record(instance, 0.0, &mut traj)?;
    for k in 1..=steps {
        instance.advance(dt)?;
        record(instance, k as f64 * dt, &mut traj)?;
    }
    Ok(traj)
}

/// The measurement protocol on the state-vector backend.
pub fn dense_zeno(instance: &mut DenseInstance, proto: &MeasurementProtocol) -> Result<ZenoRecord, OracleError> {
    proto.validate()?;
    let steps = proto.steps_per_interval()?;
    let sub = proto.tau / steps as f64;
    instance.reset();
    let mut record = ZenoRecord::new(proto.clone());
    let cycles = match proto.mode {
        ProtocolMode::NonMarkovian => proto.n_measurements,
        ProtocolMode::Markovian => 1,
    };
    for _ in 0..cycles {
        for _ in 0..steps {
            instance.advance(sub)?;
        }
        let sigma_z_before = instance.sigma_z();
        let p = instance.project_excited();
        if !(p > UNDERFLOW_FLOOR) {
            record.terminated_early = true;
            break;
        }
        let s = 1.0 / p.sqrt();
        instance.psi.iter_mut().for_each(|a| *a *= s);
        record.push(p.min(1.0), CycleDiagnostics { max_bond: 0, discarded: 0.0, sigma_z_before });
    }
    if proto.mode == ProtocolMode::Markovian && !record.terminated_early {
        expand_markovian(&mut record);
    }
    Ok(record)
}

/// Exact relation between the free-decay survival probability and ⟨σ_z⟩
/// for a qubit starting in `|e⟩`.
pub fn survival_from_sigma_z(sigma_z: f64) -> f64 {
    0.5 * (1.0 + sigma_z)
}

/// Uniform time grid `t_k = k·step`, `k = 0 … points−1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid<T> {
    pub step: T,
    pub points: usize,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(step: T, points: usize) -> Result<Self, OracleError> {
        if !(step > T::zero()) || !step.is_finite() || points < 2 {
            return Err(OracleError::Invalid(format!("time grid needs step > 0 and at least 2 points, got {step}, {points}")));
        }
        Ok(Self { step, points })
    }

    /// Grid covering `[0, end]` with the given step (end rounded to the grid).
    pub fn covering(end: T, step: T) -> Result<Self, OracleError> {
        let n = (end / step).round().to_usize().unwrap_or(0);
        Self::new(step, n + 1)
    }

    pub fn times(&self) -> Vec<T> {
        (0..self.points).map(|k| T::from_usize_lossy(k) * self.step).collect()
    }

    pub fn end(&self) -> T {
        T::from_usize_lossy(self.points - 1) * self.step
    }

    /// Same span with half the step.
    pub fn refined(&self) -> Self {
        Self { step: self.step / T::lit(2.0), points: 2 * self.points - 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NibaSpec<T> {
    pub density: SpectralDensity<T>,
    pub beta: T,
    pub delta: T,
    pub t_grid: TimeGrid<T>,
    pub quad_tol: T,
}

impl<T: Real> NibaSpec<T> {
    pub fn validate(&self) -> Result<(), OracleError> {
        self.density.validate().map_err(|e| OracleError::Invalid(e.to_string()))?;
        if !(self.beta > T::zero()) {
            return Err(OracleError::Invalid(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.quad_tol > T::zero()) {
            return Err(OracleError::Invalid(format!("quad_tol must be positive, got {}", self.quad_tol)));
        }
        if !self.delta.is_finite() {
            return Err(OracleError::Invalid("delta must be finite".into()));
        }
        TimeGrid::new(self.t_grid.step, self.t_grid.points)?;
        Ok(())
    }
}

/// `Q₁(τ)` and `Q₂(τ)` of the blip kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlipPhases<T> {
    pub q1: T,
    pub q2: T,
}

/// Breakpoints splitting the support into pieces of at most half an
/// oscillation period of `cos(ωτ)`.
fn oscillation_breakpoints<T: Real>(lo: T, hi: T, tau: T) -> Vec<T> {
    let span = (hi - lo) * tau / T::PI();
    let pieces = span.ceil().to_usize().unwrap_or(1).clamp(1, 4096);
    (0..=pieces).map(|k| lo + (hi - lo) * T::from_usize_lossy(k) / T::from_usize_lossy(pieces)).collect()
}

pub fn blip_phases<T: Real>(spec: &NibaSpec<T>, tau: T) -> Result<BlipPhases<T>, OracleError> {
    if !(tau >= T::zero()) {
        return Err(OracleError::Invalid(format!("tau must be >= 0, got {tau}")));
    }
    if tau == T::zero() {
        return Ok(BlipPhases { q1: T::zero(), q2: T::zero() });
    }
    let (lo, hi) = spec.density.support();
    let bp = oscillation_breakpoints(lo, hi, tau);
    let two = T::lit(2.0);
    let density = spec.density;
    // J(ω)/ω² written as (J/ω)/ω so that the Ohmic limit ω → 0 stays finite.
    let over_omega2 = move |w: T| density.evaluate(w).map(|j| j / (w * w)).unwrap_or(T::zero());
    let beta = spec.beta;
    let tol = spec.quad_tol;
    let q1 = integrate_adaptive(|w: T| (w * tau).sin() * over_omega2(w), &bp, tol, tol, 20000)
        .map_err(|source| OracleError::Quadrature { what: "Q1", tau: tau.to_f64_lossy(), source })?;
    let q2 = integrate_adaptive(
        |w: T| {
            let s = (w * tau / two).sin();
            // 1 − cos ωτ = 2 sin²(ωτ/2); coth(βω/2) → 1 at zero temperature
            let coth = if beta.is_infinite() { T::one() } else { T::one() / (beta * w / two).tanh() };
            two * s * s * coth * over_omega2(w)
        },
        &bp,
        tol,
        tol,
        20000,
    )
    .map_err(|source| OracleError::Quadrature { what: "Q2", tau: tau.to_f64_lossy(), source })?;
    Ok(BlipPhases { q1: q1.value, q2: q2.value })
}

/// `f(τ) = Δ² cos Q₁(τ) exp(−Q₂(τ))`.
pub fn niba_kernel<T: Real>(spec: &NibaSpec<T>, tau: T) -> Result<T, OracleError> {
    let p = blip_phases(spec, tau)?;
    Ok(spec.delta * spec.delta * p.q1.cos() * (-p.q2).exp())
}

/// Solves `y′(t) = −∫₀ᵗ f(t−s) y(s) ds`, `y(0) = 1`, on a uniform grid by
/// trapezoidal product integration with a trapezoidal outer step.
/// `kernel[k] = f(k h)` must cover every grid point.
pub fn solve_volterra<T: Real>(kernel: &[T], h: T) -> Vec<T> {
    let n = kernel.len();
    let mut y = Vec::with_capacity(n);
    if n == 0 {
        return y;
    }
    y.push(T::one());
    let half = T::lit(0.5);
    let f0 = kernel[0];
    let denom = T::one() + h * h * f0 / T::lit(4.0);
    // z_0 = 0
    let mut z_prev = T::zero();
    for m in 1..n {
        let mut s = half * kernel[m] * y[0];
        for j in 1..m {
            s += kernel[m - j] * y[j];
        }
        let s = h * s;
        let ym = (y[m - 1] - half * h * (z_prev + s)) / denom;
        z_prev = s + half * h * f0 * ym;
        y.push(ym);
    }
    y
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NibaSolution<T> {
    pub t: Vec<T>,
    pub sigma_z: Vec<T>,
    /// Richardson estimate of the error of `sigma_z`, from a half-step solve.
    pub error_estimate: T,
}

impl<T: Real> NibaSolution<T> {
    pub fn survival(&self) -> Vec<T> {
        self.sigma_z.iter().map(|&z| T::lit(0.5) * (T::one() + z)).collect()
    }
}

/// Tolerance above which the NIBA self-convergence check warns.
pub const NIBA_WARN_TOL: f64 = 1e-6;

fn kernel_on_grid<T: Real>(spec: &NibaSpec<T>, grid: &TimeGrid<T>) -> Result<Vec<T>, OracleError> {
    grid.times().into_iter().map(|t| niba_kernel(spec, t)).collect()
}

fn solve_on<T: Real>(spec: &NibaSpec<T>, grid: &TimeGrid<T>) -> Result<Vec<T>, OracleError> {
    Ok(solve_volterra(&kernel_on_grid(spec, grid)?, grid.step))
}

/// ⟨σ_z(t)⟩ on `spec.t_grid`, with a self-convergence error estimate.
pub fn niba_sigma_z<T: Real>(spec: &NibaSpec<T>) -> Result<NibaSolution<T>, OracleError> {
    spec.validate()?;
    let grid = spec.t_grid;
    let coarse = solve_on(spec, &grid)?;
    let fine = solve_on(spec, &grid.refined())?;
    let diff = coarse.iter().enumerate().map(|(k, &c)| (c - fine[2 * k]).abs()).fold(T::zero(), T::max);
    let error_estimate = diff * T::lit(4.0 / 3.0);
    if error_estimate.to_f64_lossy() > NIBA_WARN_TOL {
        log::warn!("NIBA grid step {} too coarse: estimated error {:e}", grid.step, error_estimate);
    }
    Ok(NibaSolution { t: grid.times(), sigma_z: coarse, error_estimate })
}

/// `max|y_h − y_{h/2}| / max|y_{h/2} − y_{h/4}|` on the common grid; ≈ 4 for a
/// second-order scheme.
pub fn niba_convergence_ratio<T: Real>(spec: &NibaSpec<T>) -> Result<T, OracleError> {
    spec.validate()?;
    let g1 = spec.t_grid;
    let g2 = g1.refined();
    let g4 = g2.refined();
    let fine = solve_on(spec, &g4)?;
    let mid = solve_on(spec, &g2)?;
    let coarse = solve_on(spec, &g1)?;
    let mut e1 = T::zero();
    let mut e2 = T::zero();
    for k in 0..g1.points {
        e1 = e1.max((coarse[k] - mid[2 * k]).abs());
        e2 = e2.max((mid[2 * k] - fine[4 * k]).abs());
    }
    Ok(e1 / e2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build, BosonDims, ChainParams, SystemSpec};
    use crate::tdvp::EvolutionConfig;

    fn model(alpha: f64, delta: f64, beta: f64, n: usize, d: usize) -> ChainModel {
        let j = SpectralDensity::one_over_f(alpha, 0.1, 10.0).unwrap();
        build(SystemSpec::new(delta).unwrap(), &j, beta, &ChainParams::new(40, n), &BosonDims::uniform(n, n, d)).unwrap()
    }

    fn niba(alpha: f64, beta: f64, step: f64, points: usize) -> NibaSpec<f64> {
        NibaSpec {
            density: SpectralDensity::one_over_f(alpha, 0.1, 10.0).unwrap(),
            beta,
            delta: 1.0,
            t_grid: TimeGrid::new(step, points).unwrap(),
            quad_tol: 1e-12,
        }
    }

    #[test]
    fn assembled_matches_term_list() {
        use crate::model::assemble_dense;
        for (beta, n, d) in [(f64::INFINITY, 2, 3), (1.5, 2, 3), (0.7, 1, 4)] {
            let m = model(0.6, 1.0, beta, n, d);
            let inst = DenseInstance::new(&m).unwrap();
            let h = assemble_dense(&m.nearest_neighbor_terms(), m.dims());
            let dim = inst.dim();
            let mut worst: f64 = 0.0;
            for r in 0..dim {
                for c in 0..dim {
                    worst = worst.max((h[(r, c)] - inst.hamiltonian.get(r, c)).norm());
                }
            }
            assert!(worst < 1e-13, "beta={beta}: {worst}");
        }
    }

    #[test]
    fn respects_cap() {
        let m = model(0.5, 1.0, 1.0, 3, 6);
        assert!(matches!(DenseInstance::new(&m), Err(OracleError::TooLarge { dim: 93312, cap: 4096 })));
        let inst = DenseInstance::with_cap(&m, 100_000).unwrap();
        assert_eq!(inst.dim(), 2 * 6usize.pow(6));
        assert!(inst.hamiltonian.hermiticity_defect() < 1e-12);
    }

    #[test]
    fn free_and_static_qubit() {
        let mut inst = DenseInstance::new(&model(0.0, 1.0, f64::INFINITY, 3, 4)).unwrap();
        let tr = dense_propagate(&mut inst, 5.0, 0.1).unwrap();
        for (t, z) in tr.t.iter().zip(&tr.sigma_z) {
            assert!((z - t.cos()).abs() < 1e-10);
        }
        let mut inst = DenseInstance::new(&model(0.8, 0.0, 1.0, 2, 4)).unwrap();
        let tr = dense_propagate(&mut inst, 5.0, 0.1).unwrap();
        assert!(tr.sigma_z.iter().all(|z| (z - 1.0).abs() < 1e-12));
    }

    #[test]
    fn step_halving_is_exact() {
        let m = model(0.5, 1.0, 2.0, 2, 4);
        let mut a = DenseInstance::new(&m).unwrap();
        let mut b = DenseInstance::new(&m).unwrap();
        let ta = dense_propagate(&mut a, 3.0, 0.1).unwrap();
        let tb = dense_propagate(&mut b, 3.0, 0.05).unwrap();
        for k in 0..ta.t.len() {
            assert!((ta.sigma_z[k] - tb.sigma_z[2 * k]).abs() < 1e-10);
        }
        let e0 = {
            let fresh = DenseInstance::new(&m).unwrap();
            fresh.energy()
        };
        assert!((a.energy() - e0).abs() < 1e-10);
    }

    #[test]
    fn dense_zeno_limits() {
        let ev = EvolutionConfig { dt: 0.05, ..Default::default() };
        let p = MeasurementProtocol::new(0.5, 5, ProtocolMode::NonMarkovian, ev).unwrap();
        let mut inst = DenseInstance::new(&model(0.0, 1.0, f64::INFINITY, 2, 3)).unwrap();
        let r = dense_zeno(&mut inst, &p).unwrap();
        assert!(r.per_step.iter().all(|x| (x - 0.25f64.cos().powi(2)).abs() < 1e-12));
        let mut inst = DenseInstance::new(&model(0.7, 0.0, 1.0, 2, 3)).unwrap();
        let r = dense_zeno(&mut inst, &p).unwrap();
        assert!(r.per_step.iter().all(|x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn dense_zeno_matches_mps() {
        use crate::tdvp::Scheme;
        use crate::zeno::run_protocol;
        for beta in [f64::INFINITY, 1.5] {
            let m = model(0.5, 1.0, beta, 2, 3);
            let ev = EvolutionConfig { dt: 0.02, scheme: Scheme::TwoSite, chi_max: 64, svd_cutoff: 0.0, ..Default::default() };
            let p = MeasurementProtocol::new(0.2, 6, ProtocolMode::NonMarkovian, ev).unwrap();
            let mps = run_protocol(&m, &p).unwrap();
            let mut inst = DenseInstance::new(&m).unwrap();
            let dense = dense_zeno(&mut inst, &p).unwrap();
            for (a, b) in mps.per_step.iter().zip(&dense.per_step) {
                assert!((a - b).abs() < 1e-8, "beta={beta}: {a} {b}");
            }
        }
    }

    #[test]
    fn kernel_regression() {
        let spec = niba(1.0, 1.0, 0.1, 3);
        let p = blip_phases(&spec, 1.0).unwrap();
        assert!((p.q1 - 9.232163774184507).abs() < 1e-10, "{}", p.q1);
        assert!((p.q2 - 9.703078712678351).abs() < 1e-10, "{}", p.q2);
        let f = niba_kernel(&spec, 1.0).unwrap();
        assert!((f - -5.996528928450907e-5).abs() < 1e-15, "{f:e}");
        assert_eq!(niba_kernel(&spec, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn q2_nonnegative_and_monotone_in_beta() {
        let taus = [0.05, 0.3, 1.0, 2.5, 7.0];
        let betas = [0.2, 1.0, 5.0, 50.0, f64::INFINITY];
        for &tau in &taus {
            let mut last = f64::INFINITY;
            for &beta in &betas {
                let q2 = blip_phases(&niba(0.4, beta, 0.1, 3), tau).unwrap().q2;
                assert!(q2 >= 0.0);
                assert!(q2 <= last, "tau={tau} beta={beta}");
                last = q2;
            }
        }
    }

    #[test]
    fn ohmic_kernel_is_finite() {
        let spec = NibaSpec {
            density: SpectralDensity::ohmic_debye(0.1, 10.0).unwrap(),
            beta: 1.5,
            delta: 1.0,
            t_grid: TimeGrid::new(0.1, 3).unwrap(),
            quad_tol: 1e-10,
        };
        for tau in [0.01, 0.5, 2.0] {
            let f: f64 = niba_kernel(&spec, tau).unwrap();
            assert!(f.is_finite() && f.abs() <= 1.0);
        }
    }

    #[test]
    fn volterra_constant_kernel() {
        let c: f64 = 2.3;
        let h = 1e-4;
        let n = 20001;
        let y = solve_volterra(&vec![c; n], h);
        let worst = y.iter().enumerate().map(|(k, v)| (v - (c.sqrt() * k as f64 * h).cos()).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-8, "{worst:e}");
        let y = solve_volterra(&vec![0.0; 50], 0.1);
        assert!(y.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn niba_short_time_and_convergence() {
        let short = niba(0.1, 1.5, 0.001, 41);
        let sol = niba_sigma_z(&short).unwrap();
        for (t, z) in sol.t.iter().zip(&sol.sigma_z) {
            assert!((z - (1.0 - t * t / 2.0)).abs() < 0.3 * t.powi(4) + 1e-10, "t={t} z={z}");
        }
        let spec = niba(0.1, 1.5, 0.02, 26);
        let ratio = niba_convergence_ratio(&spec).unwrap();
        assert!((3.5..=4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn free_kernel_is_cosine() {
        let spec = niba(0.0, f64::INFINITY, 0.01, 201);
        let sol = niba_sigma_z(&spec).unwrap();
        for (t, z) in sol.t.iter().zip(&sol.sigma_z) {
            assert!((z - t.cos()).abs() < 2e-5);
        }
    }
}
