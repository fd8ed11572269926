//! Projector-splitting TDVP on the nearest-neighbour chain Hamiltonian.
//!
//! Environments: `left[i]` holds the Hamiltonian of sites `< i` projected on the
//! left block basis (`[bra, ket]`) plus the left factors of the products on
//! bond `(i−1, i)`. `right[i]` holds the same for sites `≥ i`, stored
//! transposed (`[ket, bra]`) so both act by plain matrix products.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::krylov::{expm_apply, KrylovError};
use crate::linalg::{self, gemm, gemm_adj_left, gemm_adj_right, lq, qr, truncated_svd, view, view_mut, SparseOp, SvdFailure, ZERO};
use crate::model::ChainModel;
use crate::mps::{MpsError, MpsState, SiteTensor};
use crate::ops;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    OneSite,
    TwoSite,
    #[default]
    Hybrid,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub krylov_dim: usize,
    pub krylov_tol: f64,
    pub hybrid_switch_time: f64,
    /// Bond-dimension cap applied to states evolved under this configuration.
    pub chi_max: usize,
    /// Discarded-weight threshold for two-site splits.
    pub svd_cutoff: f64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            scheme: Scheme::Hybrid,
            krylov_dim: 30,
            krylov_tol: 1e-12,
            hybrid_switch_time: 1.0,
            chi_max: crate::mps::DEFAULT_MAX_BOND,
            svd_cutoff: crate::mps::DEFAULT_CUTOFF,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), TdvpError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(TdvpError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.krylov_dim < 2 {
            return Err(TdvpError::Config(format!("krylov_dim must be at least 2, got {}", self.krylov_dim)));
        }
        if !(self.krylov_tol > 0.0) {
            return Err(TdvpError::Config(format!("krylov_tol must be positive, got {}", self.krylov_tol)));
        }
        if self.chi_max < 1 {
            return Err(TdvpError::Config("chi_max must be at least 1".into()));
        }
        if !(self.svd_cutoff >= 0.0 && self.svd_cutoff < 1.0) {
            return Err(TdvpError::Config(format!("svd_cutoff must lie in [0, 1), got {}", self.svd_cutoff)));
        }
        if !(self.hybrid_switch_time >= 0.0) {
            return Err(TdvpError::Config(format!("hybrid_switch_time must be non-negative, got {}", self.hybrid_switch_time)));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TdvpError {
    #[error("local exponential at {block}: {source}")]
    Krylov { block: String, source: KrylovError },
    #[error("state dimensions {state:?} do not match the model {model:?}")]
    Layout { state: Vec<usize>, model: Vec<usize> },
    #[error("invalid evolution configuration: {0}")]
    Config(String),
    #[error("non-finite amplitude after updating {0}")]
    NonFinite(String),
    #[error(transparent)]
    Svd(#[from] SvdFailure),
    #[error(transparent)]
    Mps(#[from] MpsError),
}

#[derive(Clone, Debug)]
struct Env {
    dim: usize,
    h: Vec<C64>,
    ops: Vec<Vec<C64>>,
}

impl Env {
    fn boundary() -> Self {
        Self { dim: 1, h: vec![ZERO], ops: Vec::new() }
    }
}

/// Operators of an effective one-site problem (possibly a merged pair).
struct LocalOps<'a> {
    onsite: &'a SparseOp,
    /// Paired with the left environment's `ops`.
    from_left: &'a [SparseOp],
    /// Paired with the right environment's `ops`.
    from_right: &'a [SparseOp],
}

struct Merged {
    onsite: SparseOp,
    from_left: Vec<SparseOp>,
    from_right: Vec<SparseOp>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct StepInfo {
    /// Largest relative weight discarded at any split during the step.
    pub discarded: f64,
    pub max_krylov_dim: usize,
    pub two_site_updates: usize,
    pub one_site_updates: usize,
}

/// Holds the operator tables and cached environments of one evolution.
pub struct Evolver {
    cfg: EvolutionConfig,
    dims: Vec<usize>,
    onsite: Vec<SparseOp>,
    /// `bond_left[i]`: factors on site `i` of the products on bond `(i, i+1)`.
    bond_left: Vec<Vec<SparseOp>>,
    /// `bond_right[i]`: factors on site `i+1`, same order.
    bond_right: Vec<Vec<SparseOp>>,
    merged: Vec<Option<Merged>>,
    left: Vec<Env>,
    right: Vec<Env>,
    valid: bool,
    time: f64,
}

impl Evolver {
    pub fn new(model: &ChainModel, cfg: EvolutionConfig) -> Result<Self, TdvpError> {
        cfg.validate()?;
        let lh = model.local_hamiltonian();
        let n = model.n_sites();
        let onsite = lh.onsite.iter().map(SparseOp::from_dense).collect();
        let bond_left = lh.bonds.iter().map(|b| b.iter().map(|p| SparseOp::from_dense(&p.left)).collect()).collect();
        let bond_right = lh.bonds.iter().map(|b| b.iter().map(|p| SparseOp::from_dense(&p.right)).collect()).collect();
        Ok(Self {
            cfg,
            dims: model.dims().to_vec(),
            onsite,
            bond_left,
            bond_right,
            merged: (0..n.saturating_sub(1)).map(|_| None).collect(),
            left: vec![Env::boundary(); n + 1],
            right: vec![Env::boundary(); n + 1],
            valid: false,
            time: 0.0,
        })
    }

    pub fn config(&self) -> &EvolutionConfig {
        &self.cfg
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn set_time(&mut self, t: f64) {
        self.time = t;
    }

    /// Discards cached environments; call after modifying the state externally.
    pub fn invalidate(&mut self) {
        self.valid = false;
    }

    fn n(&self) -> usize {
        self.dims.len()
    }

    fn ops_for_site(&self, i: usize) -> LocalOps<'_> {
        LocalOps {
            onsite: &self.onsite[i],
            from_left: if i > 0 { &self.bond_right[i - 1] } else { &[] },
            from_right: if i + 1 < self.n() { &self.bond_left[i] } else { &[] },
        }
    }

    fn ensure_merged(&mut self, b: usize) {
        if self.merged[b].is_some() {
            return;
        }
        let (d1, d2) = (self.dims[b], self.dims[b + 1]);
        let (i1, i2) = (SparseOp::identity(d1), SparseOp::identity(d2));
        let mut parts = vec![SparseOp::kron(&self.onsite[b], &i2), SparseOp::kron(&i1, &self.onsite[b + 1])];
        for (l, r) in self.bond_left[b].iter().zip(&self.bond_right[b]) {
            parts.push(SparseOp::kron(l, r));
        }
        let onsite = SparseOp::sum(&parts, d1 * d2);
        let from_left = if b > 0 { self.bond_right[b - 1].iter().map(|o| SparseOp::kron(o, &i2)).collect() } else { Vec::new() };
        let from_right =
            if b + 2 < self.n() { self.bond_left[b + 1].iter().map(|o| SparseOp::kron(&i1, o)).collect() } else { Vec::new() };
        self.merged[b] = Some(Merged { onsite, from_left, from_right });
    }

    fn check_layout(&self, state: &MpsState) -> Result<(), TdvpError> {
        let sd = state.dims();
        if sd != self.dims {
            return Err(TdvpError::Layout { state: sd, model: self.dims.clone() });
        }
        Ok(())
    }

    /// Puts the center at site 0 and rebuilds every right environment.
    pub fn prepare(&mut self, state: &mut MpsState) -> Result<(), TdvpError> {
        self.check_layout(state)?;
        state.canonicalize(0)?;
        let n = self.n();
        self.left[0] = Env::boundary();
        self.right[n] = Env::boundary();
        for i in (1..n).rev() {
            self.right[i] = self.grow_right(i, state.tensor(i));
        }
        self.valid = true;
        Ok(())
    }

    /// Advances the state by one symmetric step `dt`.
    pub fn step(&mut self, state: &mut MpsState) -> Result<StepInfo, TdvpError> {
        if !self.valid || state.center() != Some(0) {
            self.prepare(state)?;
        }
        let mut info = StepInfo::default();
        let h = 0.5 * self.cfg.dt;
        let n = self.n();
        if n == 1 {
            self.evolve_site(state, 0, h * 2.0, &mut info)?;
            self.time += self.cfg.dt;
            return Ok(info);
        }
        self.sweep_right(state, h, &mut info)?;
        self.sweep_left(state, h, &mut info)?;
        self.time += self.cfg.dt;
        Ok(info)
    }

    fn two_site_on(&self, state: &MpsState, bond: usize) -> bool {
        match self.cfg.scheme {
            Scheme::OneSite => false,
            Scheme::TwoSite => true,
            Scheme::Hybrid => {
                if self.time < self.cfg.hybrid_switch_time - 1e-12 {
                    return true;
                }
                let left_cap = self.dims[..=bond].iter().fold(1usize, |a, &d| a.saturating_mul(d));
                let right_cap = self.dims[bond + 1..].iter().fold(1usize, |a, &d| a.saturating_mul(d));
                let cap = state.max_bond.min(left_cap).min(right_cap);
                state.tensor(bond).dr < cap
            }
        }
    }

    fn sweep_right(&mut self, state: &mut MpsState, h: f64, info: &mut StepInfo) -> Result<(), TdvpError> {
        let n = self.n();
        let mut pending = false;
        for i in 0..n {
            if i == n - 1 {
                if !pending {
                    self.evolve_site(state, i, h, info)?;
                }
                break;
            }
            if self.two_site_on(state, i) {
                if pending {
                    self.evolve_site(state, i, -h, info)?;
                }
                self.evolve_pair(state, i, h, true, info)?;
                pending = true;
            } else {
                if !pending {
                    self.evolve_site(state, i, h, info)?;
                }
                let t = state.tensor(i);
                let (dl, d, dr) = (t.dl, t.d, t.dr);
                let (q, r, k) = qr(&t.data, dl * d, dr);
                let a = SiteTensor::new(dl, d, k, q);
                self.left[i + 1] = self.grow_left(i, &a);
                state.set_tensor(i, a, Some(i + 1));
                let r = self.evolve_bond(i, &r, k, dr, -h, info)?;
                let next = state.tensor(i + 1);
                let (d2, dr2) = (next.d, next.dr);
                let mut data = vec![ZERO; k * d2 * dr2];
                gemm(view_mut(&mut data, k, d2 * dr2), false, view(&r, k, dr), view(&next.data, dr, d2 * dr2));
                state.set_tensor(i + 1, SiteTensor::new(k, d2, dr2, data), Some(i + 1));
                pending = false;
            }
        }
        state.set_center(Some(n - 1));
        Ok(())
    }

    fn sweep_left(&mut self, state: &mut MpsState, h: f64, info: &mut StepInfo) -> Result<(), TdvpError> {
        let n = self.n();
        let mut pending = false;
        for i in (0..n).rev() {
            if i == 0 {
                if !pending {
                    self.evolve_site(state, 0, h, info)?;
                }
                break;
            }
            if self.two_site_on(state, i - 1) {
                if pending {
                    self.evolve_site(state, i, -h, info)?;
                }
                self.evolve_pair(state, i - 1, h, false, info)?;
                pending = true;
            } else {
                if !pending {
                    self.evolve_site(state, i, h, info)?;
                }
                let t = state.tensor(i);
                let (dl, d, dr) = (t.dl, t.d, t.dr);
                let (l, q, k) = lq(&t.data, dl, d * dr);
                let b = SiteTensor::new(k, d, dr, q);
                self.right[i] = self.grow_right(i, &b);
                state.set_tensor(i, b, Some(i - 1));
                // bond matrix is dl × k, between sites i−1 and i
                let l = self.evolve_bond(i - 1, &l, dl, k, -h, info)?;
                let prev = state.tensor(i - 1);
                let (dl0, d0) = (prev.dl, prev.d);
                let mut data = vec![ZERO; dl0 * d0 * k];
                gemm(view_mut(&mut data, dl0 * d0, k), false, view(&prev.data, dl0 * d0, dl), view(&l, dl, k));
                state.set_tensor(i - 1, SiteTensor::new(dl0, d0, k, data), Some(i - 1));
                pending = false;
            }
        }
        state.set_center(Some(0));
        Ok(())
    }

    fn evolve_site(&mut self, state: &mut MpsState, i: usize, h: f64, info: &mut StepInfo) -> Result<(), TdvpError> {
        let t = state.tensor(i);
        let (dl, d, dr) = (t.dl, t.d, t.dr);
        let ops = self.ops_for_site(i);
        let (le, re) = (&self.left[i], &self.right[i + 1]);
        let mut scratch = Vec::new();
        let (out, k) = expm_apply(
            |x, y| apply_effective(le, re, &ops, x, y, dl, d, dr, &mut scratch),
            &t.data,
            h,
            self.cfg.krylov_dim,
            self.cfg.krylov_tol,
        )
        .map_err(|source| TdvpError::Krylov { block: format!("site {i}"), source })?;
        if !linalg::is_finite(&out) {
            return Err(TdvpError::NonFinite(format!("site {i}")));
        }
        info.max_krylov_dim = info.max_krylov_dim.max(k.dim);
        info.one_site_updates += 1;
        let c = state.center();
        state.set_tensor(i, SiteTensor::new(dl, d, dr, out), c);
        Ok(())
    }

    /// Evolves the bond matrix between sites `b` and `b+1` (`rows × cols`).
    fn evolve_bond(&self, b: usize, m: &[C64], rows: usize, cols: usize, h: f64, info: &mut StepInfo) -> Result<Vec<C64>, TdvpError> {
        let (le, re) = (&self.left[b + 1], &self.right[b + 1]);
        debug_assert_eq!(le.dim, rows);
        debug_assert_eq!(re.dim, cols);
        let mut tmp = vec![ZERO; rows * cols];
        let (out, k) = expm_apply(
            |x, y| {
                let xv = view(x, rows, cols);
                gemm(view_mut(y, rows, cols), true, view(&le.h, rows, rows), xv);
                gemm(view_mut(y, rows, cols), true, xv, view(&re.h, cols, cols));
                for (lo, ro) in le.ops.iter().zip(&re.ops) {
                    gemm(view_mut(&mut tmp, rows, cols), false, view(lo, rows, rows), xv);
                    gemm(view_mut(y, rows, cols), true, view(&tmp, rows, cols), view(ro, cols, cols));
                }
            },
            m,
            h,
            self.cfg.krylov_dim,
            self.cfg.krylov_tol,
        )
        .map_err(|source| TdvpError::Krylov { block: format!("bond {b}-{}", b + 1), source })?;
        info.max_krylov_dim = info.max_krylov_dim.max(k.dim);
        Ok(out)
    }

    /// Evolves sites `(b, b+1)` jointly and splits the result. With `rightward`
    /// the left tensor becomes left-orthonormal and the center moves to `b+1`;
    /// otherwise the right tensor becomes right-orthonormal and the center is `b`.
    fn evolve_pair(&mut self, state: &mut MpsState, b: usize, h: f64, rightward: bool, info: &mut StepInfo) -> Result<(), TdvpError> {
        self.ensure_merged(b);
        let (t1, t2) = (state.tensor(b), state.tensor(b + 1));
        let (dl, d1, k0) = (t1.dl, t1.d, t1.dr);
        let (d2, dr) = (t2.d, t2.dr);
        let mut theta = vec![ZERO; dl * d1 * d2 * dr];
        gemm(view_mut(&mut theta, dl * d1, d2 * dr), false, view(&t1.data, dl * d1, k0), view(&t2.data, k0, d2 * dr));
        let merged = self.merged[b].as_ref().expect("merged operators");
        let ops = LocalOps { onsite: &merged.onsite, from_left: &merged.from_left, from_right: &merged.from_right };
        let (le, re) = (&self.left[b], &self.right[b + 2]);
        let d = d1 * d2;
        let mut scratch = Vec::new();
        let (out, k) = expm_apply(
            |x, y| apply_effective(le, re, &ops, x, y, dl, d, dr, &mut scratch),
            &theta,
            h,
            self.cfg.krylov_dim,
            self.cfg.krylov_tol,
        )
        .map_err(|source| TdvpError::Krylov { block: format!("sites {b}-{}", b + 1), source })?;
        if !linalg::is_finite(&out) {
            return Err(TdvpError::NonFinite(format!("sites {b}-{}", b + 1)));
        }
        info.max_krylov_dim = info.max_krylov_dim.max(k.dim);
        info.two_site_updates += 1;

        let svd = truncated_svd(&out, dl * d1, d2 * dr, state.max_bond, state.svd_cutoff)?;
        info.discarded = info.discarded.max(svd.discarded);
        let kept = svd.kept;
        let norm_all = linalg::norm(&out);
        let norm_kept: f64 = svd.s.iter().map(|s| s * s).sum::<f64>().sqrt();
        let renorm = if norm_kept > 0.0 { norm_all / norm_kept } else { 1.0 };
        if rightward {
            let a = SiteTensor::new(dl, d1, kept, svd.u);
            let mut sv = svd.vh;
            for c in 0..d2 * dr {
                for r in 0..kept {
                    sv[r + kept * c] *= svd.s[r] * renorm;
                }
            }
            self.left[b + 1] = self.grow_left(b, &a);
            state.set_tensor(b, a, Some(b + 1));
            state.set_tensor(b + 1, SiteTensor::new(kept, d2, dr, sv), Some(b + 1));
        } else {
            let bt = SiteTensor::new(kept, d2, dr, svd.vh);
            let mut us = svd.u;
            for c in 0..kept {
                for r in 0..dl * d1 {
                    us[r + dl * d1 * c] *= svd.s[c] * renorm;
                }
            }
            self.right[b + 1] = self.grow_right(b + 1, &bt);
            state.set_tensor(b + 1, bt, Some(b));
            state.set_tensor(b, SiteTensor::new(dl, d1, kept, us), Some(b));
        }
        Ok(())
    }

    /// `left[i+1]` from `left[i]` and the left-orthonormal tensor at site `i`.
    fn grow_left(&self, i: usize, a: &SiteTensor) -> Env {
        let le = &self.left[i];
        let (dl, d, dr) = (a.dl, a.d, a.dr);
        let ops = self.ops_for_site(i);
        let mut y = vec![ZERO; dl * d * dr];
        let mut tmp = vec![ZERO; dl * d * dr];
        gemm(view_mut(&mut y, dl, d * dr), false, view(&le.h, dl, dl), view(&a.data, dl, d * dr));
        ops.onsite.apply_add(&a.data, &mut y, dl, dr);
        for (e, o) in le.ops.iter().zip(ops.from_left) {
            gemm(view_mut(&mut tmp, dl, d * dr), false, view(e, dl, dl), view(&a.data, dl, d * dr));
            o.apply_add(&tmp, &mut y, dl, dr);
        }
        let mut h = vec![ZERO; dr * dr];
        gemm_adj_left(view_mut(&mut h, dr, dr), false, view(&a.data, dl * d, dr), view(&y, dl * d, dr));
        let ops_out = ops
            .from_right
            .iter()
            .map(|o| {
                tmp.iter_mut().for_each(|z| *z = ZERO);
                o.apply_add(&a.data, &mut tmp, dl, dr);
                let mut m = vec![ZERO; dr * dr];
                gemm_adj_left(view_mut(&mut m, dr, dr), false, view(&a.data, dl * d, dr), view(&tmp, dl * d, dr));
                m
            })
            .collect();
        Env { dim: dr, h, ops: ops_out }
    }

    /// `right[i]` from `right[i+1]` and the right-orthonormal tensor at site `i`.
    fn grow_right(&self, i: usize, b: &SiteTensor) -> Env {
        let re = &self.right[i + 1];
        let (dl, d, dr) = (b.dl, b.d, b.dr);
        let ops = self.ops_for_site(i);
        let mut y = vec![ZERO; dl * d * dr];
        let mut tmp = vec![ZERO; dl * d * dr];
        gemm(view_mut(&mut y, dl * d, dr), false, view(&b.data, dl * d, dr), view(&re.h, dr, dr));
        ops.onsite.apply_add(&b.data, &mut y, dl, dr);
        for (e, o) in re.ops.iter().zip(ops.from_right) {
            gemm(view_mut(&mut tmp, dl * d, dr), false, view(&b.data, dl * d, dr), view(e, dr, dr));
            o.apply_add(&tmp, &mut y, dl, dr);
        }
        let mut h = vec![ZERO; dl * dl];
        gemm_adj_right(view_mut(&mut h, dl, dl), false, view(&y, dl, d * dr), view(&b.data, dl, d * dr));
        let ops_out = ops
            .from_left
            .iter()
            .map(|o| {
                tmp.iter_mut().for_each(|z| *z = ZERO);
                o.apply_add(&b.data, &mut tmp, dl, dr);
                let mut m = vec![ZERO; dl * dl];
                gemm_adj_right(view_mut(&mut m, dl, dl), false, view(&tmp, dl, d * dr), view(&b.data, dl, d * dr));
                m
            })
            .collect();
        Env { dim: dl, h, ops: ops_out }
    }

    /// Evolves for `duration`, using `round(duration / dt)` steps with the step
    /// adjusted to divide the interval exactly. `sample_every = k` records
    /// observables every k-th step (and always at the end).
    pub fn evolve_interval(
        &mut self,
        state: &mut MpsState,
        model: &ChainModel,
        duration: f64,
        sample_every: usize,
    ) -> Result<Trajectory, TdvpError> {
        if !(duration >= 0.0) {
            return Err(TdvpError::Config(format!("duration must be non-negative, got {duration}")));
        }
        let mut traj = Trajectory::default();
        if duration == 0.0 {
            return Ok(traj);
        }
        let steps = ((duration / self.cfg.dt).round() as usize).max(1);
        let saved = self.cfg.dt;
        self.cfg.dt = duration / steps as f64;
        let start = self.time;
        let every = sample_every.max(1);
        let result = (|| {
            for k in 1..=steps {
                let info = self.step(state)?;
                if k % every == 0 || k == steps {
                    traj.push(self.time - start, state, model, info)?;
                }
            }
            Ok(())
        })();
        self.cfg.dt = saved;
        result.map(|_| traj)
    }
}

#[allow(clippy::too_many_arguments)]
fn apply_effective(le: &Env, re: &Env, ops: &LocalOps<'_>, x: &[C64], y: &mut [C64], dl: usize, d: usize, dr: usize, scratch: &mut Vec<C64>) {
    let len = dl * d * dr;
    scratch.resize(len, ZERO);
    gemm(view_mut(y, dl, d * dr), true, view(&le.h, dl, dl), view(x, dl, d * dr));
    gemm(view_mut(y, dl * d, dr), true, view(x, dl * d, dr), view(&re.h, dr, dr));
    ops.onsite.apply_add(x, y, dl, dr);
    for (e, o) in le.ops.iter().zip(ops.from_left) {
        gemm(view_mut(scratch, dl, d * dr), false, view(e, dl, dl), view(x, dl, d * dr));
        o.apply_add(scratch, y, dl, dr);
    }
    for (e, o) in re.ops.iter().zip(ops.from_right) {
        gemm(view_mut(scratch, dl * d, dr), false, view(x, dl * d, dr), view(e, dr, dr));
        o.apply_add(scratch, y, dl, dr);
    }
}

/// `⟨ψ|H|ψ⟩ / ⟨ψ|ψ⟩`, contracted with the same environment machinery.
pub fn energy(state: &MpsState, model: &ChainModel) -> Result<f64, TdvpError> {
    let mut s = state.clone();
    let n = s.n_sites();
    s.canonicalize(n - 1)?;
    let mut ev = Evolver::new(model, EvolutionConfig::default())?;
    ev.check_layout(&s)?;
    let mut left = Env::boundary();
    for i in 0..n - 1 {
        ev.left[i] = left;
        left = ev.grow_left(i, s.tensor(i));
    }
    let t = s.tensor(n - 1);
    let ops = ev.ops_for_site(n - 1);
    let mut y = vec![ZERO; t.data.len()];
    let mut scratch = Vec::new();
    apply_effective(&left, &Env::boundary(), &ops, &t.data, &mut y, t.dl, t.d, t.dr, &mut scratch);
    Ok(linalg::dot(&t.data, &y).re / linalg::norm_sqr(&t.data))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub sigma_z: Vec<f64>,
    pub norm: Vec<f64>,
    pub max_bond: Vec<usize>,
    pub discarded: Vec<f64>,
}

impl Trajectory {
    fn push(&mut self, t: f64, state: &MpsState, model: &ChainModel, info: StepInfo) -> Result<(), TdvpError> {
        self.t.push(t);
        self.sigma_z.push(state.expectation_real(&ops::sigma_z(), model.system_site())?);
        self.norm.push(state.norm());
        self.max_bond.push(state.max_bond_dim());
        self.discarded.push(info.discarded);
        Ok(())
    }
}

/// `⟨n_k⟩` on every chain site in layout order (system site reported as 0).
pub fn chain_occupations(state: &MpsState, model: &ChainModel) -> Result<Vec<f64>, TdvpError> {
    let sys = model.system_site();
    let mut out = Vec::with_capacity(state.n_sites());
    for (i, &d) in model.dims().iter().enumerate() {
        out.push(if i == sys { 0.0 } else { state.expectation_real(&ops::number(d), i)? });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{assemble_dense, build, BosonDims, ChainParams, SystemSpec};
    use crate::spectral::SpectralDensity;
    use faer::{Mat, Side};

    fn model(alpha: f64, delta: f64, beta: f64, n: usize, d: usize) -> ChainModel {
        let j = SpectralDensity::one_over_f(alpha, 0.1, 10.0).unwrap();
        build(SystemSpec::new(delta).unwrap(), &j, beta, &ChainParams::new(4 * n.max(10), n), &BosonDims::uniform(n, n, d)).unwrap()
    }

    fn dense_sigma_z(m: &ChainModel, times: &[f64]) -> Vec<f64> {
        let h = assemble_dense(&m.nearest_neighbor_terms(), m.dims());
        let dim = h.nrows();
        let eig = h.self_adjoint_eigen(Side::Lower).unwrap();
        let (u, e) = (eig.U(), eig.S().column_vector());
        let psi0 = MpsState::initial_state(m).to_dense();
        let stride: usize = m.dims()[..m.system_site()].iter().product();
        let coef: Vec<C64> = (0..dim).map(|k| (0..dim).map(|i| u[(i, k)].conj() * psi0[i]).sum()).collect();
        times
            .iter()
            .map(|&t| {
                let mut psi = vec![ZERO; dim];
                for k in 0..dim {
                    let c = coef[k] * C64::from_polar(1.0, -t * e[k].re);
                    for i in 0..dim {
                        psi[i] += u[(i, k)] * c;
                    }
                }
                psi.iter().enumerate().map(|(i, a)| if (i / stride).is_multiple_of(2) { a.norm_sqr() } else { -a.norm_sqr() }).sum()
            })
            .collect()
    }

    #[test]
    fn free_qubit_precesses() {
        let m = model(0.0, 1.0, f64::INFINITY, 2, 3);
        for scheme in [Scheme::OneSite, Scheme::TwoSite, Scheme::Hybrid] {
            let cfg = EvolutionConfig { scheme, ..Default::default() };
            let mut ev = Evolver::new(&m, cfg).unwrap();
            let mut s = MpsState::initial_state(&m);
            let tr = ev.evolve_interval(&mut s, &m, 2.0, 10).unwrap();
            for (t, z) in tr.t.iter().zip(&tr.sigma_z) {
                assert!((z - t.cos()).abs() < 1e-10, "{scheme:?} t={t} z={z}");
            }
        }
    }

    #[test]
    fn sigma_z_conserved_without_tunnelling() {
        let m = model(0.8, 0.0, 1.0, 2, 3);
        let mut ev = Evolver::new(&m, EvolutionConfig { scheme: Scheme::TwoSite, ..Default::default() }).unwrap();
        let mut s = MpsState::initial_state(&m);
        let tr = ev.evolve_interval(&mut s, &m, 1.0, 10).unwrap();
        assert!(tr.sigma_z.iter().all(|z| (z - 1.0).abs() < 1e-10));
    }

    #[test]
    fn small_instances_match_dense_propagation() {
        for (beta, n, d) in [(f64::INFINITY, 3, 4), (1.5, 2, 3)] {
            let m = model(0.5, 1.0, beta, n, d);
            let mut ev = Evolver::new(&m, EvolutionConfig { scheme: Scheme::TwoSite, dt: 0.02, ..Default::default() }).unwrap();
            let mut s = MpsState::initial_state(&m).with_limits(10_000, 0.0);
            let tr = ev.evolve_interval(&mut s, &m, 2.0, 5).unwrap();
            let want = dense_sigma_z(&m, &tr.t);
            let err = tr.sigma_z.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-8, "beta={beta}: max deviation {err}");
        }
    }

    #[test]
    fn one_site_conserves_norm_and_energy() {
        let m = model(0.5, 1.0, f64::INFINITY, 4, 4);
        let mut s = MpsState::initial_state(&m).with_limits(6, 0.0);
        s.expand_bonds(6).unwrap();
        let e0 = energy(&s, &m).unwrap();
        let mut ev = Evolver::new(&m, EvolutionConfig { scheme: Scheme::OneSite, dt: 0.05, ..Default::default() }).unwrap();
        let tr = ev.evolve_interval(&mut s, &m, 2.0, 1).unwrap();
        assert!(tr.norm.iter().all(|n| (n - 1.0).abs() < 1e-10));
        let e1 = energy(&s, &m).unwrap();
        assert!((e1 - e0).abs() < 1e-8 * e0.abs().max(1.0), "{e0} -> {e1}");
        // energy of the product state: only the free system term vanishes, chain in vacuum
        assert!(e0.abs() < 1e-12);
    }

    #[test]
    fn interval_composition() {
        let m = model(0.5, 1.0, f64::INFINITY, 3, 3);
        let cfg = EvolutionConfig { scheme: Scheme::OneSite, dt: 0.05, ..Default::default() };
        let mut a = MpsState::initial_state(&m).with_limits(8, 0.0);
        a.expand_bonds(8).unwrap();
        let mut b = a.clone();
        let mut ea = Evolver::new(&m, cfg).unwrap();
        ea.evolve_interval(&mut a, &m, 1.0, 100).unwrap();
        let mut eb = Evolver::new(&m, cfg).unwrap();
        eb.evolve_interval(&mut b, &m, 0.5, 100).unwrap();
        eb.evolve_interval(&mut b, &m, 0.5, 100).unwrap();
        assert!(a.overlap(&b).norm() >= 1.0 - 1e-10);
        let before = a.to_dense();
        ea.evolve_interval(&mut a, &m, 0.0, 1).unwrap();
        assert_eq!(a.to_dense(), before);
    }

    #[test]
    fn energy_matches_dense_expectation() {
        let m = model(0.7, 1.3, 2.0, 2, 3);
        let mut s = MpsState::initial_state(&m).with_limits(100, 0.0);
        let mut ev = Evolver::new(&m, EvolutionConfig { scheme: Scheme::TwoSite, ..Default::default() }).unwrap();
        ev.evolve_interval(&mut s, &m, 0.3, 100).unwrap();
        let h = assemble_dense(&m.nearest_neighbor_terms(), m.dims());
        let psi = s.to_dense();
        let hpsi = &h * Mat::from_fn(psi.len(), 1, |i, _| psi[i]);
        let e: C64 = (0..psi.len()).map(|i| psi[i].conj() * hpsi[(i, 0)]).sum();
        assert!((energy(&s, &m).unwrap() - e.re / linalg::norm_sqr(&psi)).abs() < 1e-12);
    }
}
