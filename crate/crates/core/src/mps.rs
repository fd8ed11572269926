//! Open-boundary matrix product states.
//!
//! Site tensors are stored column-major with index order `(l, s, r)`, `l`
//! fastest, so a tensor is at the same time a `(dl·d) × dr` left matrix and a
//! `dl × (d·dr)` right matrix without copying. Dense state vectors put site 0
//! on the fastest index.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use faer::Mat;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, gemm, gemm_adj_left, lq, qr, truncated_svd, view, view_mut, SvdFailure, ONE, ZERO};
use crate::model::ChainModel;

pub const DEFAULT_MAX_BOND: usize = 64;
pub const DEFAULT_CUTOFF: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum MpsError {
    #[error("canonical center {center} out of range for {sites} sites")]
    CenterOutOfRange { center: usize, sites: usize },
    #[error("site {site}: operator dimension {got} does not match local dimension {expected}")]
    DimensionMismatch { site: usize, expected: usize, got: usize },
    #[error("bond {bond}: right dimension {left} of site {bond} differs from left dimension {right} of the next site")]
    BondMismatch { bond: usize, left: usize, right: usize },
    #[error("boundary bonds must have dimension 1")]
    Boundary,
    #[error("an MPS needs at least one site")]
    Empty,
    #[error(transparent)]
    Svd(#[from] SvdFailure),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SiteTensor {
    pub dl: usize,
    pub d: usize,
    pub dr: usize,
    pub data: Vec<C64>,
}

impl SiteTensor {
    pub fn new(dl: usize, d: usize, dr: usize, data: Vec<C64>) -> Self {
        assert_eq!(data.len(), dl * d * dr, "tensor data length");
        Self { dl, d, dr, data }
    }

    pub fn zeros(dl: usize, d: usize, dr: usize) -> Self {
        Self::new(dl, d, dr, vec![ZERO; dl * d * dr])
    }

    #[inline]
    pub fn get(&self, l: usize, s: usize, r: usize) -> C64 {
        self.data[l + self.dl * (s + self.d * r)]
    }

    /// Applies a local operator to the physical index.
    pub fn apply(&self, op: &Mat<C64>) -> SiteTensor {
        let mut out = SiteTensor::zeros(self.dl, self.d, self.dr);
        linalg::SparseOp::from_dense(op).apply_add(&self.data, &mut out.data, self.dl, self.dr);
        out
    }
}

#[derive(Clone, Debug)]
pub struct MpsState {
    tensors: Vec<SiteTensor>,
    center: Option<usize>,
    pub max_bond: usize,
    pub svd_cutoff: f64,
}

impl MpsState {
    pub fn from_tensors(tensors: Vec<SiteTensor>) -> Result<Self, MpsError> {
        if tensors.is_empty() {
            return Err(MpsError::Empty);
        }
        if tensors[0].dl != 1 || tensors[tensors.len() - 1].dr != 1 {
            return Err(MpsError::Boundary);
        }
        for (b, w) in tensors.windows(2).enumerate() {
            if w[0].dr != w[1].dl {
                return Err(MpsError::BondMismatch { bond: b, left: w[0].dr, right: w[1].dl });
            }
        }
        Ok(Self { tensors, center: None, max_bond: DEFAULT_MAX_BOND, svd_cutoff: DEFAULT_CUTOFF })
    }

    /// Product state from normalized local vectors.
    pub fn product(locals: &[Vec<C64>]) -> Result<Self, MpsError> {
        let tensors = locals
            .iter()
            .map(|v| {
                let n = linalg::norm(v);
                let data = v.iter().map(|z| z / n).collect();
                SiteTensor::new(1, v.len(), 1, data)
            })
            .collect();
        let mut s = Self::from_tensors(tensors)?;
        s.center = Some(0);
        Ok(s)
    }

    /// System in `|e⟩`, every chain site in its vacuum.
    pub fn initial_state(model: &ChainModel) -> Self {
        let sys = model.system_site();
        let locals: Vec<Vec<C64>> = model
            .dims()
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                if i == sys {
                    model.system.initial_amplitudes().to_vec()
                } else {
                    let mut v = vec![ZERO; d];
                    v[0] = ONE;
                    v
                }
            })
            .collect();
        Self::product(&locals).expect("valid product state")
    }

    pub fn with_limits(mut self, max_bond: usize, svd_cutoff: f64) -> Self {
        self.max_bond = max_bond;
        self.svd_cutoff = svd_cutoff;
        self
    }

    /// Exact MPS of a dense vector (site 0 fastest) by successive SVDs.
    pub fn from_dense(psi: &[C64], dims: &[usize]) -> Result<Self, MpsError> {
        if dims.is_empty() {
            return Err(MpsError::Empty);
        }
        assert_eq!(psi.len(), dims.iter().product::<usize>(), "dense vector length");
        let mut tensors = Vec::with_capacity(dims.len());
        let mut rest = psi.to_vec();
        let mut dl = 1;
        for (i, &d) in dims.iter().enumerate() {
            if i + 1 == dims.len() {
                tensors.push(SiteTensor::new(dl, d, 1, rest.clone()));
                break;
            }
            let rows = dl * d;
            let cols = rest.len() / rows;
            let t = truncated_svd(&rest, rows, cols, usize::MAX, 0.0)?;
            let k = t.kept;
            tensors.push(SiteTensor::new(dl, d, k, t.u));
            let mut next = t.vh;
            for c in 0..cols {
                for r in 0..k {
                    next[r + k * c] *= t.s[r];
                }
            }
            rest = next;
            dl = k;
        }
        let mut s = Self::from_tensors(tensors)?;
        s.center = Some(dims.len() - 1);
        Ok(s)
    }

    pub fn n_sites(&self) -> usize {
        self.tensors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.tensors.iter().map(|t| t.d).collect()
    }

    /// Dimensions of the `n_sites − 1` internal bonds.
    pub fn bond_dims(&self) -> Vec<usize> {
        self.tensors[..self.tensors.len() - 1].iter().map(|t| t.dr).collect()
    }

    pub fn max_bond_dim(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    pub fn center(&self) -> Option<usize> {
        self.center
    }

    pub fn tensors(&self) -> &[SiteTensor] {
        &self.tensors
    }

    pub fn tensor(&self, i: usize) -> &SiteTensor {
        &self.tensors[i]
    }

    /// Replaces a tensor; the caller states the resulting canonical center.
    pub fn set_tensor(&mut self, i: usize, t: SiteTensor, center: Option<usize>) {
        self.tensors[i] = t;
        self.center = center;
    }

    pub(crate) fn set_center(&mut self, c: Option<usize>) {
        self.center = c;
    }

    /// Moves orthogonality from site `i` to `i + 1` by a QR step.
    pub fn shift_right(&mut self, i: usize) {
        let t = &self.tensors[i];
        let (dl, d, dr) = (t.dl, t.d, t.dr);
        let (q, r, k) = qr(&t.data, dl * d, dr);
        self.tensors[i] = SiteTensor::new(dl, d, k, q);
        let next = &self.tensors[i + 1];
        let (d2, dr2) = (next.d, next.dr);
        let mut data = vec![ZERO; k * d2 * dr2];
        gemm(view_mut(&mut data, k, d2 * dr2), false, view(&r, k, dr), view(&next.data, dr, d2 * dr2));
        self.tensors[i + 1] = SiteTensor::new(k, d2, dr2, data);
        if self.center.is_some() {
            self.center = Some(i + 1);
        }
    }

    /// Moves orthogonality from site `i` to `i − 1` by an LQ step.
    pub fn shift_left(&mut self, i: usize) {
        let t = &self.tensors[i];
        let (dl, d, dr) = (t.dl, t.d, t.dr);
        let (l, q, k) = lq(&t.data, dl, d * dr);
        self.tensors[i] = SiteTensor::new(k, d, dr, q);
        let prev = &self.tensors[i - 1];
        let (dl0, d0) = (prev.dl, prev.d);
        let mut data = vec![ZERO; dl0 * d0 * k];
        gemm(view_mut(&mut data, dl0 * d0, k), false, view(&prev.data, dl0 * d0, dl), view(&l, dl, k));
        self.tensors[i - 1] = SiteTensor::new(dl0, d0, k, data);
        if self.center.is_some() {
            self.center = Some(i - 1);
        }
    }

    /// Brings the state into mixed-canonical form around `center`.
    pub fn canonicalize(&mut self, center: usize) -> Result<(), MpsError> {
        let n = self.n_sites();
        if center >= n {
            return Err(MpsError::CenterOutOfRange { center, sites: n });
        }
        match self.center {
            Some(c) => {
                for i in c..center {
                    self.shift_right(i);
                }
                for i in (center + 1..=c).rev() {
                    self.shift_left(i);
                }
            }
            None => {
                self.center = Some(0);
                for i in 0..center {
                    self.shift_right(i);
                }
                for i in (center + 1..n).rev() {
                    self.shift_left(i);
                }
            }
        }
        self.center = Some(center);
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        match self.center {
            Some(c) => linalg::norm(&self.tensors[c].data),
            None => self.overlap(self).re.max(0.0).sqrt(),
        }
    }

    pub fn normalize(&mut self) -> f64 {
        let n = self.norm();
        if n > 0.0 {
            self.scale(C64::new(1.0 / n, 0.0));
        }
        n
    }

    /// Multiplies the state by `c` (acting on the canonical center).
    pub fn scale(&mut self, c: C64) {
        let i = self.center.unwrap_or(0);
        linalg::scale(&mut self.tensors[i].data, c);
    }

    /// `⟨self|other⟩` by transfer-matrix contraction.
    pub fn overlap(&self, other: &MpsState) -> C64 {
        assert_eq!(self.dims(), other.dims(), "overlap of states with different local dimensions");
        let mut env = vec![ONE];
        let (mut eb, mut ek) = (1usize, 1usize);
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            let d = a.d;
            let mut t = vec![ZERO; eb * d * b.dr];
            gemm(view_mut(&mut t, eb, d * b.dr), false, view(&env, eb, ek), view(&b.data, ek, d * b.dr));
            let mut next = vec![ZERO; a.dr * b.dr];
            gemm_adj_left(view_mut(&mut next, a.dr, b.dr), false, view(&a.data, a.dl * d, a.dr), view(&t, eb * d, b.dr));
            env = next;
            eb = a.dr;
            ek = b.dr;
        }
        env[0]
    }

    /// `⟨O_site⟩ / ⟨ψ|ψ⟩` (complex in general).
    pub fn expectation(&self, op: &Mat<C64>, site: usize) -> Result<C64, MpsError> {
        let n = self.n_sites();
        if site >= n {
            return Err(MpsError::CenterOutOfRange { center: site, sites: n });
        }
        let d = self.tensors[site].d;
        if op.nrows() != d || op.ncols() != d {
            return Err(MpsError::DimensionMismatch { site, expected: d, got: op.nrows() });
        }
        let (lo, hi) = match self.center {
            Some(c) => (c.min(site), c.max(site)),
            None => (0, n - 1),
        };
        let opsp = linalg::SparseOp::from_dense(op);
        let num = self.contract_window(lo, hi, Some((site, &opsp)));
        let den = self.contract_window(lo, hi, None);
        Ok(num / den)
    }

    /// Real part of a Hermitian expectation value; a large imaginary part is logged.
    pub fn expectation_real(&self, op: &Mat<C64>, site: usize) -> Result<f64, MpsError> {
        let v = self.expectation(op, site)?;
        if v.im.abs() > 1e-12 {
            log::debug!("imaginary part {:e} in expectation at site {site}", v.im);
        }
        Ok(v.re)
    }

    /// Contracts sites `lo..=hi` with identity boundaries; valid when the
    /// tensors outside the window are orthonormal towards it.
    fn contract_window(&self, lo: usize, hi: usize, op: Option<(usize, &linalg::SparseOp)>) -> C64 {
        let dl = self.tensors[lo].dl;
        let mut env = vec![ZERO; dl * dl];
        for i in 0..dl {
            env[i + dl * i] = ONE;
        }
        let mut dim = dl;
        for i in lo..=hi {
            let a = &self.tensors[i];
            let ket = match op {
                Some((s, o)) if s == i => {
                    let mut y = vec![ZERO; a.data.len()];
                    o.apply_add(&a.data, &mut y, a.dl, a.dr);
                    y
                }
                _ => a.data.clone(),
            };
            let mut t = vec![ZERO; dim * a.d * a.dr];
            gemm(view_mut(&mut t, dim, a.d * a.dr), false, view(&env, dim, dim), view(&ket, a.dl, a.d * a.dr));
            let mut next = vec![ZERO; a.dr * a.dr];
            gemm_adj_left(view_mut(&mut next, a.dr, a.dr), false, view(&a.data, a.dl * a.d, a.dr), view(&t, dim * a.d, a.dr));
            env = next;
            dim = a.dr;
        }
        (0..dim).map(|i| env[i + dim * i]).sum()
    }

    /// Applies a one-site operator in place, leaving the center at `site`.
    pub fn apply_local(&mut self, op: &Mat<C64>, site: usize) -> Result<(), MpsError> {
        let d = self.tensors.get(site).ok_or(MpsError::CenterOutOfRange { center: site, sites: self.n_sites() })?.d;
        if op.nrows() != d || op.ncols() != d {
            return Err(MpsError::DimensionMismatch { site, expected: d, got: op.nrows() });
        }
        self.canonicalize(site)?;
        self.tensors[site] = self.tensors[site].apply(op);
        Ok(())
    }

    /// Dense state vector, site 0 fastest.
    pub fn to_dense(&self) -> Vec<C64> {
        let first = &self.tensors[0];
        let mut psi = first.data.clone();
        let mut rows = first.d;
        let mut k = first.dr;
        for t in &self.tensors[1..] {
            let mut next = vec![ZERO; rows * t.d * t.dr];
            gemm(view_mut(&mut next, rows, t.d * t.dr), false, view(&psi, rows, k), view(&t.data, k, t.d * t.dr));
            psi = next;
            rows *= t.d;
            k = t.dr;
        }
        psi
    }

    /// Compresses every bond to at most `chi_max` values, dropping the
    /// largest tail with relative weight `≤ cutoff`. Returns the maximum
    /// discarded weight over bonds; the state is renormalized and left with
    /// its center at site 0.
    pub fn truncate(&mut self, chi_max: usize, cutoff: f64) -> Result<f64, MpsError> {
        let n = self.n_sites();
        self.canonicalize(n - 1)?;
        let mut worst = 0.0f64;
        for i in (1..n).rev() {
            let t = &self.tensors[i];
            let (dl, d, dr) = (t.dl, t.d, t.dr);
            let svd = truncated_svd(&t.data, dl, d * dr, chi_max, cutoff)?;
            worst = worst.max(svd.discarded);
            let k = svd.kept;
            self.tensors[i] = SiteTensor::new(k, d, dr, svd.vh);
            let mut us = svd.u;
            for c in 0..k {
                for r in 0..dl {
                    us[r + dl * c] *= svd.s[c];
                }
            }
            let prev = &self.tensors[i - 1];
            let (dl0, d0) = (prev.dl, prev.d);
            let mut data = vec![ZERO; dl0 * d0 * k];
            gemm(view_mut(&mut data, dl0 * d0, k), false, view(&prev.data, dl0 * d0, dl), view(&us, dl, k));
            self.tensors[i - 1] = SiteTensor::new(dl0, d0, k, data);
        }
        self.center = Some(0);
        self.normalize();
        Ok(worst)
    }

    /// Pads every bond towards `target` (capped by the largest possible rank)
    /// with directions of zero weight, leaving the represented vector
    /// unchanged. Lets one-site evolution explore a larger manifold.
    pub fn expand_bonds(&mut self, target: usize) -> Result<(), MpsError> {
        let n = self.n_sites();
        let dims = self.dims();
        self.canonicalize(n - 1)?;
        for i in 0..n - 1 {
            let right_cap = dims[i + 1..].iter().fold(1usize, |acc, &d| acc.saturating_mul(d));
            let t = &self.tensors[i];
            let (dl, d, dr) = (t.dl, t.d, t.dr);
            let want = target.min(dl * d).min(right_cap);
            if want <= dr {
                continue;
            }
            let extra = linalg::orthonormal_complement(&t.data, dl * d, dr, want);
            let added = extra.len() / (dl * d);
            if added == 0 {
                continue;
            }
            let mut data = t.data.clone();
            data.extend_from_slice(&extra);
            self.tensors[i] = SiteTensor::new(dl, d, dr + added, data);
            let next = &self.tensors[i + 1];
            let (d2, dr2) = (next.d, next.dr);
            let new_dl = dr + added;
            let mut padded = vec![ZERO; new_dl * d2 * dr2];
            for c in 0..d2 * dr2 {
                padded[c * new_dl..c * new_dl + dr].copy_from_slice(&next.data[c * dr..(c + 1) * dr]);
            }
            self.tensors[i + 1] = SiteTensor::new(new_dl, d2, dr2, padded);
        }
        self.center = Some(n - 1);
        self.canonicalize(0)
    }

    /// Writes `manifest.json` plus one little-endian `site_XXXX.bin` per tensor.
    pub fn write_checkpoint(&self, dir: &Path, config_hash: &str) -> Result<(), MpsError> {
        fs::create_dir_all(dir)?;
        let manifest = CheckpointManifest {
            sites: self.n_sites(),
            dims: self.dims(),
            bonds: self.bond_dims(),
            center: self.center,
            max_bond: self.max_bond,
            svd_cutoff: self.svd_cutoff,
            config_hash: config_hash.to_string(),
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| MpsError::Checkpoint(e.to_string()))?;
        fs::write(dir.join("manifest.json"), json)?;
        for (i, t) in self.tensors.iter().enumerate() {
            let mut bytes = Vec::with_capacity(t.data.len() * 16);
            for z in &t.data {
                bytes.extend_from_slice(&z.re.to_le_bytes());
                bytes.extend_from_slice(&z.im.to_le_bytes());
            }
            let mut f = fs::File::create(dir.join(format!("site_{i:04}.bin")))?;
            f.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn read_checkpoint(dir: &Path) -> Result<(Self, CheckpointManifest), MpsError> {
        let text = fs::read_to_string(dir.join("manifest.json"))?;
        let m: CheckpointManifest = serde_json::from_str(&text).map_err(|e| MpsError::Checkpoint(e.to_string()))?;
        if m.dims.len() != m.sites || m.bonds.len() + 1 != m.sites {
            return Err(MpsError::Checkpoint("inconsistent manifest".into()));
        }
        let mut tensors = Vec::with_capacity(m.sites);
        for i in 0..m.sites {
            let dl = if i == 0 { 1 } else { m.bonds[i - 1] };
            let dr = if i + 1 == m.sites { 1 } else { m.bonds[i] };
            let mut bytes = Vec::new();
            fs::File::open(dir.join(format!("site_{i:04}.bin")))?.read_to_end(&mut bytes)?;
            let len = dl * m.dims[i] * dr;
            if bytes.len() != len * 16 {
                return Err(MpsError::Checkpoint(format!("site {i}: expected {} bytes, found {}", len * 16, bytes.len())));
            }
            let data = bytes
                .chunks_exact(16)
                .map(|c| {
                    let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
                    let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
                    C64::new(re, im)
                })
                .collect();
            tensors.push(SiteTensor::new(dl, m.dims[i], dr, data));
        }
        let mut s = Self::from_tensors(tensors)?;
        s.center = m.center;
        s.max_bond = m.max_bond;
        s.svd_cutoff = m.svd_cutoff;
        Ok((s, m))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub sites: usize,
    pub dims: Vec<usize>,
    pub bonds: Vec<usize>,
    pub center: Option<usize>,
    pub max_bond: usize,
    pub svd_cutoff: f64,
    pub config_hash: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_state(dims: &[usize], bond: usize, seed: u64) -> MpsState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims.len();
        let mut tensors = Vec::with_capacity(n);
        let mut dl = 1;
        for (i, &d) in dims.iter().enumerate() {
            let dr = if i + 1 == n { 1 } else { bond };
            let data = (0..dl * d * dr).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            tensors.push(SiteTensor::new(dl, d, dr, data));
            dl = dr;
        }
        MpsState::from_tensors(tensors).unwrap()
    }

    fn diff(a: &[C64], b: &[C64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    fn dense_norm(v: &[C64]) -> f64 {
        linalg::norm(v)
    }

    fn dense_expectation(v: &[C64], dims: &[usize], op: &Mat<C64>, site: usize) -> C64 {
        let stride: usize = dims[..site].iter().product();
        let d = dims[site];
        let mut num = ZERO;
        for (idx, amp) in v.iter().enumerate() {
            let s = (idx / stride) % d;
            let base = idx - s * stride;
            for sp in 0..d {
                num += v[base + sp * stride].conj() * op[(sp, s)] * amp;
            }
        }
        num / linalg::norm_sqr(v)
    }

    fn assert_left_orthonormal(t: &SiteTensor) {
        let mut g = vec![ZERO; t.dr * t.dr];
        gemm_adj_left(view_mut(&mut g, t.dr, t.dr), false, view(&t.data, t.dl * t.d, t.dr), view(&t.data, t.dl * t.d, t.dr));
        for i in 0..t.dr {
            for j in 0..t.dr {
                let want = if i == j { ONE } else { ZERO };
                assert!((g[i + t.dr * j] - want).norm() < 1e-12);
            }
        }
    }

    fn assert_right_orthonormal(t: &SiteTensor) {
        let mut g = vec![ZERO; t.dl * t.dl];
        linalg::gemm_adj_right(view_mut(&mut g, t.dl, t.dl), false, view(&t.data, t.dl, t.d * t.dr), view(&t.data, t.dl, t.d * t.dr));
        for i in 0..t.dl {
            for j in 0..t.dl {
                let want = if i == j { ONE } else { ZERO };
                assert!((g[i + t.dl * j] - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn initial_state_properties() {
        use crate::model::{build, BosonDims, ChainParams, SystemSpec};
        use crate::spectral::SpectralDensity;
        let j = SpectralDensity::one_over_f(0.5, 0.1, 10.0).unwrap();
        let m = build(SystemSpec::new(1.0).unwrap(), &j, 2.0, &ChainParams::new(40, 3), &BosonDims::uniform(3, 3, 4)).unwrap();
        let s = MpsState::initial_state(&m);
        assert_eq!(s.norm(), 1.0);
        assert!(s.bond_dims().iter().all(|&b| b == 1));
        assert_eq!(s.expectation_real(&ops::sigma_z(), m.system_site()).unwrap(), 1.0);
        for i in 0..s.n_sites() {
            if i != m.system_site() {
                assert_eq!(s.expectation_real(&ops::number(4), i).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn canonical_forms_preserve_the_vector() {
        let dims = [2, 3, 3];
        let s0 = random_state(&dims, 3, 1);
        let dense = s0.to_dense();
        for c in 0..3 {
            let mut s = s0.clone();
            s.canonicalize(c).unwrap();
            assert!(diff(&s.to_dense(), &dense) < 1e-12);
            for i in 0..c {
                assert_left_orthonormal(s.tensor(i));
            }
            for i in c + 1..3 {
                assert_right_orthonormal(s.tensor(i));
            }
            let once = s.clone();
            s.canonicalize(c).unwrap();
            assert!(diff(&s.to_dense(), &once.to_dense()) < 1e-14);
            assert!((s.norm() - dense_norm(&dense)).abs() < 1e-12);
        }
    }

    #[test]
    fn product_state_unchanged_by_canonicalization_up_to_phase() {
        let s0 = MpsState::product(&[vec![ONE, ZERO], vec![ZERO, ONE, ZERO]]).unwrap();
        let mut s = s0.clone();
        s.canonicalize(1).unwrap();
        s.canonicalize(0).unwrap();
        for (a, b) in s.tensors().iter().zip(s0.tensors()) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x.norm() - y.norm()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn norm_scaling() {
        let mut s = MpsState::product(&[vec![ONE, ZERO], vec![ONE, ZERO]]).unwrap();
        s.scale(C64::new(2.0, 0.0));
        assert!((s.norm() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn expectation_matches_dense() {
        let dims = [2, 3, 2];
        let s = random_state(&dims, 4, 9);
        let dense = s.to_dense();
        let op = ops::displacement(3);
        let want = dense_expectation(&dense, &dims, &op, 1);
        let got = s.expectation(&op, 1).unwrap();
        assert!((got - want).norm() < 1e-12);
        let mut c = s.clone();
        c.canonicalize(2).unwrap();
        assert!((c.expectation(&op, 1).unwrap() - want).norm() < 1e-12);
        assert!(s.expectation(&ops::sigma_z(), 1).is_err());
    }

    /// Right-to-left rank-1 TT-SVD performed directly on the dense vector.
    fn dense_rank_one(v: &[C64], dims: &[usize]) -> Vec<C64> {
        let mut rest = v.to_vec();
        let mut factors: Vec<Vec<C64>> = Vec::new();
        for &d in dims.iter().rev().take(dims.len() - 1) {
            let p = rest.len() / d;
            let svd = view(&rest, p, d).thin_svd().unwrap();
            let s1 = svd.S().column_vector()[0].re;
            factors.push((0..d).map(|k| svd.V()[(k, 0)].conj()).collect());
            rest = (0..p).map(|k| svd.U()[(k, 0)] * s1).collect();
        }
        factors.push(rest);
        factors.reverse();
        let total: usize = dims.iter().product();
        let mut out = vec![ONE; total];
        for (idx, amp) in out.iter_mut().enumerate() {
            let mut r = idx;
            for (f, &d) in factors.iter().zip(dims) {
                *amp *= f[r % d];
                r /= d;
            }
        }
        let n = linalg::norm(&out);
        out.iter().map(|z| z / n).collect()
    }

    #[test]
    fn truncation_to_rank_one_matches_dense_svd() {
        let dims = [2, 3, 2, 2];
        let mut s = random_state(&dims, 4, 4);
        s.normalize();
        let dense = s.to_dense();
        let w = s.truncate(1, 0.0).unwrap();
        assert!(s.bond_dims().iter().all(|&b| b == 1));
        assert!(w > 0.0);
        assert!((s.norm() - 1.0).abs() < 1e-12);
        let reference = dense_rank_one(&dense, &dims);
        let ov_mps = linalg::dot(&s.to_dense(), &dense).norm();
        let ov_ref = linalg::dot(&reference, &dense).norm();
        assert!((ov_mps - ov_ref).abs() < 1e-10, "{ov_mps} vs {ov_ref}");
    }

    #[test]
    fn truncation_noop_when_within_limits() {
        let dims = [2, 3, 2];
        let mut s = random_state(&dims, 2, 5);
        s.normalize();
        let before = s.to_dense();
        let w = s.truncate(100, 0.0).unwrap();
        assert_eq!(w, 0.0);
        let after = s.to_dense();
        let ov = linalg::dot(&before, &after).norm();
        assert!((ov - 1.0).abs() < 1e-12);
        let mut p = MpsState::product(&[vec![ONE, ZERO], vec![ZERO, ONE]]).unwrap();
        assert_eq!(p.truncate(1, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn expansion_keeps_the_vector() {
        let dims = [2, 3, 3, 2];
        let mut s = random_state(&dims, 2, 8);
        let before = s.to_dense();
        s.expand_bonds(5).unwrap();
        assert_eq!(s.bond_dims(), vec![2, 5, 2]);
        assert!(diff(&s.to_dense(), &before) < 1e-12);
        for i in 1..4 {
            assert_right_orthonormal(s.tensor(i));
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = random_state(&[2, 4, 3], 3, 2);
        s.canonicalize(1).unwrap();
        s.write_checkpoint(dir.path(), "abc").unwrap();
        let (r, m) = MpsState::read_checkpoint(dir.path()).unwrap();
        assert_eq!(m.config_hash, "abc");
        assert_eq!(r.center(), Some(1));
        assert_eq!(r.norm().to_bits(), s.norm().to_bits());
        assert!(diff(&r.to_dense(), &s.to_dense()) == 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn dense_equivalence(seed in 0u64..1000, n in 2usize..=5, d in 2usize..=4, bond in 1usize..=4, site_frac in 0.0f64..1.0, center_frac in 0.0f64..1.0) {
            let dims = vec![d; n];
            let s = random_state(&dims, bond, seed);
            let dense = s.to_dense();
            let site = ((n as f64 - 1.0) * site_frac).round() as usize;
            let center = ((n as f64 - 1.0) * center_frac).round() as usize;
            let op = ops::number(d);
            let want = dense_expectation(&dense, &dims, &op, site);
            prop_assert!((s.expectation(&op, site).unwrap() - want).norm() < 1e-10 * (1.0 + want.norm()));
            let mut c = s.clone();
            c.canonicalize(center).unwrap();
            prop_assert!((c.norm() - dense_norm(&dense)).abs() < 1e-10 * dense_norm(&dense));
            prop_assert!((c.expectation(&op, site).unwrap() - want).norm() < 1e-10 * (1.0 + want.norm()));
            prop_assert!((s.norm() - c.norm()).abs() < 1e-10 * c.norm());
        }

        #[test]
        fn gauge_invariance(seed in 0u64..1000, c1 in 0usize..4, c2 in 0usize..4) {
            let dims = [2, 3, 3, 2];
            let mut s = random_state(&dims, 3, seed);
            s.canonicalize(c1).unwrap();
            let e1 = s.expectation(&ops::sigma_z(), 0).unwrap();
            let n1 = s.norm();
            s.canonicalize(c2).unwrap();
            prop_assert!((s.expectation(&ops::sigma_z(), 0).unwrap() - e1).norm() < 1e-12);
            prop_assert!((s.norm() - n1).abs() < 1e-12 * n1);
        }

        #[test]
        fn discarded_weight_monotone_in_chi(seed in 0u64..1000) {
            let dims = [2, 3, 3, 2];
            let s = random_state(&dims, 4, seed);
            let mut prev = f64::INFINITY;
            for chi in 1..=6 {
                let mut c = s.clone();
                let w = c.truncate(chi, 0.0).unwrap();
                prop_assert!(w <= prev + 1e-15);
                prev = w;
            }
        }
    }
}
