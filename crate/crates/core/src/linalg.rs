//! Dense kernels on column-major complex buffers.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatMut, MatRef, Par};
use num_complex::Complex64 as C64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

#[inline]
pub fn view(data: &[C64], rows: usize, cols: usize) -> MatRef<'_, C64> {
    MatRef::from_column_major_slice(data, rows, cols)
}

#[inline]
pub fn view_mut(data: &mut [C64], rows: usize, cols: usize) -> MatMut<'_, C64> {
    MatMut::from_column_major_slice_mut(data, rows, cols)
}

/// `dst = a · b` (or `dst += a · b` with `accumulate`).
pub fn gemm(dst: MatMut<'_, C64>, accumulate: bool, a: MatRef<'_, C64>, b: MatRef<'_, C64>) {
    let accum = if accumulate { Accum::Add } else { Accum::Replace };
    matmul(dst, accum, a, b, ONE, Par::Seq);
}

/// `a^H · b`.
pub fn gemm_adj_left(dst: MatMut<'_, C64>, accumulate: bool, a: MatRef<'_, C64>, b: MatRef<'_, C64>) {
    let accum = if accumulate { Accum::Add } else { Accum::Replace };
    matmul(dst, accum, a.adjoint(), b, ONE, Par::Seq);
}

/// `a · b^H`.
pub fn gemm_adj_right(dst: MatMut<'_, C64>, accumulate: bool, a: MatRef<'_, C64>, b: MatRef<'_, C64>) {
    let accum = if accumulate { Accum::Add } else { Accum::Replace };
    matmul(dst, accum, a, b.adjoint(), ONE, Par::Seq);
}

pub fn to_vec(m: MatRef<'_, C64>) -> Vec<C64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Column-major copy of `m^H`.
pub fn to_vec_adjoint(m: MatRef<'_, C64>) -> Vec<C64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)].conj());
        }
    }
    out
}

pub fn mat_to_vec(m: &Mat<C64>) -> Vec<C64> {
    to_vec(m.as_ref())
}

/// `⟨a, b⟩ = Σ conj(a_i) b_i`.
pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).fold(ZERO, |acc, (x, y)| acc + x.conj() * y)
}

pub fn norm_sqr(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

pub fn norm(a: &[C64]) -> f64 {
    norm_sqr(a).sqrt()
}

pub fn scale(a: &mut [C64], c: C64) {
    for z in a {
        *z *= c;
    }
}

pub fn axpy(y: &mut [C64], c: C64, x: &[C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += c * xi;
    }
}

pub fn is_finite(a: &[C64]) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Thin QR of a column-major `rows × cols` matrix: `(Q, R)` with
/// `Q: rows × k`, `R: k × cols`, `k = min(rows, cols)`.
pub fn qr(data: &[C64], rows: usize, cols: usize) -> (Vec<C64>, Vec<C64>, usize) {
    let qr = view(data, rows, cols).qr();
    let q = qr.compute_thin_Q();
    let r = qr.thin_R();
    let k = rows.min(cols);
    (mat_to_vec(&q), to_vec(r), k)
}

/// Thin LQ: `data = L · Q` with `Q: k × cols` having orthonormal rows.
pub fn lq(data: &[C64], rows: usize, cols: usize) -> (Vec<C64>, Vec<C64>, usize) {
    let adj = view(data, rows, cols).adjoint().to_owned();
    let qr = adj.qr();
    let q = qr.compute_thin_Q();
    let r = qr.thin_R();
    let k = rows.min(cols);
    (to_vec_adjoint(r), to_vec_adjoint(q.as_ref()), k)
}

pub struct Truncation {
    pub u: Vec<C64>,
    pub s: Vec<f64>,
    pub vh: Vec<C64>,
    pub kept: usize,
    /// Discarded squared singular values relative to the total.
    pub discarded: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("singular value decomposition failed to converge for a {rows}x{cols} block")]
pub struct SvdFailure {
    pub rows: usize,
    pub cols: usize,
}

/// Truncated SVD keeping at most `chi_max` values and discarding the largest
/// tail whose relative squared weight stays `≤ cutoff`. A cutoff `≤ 0` keeps
/// every nonzero value.
pub fn truncated_svd(data: &[C64], rows: usize, cols: usize, chi_max: usize, cutoff: f64) -> Result<Truncation, SvdFailure> {
    let svd = view(data, rows, cols).thin_svd().map_err(|_| SvdFailure { rows, cols })?;
    let s_all: Vec<f64> = svd.S().column_vector().iter().map(|z| z.re).collect();
    let total: f64 = s_all.iter().map(|s| s * s).sum();
    let k_full = s_all.len();
    let mut keep = k_full.min(chi_max.max(1));
    if total > 0.0 {
        if cutoff > 0.0 {
            let mut tail = 0.0;
            while keep > 1 {
                let next = tail + s_all[keep - 1] * s_all[keep - 1];
                if next / total > cutoff {
                    break;
                }
                tail = next;
                keep -= 1;
            }
        } else {
            while keep > 1 && s_all[keep - 1] == 0.0 {
                keep -= 1;
            }
        }
    }
    let discarded = if total > 0.0 { s_all[keep..].iter().map(|s| s * s).sum::<f64>() / total } else { 0.0 };
    let u = to_vec(svd.U().subcols(0, keep));
    let vh = to_vec_adjoint(svd.V().subcols(0, keep));
    Ok(Truncation { u, s: s_all[..keep].to_vec(), vh, kept: keep, discarded })
}

/// Columns orthonormal to the (orthonormal) columns of `q`, filling up to
/// `target` columns. Returns the extra columns only.
pub fn orthonormal_complement(q: &[C64], rows: usize, cols: usize, target: usize) -> Vec<C64> {
    let want = target.min(rows).saturating_sub(cols);
    let mut extra: Vec<C64> = Vec::with_capacity(want * rows);
    let mut basis: Vec<Vec<C64>> = (0..cols).map(|j| q[j * rows..(j + 1) * rows].to_vec()).collect();
    let mut e = 0;
    while extra.len() < want * rows && e < rows {
        let mut v = vec![ZERO; rows];
        v[e] = ONE;
        e += 1;
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &v);
                axpy(&mut v, -c, b);
            }
        }
        let n = norm(&v);
        if n > 1e-8 {
            scale(&mut v, C64::new(1.0 / n, 0.0));
            extra.extend_from_slice(&v);
            basis.push(v);
        }
    }
    extra
}

/// Local operator stored by its nonzero entries, applied to the middle index
/// of an `(l, s, r)` tensor.
#[derive(Clone, Debug, Default)]
pub struct SparseOp {
    pub dim: usize,
    pub entries: Vec<(usize, usize, C64)>,
}

impl SparseOp {
    pub fn from_dense(m: &Mat<C64>) -> Self {
        let mut entries = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                let v = m[(i, j)];
                if v != ZERO {
                    entries.push((i, j, v));
                }
            }
        }
        Self { dim: m.nrows(), entries }
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    /// `y[a, s', b] += Σ_s O[s', s] x[a, s, b]`.
    pub fn apply_add(&self, x: &[C64], y: &mut [C64], dl: usize, dr: usize) {
        let d = self.dim;
        for b in 0..dr {
            let base = b * d * dl;
            for &(sp, s, v) in &self.entries {
                let src = &x[base + s * dl..base + (s + 1) * dl];
                let dst = &mut y[base + sp * dl..base + (sp + 1) * dl];
                for (yi, xi) in dst.iter_mut().zip(src) {
                    *yi += v * xi;
                }
            }
        }
    }

    /// Kronecker product on the merged index `s = s_first + d_first · s_second`.
    pub fn kron(first: &SparseOp, second: &SparseOp) -> SparseOp {
        let d1 = first.dim;
        let mut entries = Vec::with_capacity(first.entries.len() * second.entries.len());
        for &(r2, c2, v2) in &second.entries {
            for &(r1, c1, v1) in &first.entries {
                entries.push((r1 + d1 * r2, c1 + d1 * c2, v1 * v2));
            }
        }
        SparseOp { dim: d1 * second.dim, entries }
    }

    pub fn identity(d: usize) -> SparseOp {
        SparseOp { dim: d, entries: (0..d).map(|i| (i, i, ONE)).collect() }
    }

    /// Sum of several operators on the same space, merging duplicate entries.
    pub fn sum(ops: &[SparseOp], dim: usize) -> SparseOp {
        let mut dense = vec![ZERO; dim * dim];
        for op in ops {
            for &(r, c, v) in &op.entries {
                dense[r + dim * c] += v;
            }
        }
        let mut entries = Vec::new();
        for c in 0..dim {
            for r in 0..dim {
                let v = dense[r + dim * c];
                if v != ZERO {
                    entries.push((r, c, v));
                }
            }
        }
        SparseOp { dim, entries }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(rows: usize, cols: usize, seed: u64) -> Vec<C64> {
        let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..rows * cols)
            .map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let a = ((x >> 11) as f64) / (1u64 << 53) as f64 - 0.5;
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let b = ((x >> 11) as f64) / (1u64 << 53) as f64 - 0.5;
                C64::new(a, b)
            })
            .collect()
    }

    fn max_abs_diff(a: &[C64], b: &[C64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn qr_and_lq_reconstruct() {
        for (r, c) in [(6, 3), (3, 6), (4, 4)] {
            let a = sample(r, c, 7);
            let (q, rr, k) = qr(&a, r, c);
            let mut back = vec![ZERO; r * c];
            gemm(view_mut(&mut back, r, c), false, view(&q, r, k), view(&rr, k, c));
            assert!(max_abs_diff(&a, &back) < 1e-13);
            let (l, qq, k) = lq(&a, r, c);
            gemm(view_mut(&mut back, r, c), false, view(&l, r, k), view(&qq, k, c));
            assert!(max_abs_diff(&a, &back) < 1e-13);
            let mut eye = vec![ZERO; k * k];
            gemm_adj_right(view_mut(&mut eye, k, k), false, view(&qq, k, c), view(&qq, k, c));
            for i in 0..k {
                for j in 0..k {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((eye[i + k * j] - C64::new(want, 0.0)).norm() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn svd_truncation_weights() {
        let a = sample(8, 5, 3);
        let full = truncated_svd(&a, 8, 5, 100, 0.0).unwrap();
        assert_eq!(full.kept, 5);
        assert_eq!(full.discarded, 0.0);
        let total: f64 = full.s.iter().map(|s| s * s).sum();
        let cut = truncated_svd(&a, 8, 5, 2, 0.0).unwrap();
        let tail: f64 = full.s[2..].iter().map(|s| s * s).sum();
        assert!((cut.discarded - tail / total).abs() < 1e-14);
        let by_cutoff = truncated_svd(&a, 8, 5, 100, 1.01 * full.s[4] * full.s[4] / total).unwrap();
        assert_eq!(by_cutoff.kept, 4);
    }

    #[test]
    fn complement_is_orthonormal() {
        let a = sample(6, 2, 11);
        let (q, _, k) = qr(&a, 6, 2);
        let extra = orthonormal_complement(&q, 6, k, 5);
        assert_eq!(extra.len(), 3 * 6);
        let mut all = q.clone();
        all.extend_from_slice(&extra);
        for i in 0..5 {
            for j in 0..5 {
                let ip = dot(&all[i * 6..(i + 1) * 6], &all[j * 6..(j + 1) * 6]);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((ip - C64::new(want, 0.0)).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn sparse_kron_matches_dense() {
        use crate::ops;
        let a = ops::annihilation(3);
        let z = ops::sigma_z();
        let k = SparseOp::kron(&SparseOp::from_dense(&z), &SparseOp::from_dense(&a));
        let dense = ops::kron_fast_slow(&z, &a);
        let x = sample(2, 6 * 3, 5);
        let mut y1 = vec![ZERO; x.len()];
        k.apply_add(&x, &mut y1, 2, 3);
        let mut y2 = vec![ZERO; x.len()];
        for b in 0..3 {
            for sp in 0..6 {
                for s in 0..6 {
                    for a in 0..2 {
                        y2[a + 2 * (sp + 6 * b)] += dense[(sp, s)] * x[a + 2 * (s + 6 * b)];
                    }
                }
            }
        }
        assert!(max_abs_diff(&y1, &y2) < 1e-15);
    }
}
