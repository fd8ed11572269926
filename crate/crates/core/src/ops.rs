//! Local operators in the bases used throughout: the qubit in the `σ_z`
//! eigenbasis with `|e⟩ = (1, 0)`, bosons in the truncated Fock basis.

use faer::Mat;
use num_complex::Complex64 as C64;

pub fn identity(d: usize) -> Mat<C64> {
    Mat::from_fn(d, d, |i, j| if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
}

pub fn sigma_x() -> Mat<C64> {
    Mat::from_fn(2, 2, |i, j| if i != j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
}

pub fn sigma_z() -> Mat<C64> {
    Mat::from_fn(2, 2, |i, j| match (i, j) {
        (0, 0) => C64::new(1.0, 0.0),
        (1, 1) => C64::new(-1.0, 0.0),
        _ => C64::new(0.0, 0.0),
    })
}

/// `|e⟩⟨e|`, the measurement projector.
pub fn excited_projector() -> Mat<C64> {
    Mat::from_fn(2, 2, |i, j| if i == 0 && j == 0 { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
}

/// Truncated bosonic annihilation operator `b` on `d` Fock states.
pub fn annihilation(d: usize) -> Mat<C64> {
    Mat::from_fn(d, d, |i, j| if j == i + 1 { C64::new((j as f64).sqrt(), 0.0) } else { C64::new(0.0, 0.0) })
}

pub fn creation(d: usize) -> Mat<C64> {
    annihilation(d).adjoint().to_owned()
}

pub fn number(d: usize) -> Mat<C64> {
    Mat::from_fn(d, d, |i, j| if i == j { C64::new(i as f64, 0.0) } else { C64::new(0.0, 0.0) })
}

/// `b + b†`.
pub fn displacement(d: usize) -> Mat<C64> {
    Mat::from_fn(d, d, |i, j| {
        if j == i + 1 {
            C64::new((j as f64).sqrt(), 0.0)
        } else if i == j + 1 {
            C64::new((i as f64).sqrt(), 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

pub fn scaled(op: &Mat<C64>, c: f64) -> Mat<C64> {
    Mat::from_fn(op.nrows(), op.ncols(), |i, j| op[(i, j)] * c)
}

/// Kronecker product on a merged index `s = s_first + d_first · s_second`,
/// i.e. `first` acts on the fast index.
pub fn kron_fast_slow(first: &Mat<C64>, second: &Mat<C64>) -> Mat<C64> {
    let (d1, d2) = (first.nrows(), second.nrows());
    Mat::from_fn(d1 * d2, d1 * d2, |r, c| {
        let (r1, r2) = (r % d1, r / d1);
        let (c1, c2) = (c % d1, c / d1);
        first[(r1, c1)] * second[(r2, c2)]
    })
}

/// Max-abs deviation from Hermiticity.
pub fn hermiticity_defect(op: &Mat<C64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..op.nrows() {
        for j in 0..op.ncols() {
            worst = worst.max((op[(i, j)] - op[(j, i)].conj()).norm());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commutator_of_truncated_ladder() {
        let d = 5;
        let a = annihilation(d);
        let ad = creation(d);
        let comm = &a * &ad - &ad * &a;
        for i in 0..d - 1 {
            assert!((comm[(i, i)].re - 1.0).abs() < 1e-14);
        }
        // truncation artefact sits in the last Fock state
        assert!((comm[(d - 1, d - 1)].re + (d as f64 - 1.0)).abs() < 1e-14);
        let n = &ad * &a;
        for i in 0..d {
            for j in 0..d {
                assert!((n[(i, j)] - number(d)[(i, j)]).norm() < 1e-14);
            }
        }
        let x = displacement(d);
        let sum = &a + &ad;
        for i in 0..d {
            for j in 0..d {
                assert!((x[(i, j)] - sum[(i, j)]).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn projector_is_idempotent_and_hermitian() {
        let p = excited_projector();
        let p2 = &p * &p;
        assert_eq!(hermiticity_defect(&p), 0.0);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(p2[(i, j)], p[(i, j)]);
            }
        }
        assert_eq!(sigma_z()[(0, 0)].re, 1.0);
    }

    #[test]
    fn kron_ordering() {
        let a = sigma_z();
        let b = number(3);
        let k = kron_fast_slow(&a, &b);
        // index s = s1 + 2 s2; diagonal entry = z(s1) * n(s2)
        for s in 0..6 {
            let expect = a[(s % 2, s % 2)] * b[(s / 2, s / 2)];
            assert_eq!(k[(s, s)], expect);
        }
    }
}
