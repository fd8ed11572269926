//! Bath spectral densities, their finite-temperature splitting into a
//! physical (R) and fictitious (L) branch, and Gauss–Legendre
//! discretization of either branch into a weighted point measure.
//!
//! Conventions: `J(ω) = Σ_k g_k² δ(ω − ω_k)` for a coupling written as
//! `(1/2) σ_z Σ_k g_k (a_k† + a_k)`. The thermal branches are
//!
//! ```text
//! J_L(ω) = J(ω) / (e^{βω} − 1)      (fictitious modes, energies −ω)
//! J_R(ω) = J(ω) / (1 − e^{−βω})     (physical modes)
//! ```
//!
//! so that `J_L(ω) e^{βω} = J_R(ω)` and `J_R − J_L = J`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::{GaussLegendre, QuadratureError};
use crate::scalar::{kahan_sum, Real};

/// Upper frequency cutoff for Ohmic–Debye quadrature, in multiples of `ω_c`.
pub const DEBYE_SUPPORT_FACTOR: f64 = 20.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("frequency must be non-negative, got {0}")]
    NegativeFrequency(f64),
    #[error("inverse temperature must be positive or infinite, got {0}")]
    InvalidBeta(f64),
    #[error("invalid spectral parameter: {0}")]
    InvalidParameter(String),
    #[error("node count must be at least 1")]
    NoNodes,
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// Spectral density `J(ω)` of the bosonic bath.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectralDensity<T> {
    /// `J(ω) = η ω ω_c² / (ω_c² + ω²)`.
    OhmicDebye { eta: T, omega_c: T },
    /// `J(ω) = α/ω` on `[ω₀, ω_c]`, zero outside.
    OneOverF { alpha: T, omega_0: T, omega_c: T },
}

impl<T: Real> SpectralDensity<T> {
    pub fn ohmic_debye(eta: T, omega_c: T) -> Result<Self, SpectralError> {
        let s = Self::OhmicDebye { eta, omega_c };
        s.validate()?;
        Ok(s)
    }

    pub fn one_over_f(alpha: T, omega_0: T, omega_c: T) -> Result<Self, SpectralError> {
        let s = Self::OneOverF { alpha, omega_0, omega_c };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SpectralError> {
        let bad = |m: String| Err(SpectralError::InvalidParameter(m));
        match *self {
            Self::OhmicDebye { eta, omega_c } => {
                if !(eta >= T::zero()) || !eta.is_finite() {
                    return bad(format!("eta must be finite and >= 0, got {eta}"));
                }
                if !(omega_c > T::zero()) || !omega_c.is_finite() {
                    return bad(format!("omega_c must be finite and > 0, got {omega_c}"));
                }
            }
            Self::OneOverF { alpha, omega_0, omega_c } => {
                if !(alpha >= T::zero()) || !alpha.is_finite() {
                    return bad(format!("alpha must be finite and >= 0, got {alpha}"));
                }
                if !(omega_0 > T::zero()) {
                    return bad(format!("omega_0 must be > 0, got {omega_0}"));
                }
                if !(omega_c > omega_0) || !omega_c.is_finite() {
                    return bad(format!("omega_c must exceed omega_0, got [{omega_0}, {omega_c}]"));
                }
            }
        }
        Ok(())
    }

    /// `J(ω)`. Errors on negative frequency.
    pub fn evaluate(&self, omega: T) -> Result<T, SpectralError> {
        if omega < T::zero() || omega.is_nan() {
            return Err(SpectralError::NegativeFrequency(omega.to_f64_lossy()));
        }
        Ok(omega * self.over_omega(omega))
    }

    /// `J(ω)/ω`, finite at ω = 0 for both families.
    pub(crate) fn over_omega(&self, omega: T) -> T {
        match *self {
            Self::OhmicDebye { eta, omega_c } => eta * omega_c * omega_c / (omega_c * omega_c + omega * omega),
            Self::OneOverF { alpha, omega_0, omega_c } => {
                if omega < omega_0 || omega > omega_c {
                    T::zero()
                } else {
                    alpha / (omega * omega)
                }
            }
        }
    }

    /// Frequency interval used for quadrature.
    pub fn support(&self) -> (T, T) {
        match *self {
            Self::OhmicDebye { omega_c, .. } => (T::zero(), T::lit(DEBYE_SUPPORT_FACTOR) * omega_c),
            Self::OneOverF { omega_0, omega_c, .. } => (omega_0, omega_c),
        }
    }

    /// The overall coupling prefactor (`η` or `α`).
    pub fn coupling(&self) -> T {
        match *self {
            Self::OhmicDebye { eta, .. } => eta,
            Self::OneOverF { alpha, .. } => alpha,
        }
    }

    /// Same shape with a different coupling prefactor.
    pub fn with_coupling(&self, c: T) -> Self {
        match *self {
            Self::OhmicDebye { omega_c, .. } => Self::OhmicDebye { eta: c, omega_c },
            Self::OneOverF { omega_0, omega_c, .. } => Self::OneOverF { alpha: c, omega_0, omega_c },
        }
    }

    /// Upper cutoff `ω_c`.
    pub fn omega_c(&self) -> T {
        match *self {
            Self::OhmicDebye { omega_c, .. } | Self::OneOverF { omega_c, .. } => omega_c,
        }
    }
}

/// Which thermofield branch a density or chain belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    /// Fictitious modes (negative energies), weight `J·n̄`.
    L,
    /// Physical modes, weight `J·(n̄ + 1)`.
    R,
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Branch::L => write!(f, "L"),
            Branch::R => write!(f, "R"),
        }
    }
}

/// Checks `β > 0` (infinity allowed).
pub fn check_beta<T: Real>(beta: T) -> Result<(), SpectralError> {
    if beta > T::zero() {
        Ok(())
    } else {
        Err(SpectralError::InvalidBeta(beta.to_f64_lossy()))
    }
}

/// One temperature-renormalized branch `J_L` or `J_R`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalizedDensity<T> {
    pub base: SpectralDensity<T>,
    pub beta: T,
    pub branch: Branch,
    pub support: (T, T),
}

impl<T: Real> ThermalizedDensity<T> {
    /// True for the L branch at zero temperature, which carries no weight.
    pub fn is_identically_zero(&self) -> bool {
        self.branch == Branch::L && self.beta.is_infinite()
    }

    pub fn evaluate(&self, omega: T) -> Result<T, SpectralError> {
        if omega < T::zero() || omega.is_nan() {
            return Err(SpectralError::NegativeFrequency(omega.to_f64_lossy()));
        }
        if self.beta.is_infinite() {
            return Ok(match self.branch {
                Branch::L => T::zero(),
                Branch::R => omega * self.base.over_omega(omega),
            });
        }
        // J = ω·g(ω); write ω/(e^{x}−1) = (1/β)·x/expm1(x) with x = βω so ω → 0 is regular.
        let g = self.base.over_omega(omega);
        let x = self.beta * omega;
        let factor = match self.branch {
            Branch::L => bose_ratio(x),
            Branch::R => bose_ratio(-x),
        };
        Ok(g * factor / self.beta)
    }
}

/// `x / (e^x − 1)` with the removable singularity at 0 filled in.
fn bose_ratio<T: Real>(x: T) -> T {
    if x == T::zero() {
        T::one()
    } else if x > T::lit(700.0) {
        // e^x overflows in f64; the ratio is zero to working precision.
        x * (-x).exp()
    } else {
        x / x.exp_m1()
    }
}

/// Splits `J` into the (L, R) thermofield branches at inverse temperature `β`.
pub fn thermal_split<T: Real>(
    density: &SpectralDensity<T>,
    beta: T,
) -> Result<(ThermalizedDensity<T>, ThermalizedDensity<T>), SpectralError> {
    density.validate()?;
    check_beta(beta)?;
    let support = density.support();
    let mk = |branch| ThermalizedDensity { base: *density, beta, branch, support };
    Ok((mk(Branch::L), mk(Branch::R)))
}

/// How the support is divided into Gauss–Legendre panels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "count", rename_all = "snake_case")]
pub enum Panels {
    #[default]
    Single,
    /// Geometrically spaced panels; the lower edge is clamped to a positive value.
    Log(usize),
}

/// Point measure `Σ_j w_j δ(ω − ω_j)` approximating `J_X(ω) dω`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscretizedMeasure<T> {
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
    /// Set when the branch carries no weight at all (L branch at β = ∞).
    pub empty: bool,
}

impl<T: Real> DiscretizedMeasure<T> {
    pub fn from_parts(nodes: Vec<T>, weights: Vec<T>) -> Self {
        let empty = nodes.is_empty();
        Self { nodes, weights, empty }
    }

    pub fn empty() -> Self {
        Self { nodes: Vec::new(), weights: Vec::new(), empty: true }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_weight(&self) -> T {
        kahan_sum(self.weights.iter().copied())
    }

    /// Number of nodes with strictly positive weight.
    pub fn positive_support(&self) -> usize {
        self.weights.iter().filter(|&&w| w > T::zero()).count()
    }

    /// `Σ_j w_j ω_j^k`.
    pub fn moment(&self, k: i32) -> T {
        kahan_sum(self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * x.powi(k)))
    }
}

/// Gauss–Legendre discretization of one thermal branch with `m` nodes per panel.
pub fn discretize<T: Real>(
    density: &ThermalizedDensity<T>,
    m: usize,
    panels: Panels,
) -> Result<DiscretizedMeasure<T>, SpectralError> {
    if m == 0 {
        return Err(SpectralError::NoNodes);
    }
    if density.is_identically_zero() {
        return Ok(DiscretizedMeasure::empty());
    }
    let (lo, hi) = density.support;
    if !(hi > lo) {
        return Ok(DiscretizedMeasure::empty());
    }
    let edges = panel_edges(lo, hi, panels);
    let rule = GaussLegendre::<T>::new(m)?;
    let mut nodes = Vec::with_capacity(m * (edges.len() - 1));
    let mut weights = Vec::with_capacity(nodes.capacity());
    for w in edges.windows(2) {
        let (xs, ws) = rule.on_interval(w[0], w[1]);
        for (x, wq) in xs.into_iter().zip(ws) {
            nodes.push(x);
            weights.push(wq * density.evaluate(x)?);
        }
    }
    Ok(DiscretizedMeasure { nodes, weights, empty: false })
}

fn panel_edges<T: Real>(lo: T, hi: T, panels: Panels) -> Vec<T> {
    match panels {
        Panels::Single | Panels::Log(0) | Panels::Log(1) => vec![lo, hi],
        Panels::Log(k) => {
            // A zero lower edge (Ohmic) gets its own first panel [0, hi·1e-3].
            let (start, mut edges) = if lo > T::zero() {
                (lo, vec![lo])
            } else {
                let first = hi * T::lit(1e-3);
                (first, vec![lo, first])
            };
            let ratio = (hi / start).ln() / T::from_usize_lossy(k);
            for i in 1..k {
                edges.push(start * (ratio * T::from_usize_lossy(i)).exp());
            }
            edges.push(hi);
            edges
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn paper_one_over_f() -> SpectralDensity<f64> {
        SpectralDensity::one_over_f(1.0, 0.1, 10.0).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let j = paper_one_over_f();
        assert_eq!(j.evaluate(1.0).unwrap(), 1.0);
        assert_eq!(j.evaluate(0.05).unwrap(), 0.0);
        assert_eq!(j.evaluate(10.5).unwrap(), 0.0);
        let d = SpectralDensity::ohmic_debye(0.4, 4.0).unwrap();
        assert_relative_eq!(d.evaluate(4.0).unwrap(), 0.8, max_relative = 1e-15);
        assert!(matches!(j.evaluate(-1.0), Err(SpectralError::NegativeFrequency(_))));
    }

    #[test]
    fn ohmic_is_linear_at_origin() {
        let d = SpectralDensity::ohmic_debye(0.4, 4.0).unwrap();
        assert_relative_eq!(d.evaluate(1e-8).unwrap() / 1e-8, 0.4, max_relative = 1e-12);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(SpectralDensity::one_over_f(1.0, 0.0, 10.0).is_err());
        assert!(SpectralDensity::one_over_f(1.0, 1.0, 0.5).is_err());
        assert!(SpectralDensity::ohmic_debye(-0.1, 1.0).is_err());
        assert!(SpectralDensity::ohmic_debye(0.1, 0.0).is_err());
    }

    #[test]
    fn zero_temperature_split() {
        let j = paper_one_over_f();
        let (l, r) = thermal_split(&j, f64::INFINITY).unwrap();
        for w in [0.1, 0.5, 3.0, 10.0] {
            assert_eq!(l.evaluate(w).unwrap(), 0.0);
            assert_eq!(r.evaluate(w).unwrap(), j.evaluate(w).unwrap());
        }
        assert!(discretize(&l, 10, Panels::Single).unwrap().empty);
    }

    #[test]
    fn beta_must_be_positive() {
        let j = paper_one_over_f();
        assert!(thermal_split(&j, 0.0).is_err());
        assert!(thermal_split(&j, -1.0).is_err());
        assert!(thermal_split(&j, f64::NAN).is_err());
    }

    #[test]
    fn right_branch_value_at_unit_beta() {
        // 1/(1 - e^{-1}) from 40-digit arithmetic
        let (_, r) = thermal_split(&paper_one_over_f(), 1.0).unwrap();
        assert_relative_eq!(r.evaluate(1.0).unwrap(), 1.581_976_706_869_326_4, max_relative = 1e-15);
    }

    #[test]
    fn ohmic_thermal_branches_finite_at_zero() {
        let d = SpectralDensity::ohmic_debye(0.4, 4.0).unwrap();
        let (l, r) = thermal_split(&d, 2.0).unwrap();
        assert_relative_eq!(l.evaluate(0.0).unwrap(), 0.2, max_relative = 1e-15);
        assert_relative_eq!(r.evaluate(0.0).unwrap(), 0.2, max_relative = 1e-15);
    }

    #[test]
    fn flat_measure_integrates_to_one() {
        // unit density on [0,1]: Ohmic branch with tiny ω_c is not flat, so build directly
        let rule = GaussLegendre::<f64>::new(200).unwrap();
        let (_, ws) = rule.on_interval(0.0, 1.0);
        assert_relative_eq!(kahan_sum(ws.into_iter()), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn one_over_f_total_weight() {
        let (l, r) = thermal_split(&paper_one_over_f(), f64::INFINITY).unwrap();
        let m = discretize(&r, 400, Panels::Single).unwrap();
        assert_relative_eq!(m.total_weight(), 100f64.ln(), max_relative = 1e-12);
        assert!(m.nodes.iter().all(|&x| (0.1..=10.0).contains(&x)));
        assert!(m.nodes.windows(2).all(|w| w[0] < w[1]));
        assert!(discretize(&l, 400, Panels::Single).unwrap().is_empty());
    }

    #[test]
    fn left_branch_weight_regression() {
        // ∫_{0.1}^{10} dω / (ω (e^ω − 1)), 40-digit adaptive quadrature
        let (l, r) = thermal_split(&paper_one_over_f(), 1.0).unwrap();
        let ml = discretize(&l, 400, Panels::Single).unwrap();
        assert_relative_eq!(ml.total_weight(), 8.210_039_725_245_286, max_relative = 1e-12);
        let mr = discretize(&r, 400, Panels::Single).unwrap();
        assert_relative_eq!(mr.total_weight(), 12.815_209_911_233_378, max_relative = 1e-12);
        let ml = discretize(&l, 60, Panels::Log(6)).unwrap();
        assert_relative_eq!(ml.total_weight(), 8.210_039_725_245_286, max_relative = 1e-12);
    }

    #[test]
    fn quadrature_refinement_is_monotone() {
        let d = SpectralDensity::ohmic_debye(0.4_f64, 4.0).unwrap();
        let (_, r) = thermal_split(&d, 1.0).unwrap();
        let exact = discretize(&r, 800, Panels::Single).unwrap().total_weight();
        let mut prev_change = f64::INFINITY;
        let mut prev = discretize(&r, 8, Panels::Single).unwrap().total_weight();
        for m in [16, 32, 64] {
            let cur = discretize(&r, m, Panels::Single).unwrap().total_weight();
            let change = (cur - prev).abs();
            assert!(change <= prev_change, "m={m}: {change} > {prev_change}");
            prev_change = change;
            prev = cur;
        }
        assert!((prev - exact).abs() < 1e-8);
    }

    #[test]
    fn f32_instantiation() {
        let j = SpectralDensity::<f32>::one_over_f(1.0, 0.1, 10.0).unwrap();
        let (_, r) = thermal_split(&j, f32::INFINITY).unwrap();
        let m = discretize(&r, 64, Panels::Single).unwrap();
        assert!((m.total_weight() - 100f32.ln()).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn densities_non_negative(alpha in 0.0..5.0f64, w0 in 0.01..1.0f64, span in 1.1..100.0f64, omega in 0.0..200.0f64) {
            let j = SpectralDensity::one_over_f(alpha, w0, w0 * span).unwrap();
            prop_assert!(j.evaluate(omega).unwrap() >= 0.0);
            let d = SpectralDensity::ohmic_debye(alpha, w0 * span).unwrap();
            prop_assert!(d.evaluate(omega).unwrap() >= 0.0);
        }

        #[test]
        fn step_edges_are_sharp(omega in 0.0..0.1f64, above in 10.0..1e3f64) {
            let j = paper_one_over_f();
            prop_assert_eq!(j.evaluate(omega * 0.999_999).unwrap(), 0.0);
            prop_assert_eq!(j.evaluate(above + 1e-12).unwrap(), 0.0);
        }

        #[test]
        fn detailed_balance_at_nodes(beta in 0.05..50.0f64, m in 5usize..60) {
            let j = paper_one_over_f();
            let (l, r) = thermal_split(&j, beta).unwrap();
            let ml = discretize(&l, m, Panels::Single).unwrap();
            let mr = discretize(&r, m, Panels::Single).unwrap();
            for ((x, wl), wr) in ml.nodes.iter().zip(&ml.weights).zip(&mr.weights) {
                let lhs = wl * (beta * x).exp();
                prop_assert!((lhs - wr).abs() <= 1e-12 * wr.abs());
            }
        }
    }
}
