//! Thermofield MPS-TDVP simulation of a driven qubit coupled to a bosonic
//! bath, with repeated projective measurement of the qubit.
//!
//! The quadrature, chain-mapping and NIBA routines are generic over
//! [`scalar::Real`]; the tensor-network code runs in complex double
//! precision. The aliases below fix the scalar to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision, clippy::needless_range_loop)]

pub mod chainmap;
pub mod krylov;
pub mod linalg;
pub mod model;
pub mod mps;
pub mod ops;
pub mod oracle;
pub mod quadrature;
pub mod scalar;
pub mod spectral;
pub mod tdvp;
pub mod zeno;

pub use num_complex::Complex64 as C64;

pub type SpectralDensity = spectral::SpectralDensity<f64>;
pub type ThermalizedDensity = spectral::ThermalizedDensity<f64>;
pub type DiscretizedMeasure = spectral::DiscretizedMeasure<f64>;
pub type ChainCoefficients = chainmap::ChainCoefficients<f64>;
pub type NibaSpec = oracle::NibaSpec<f64>;
pub type NibaSolution = oracle::NibaSolution<f64>;
pub type TimeGrid = oracle::TimeGrid<f64>;
