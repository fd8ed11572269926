//! Run configuration: TOML in, validated, canonically hashed.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use zeno_tn::chainmap::ChainMethod;
use zeno_tn::model::{BosonDims, ChainParams, SystemSpec};
use zeno_tn::spectral::{Panels, SpectralDensity};
use zeno_tn::tdvp::EvolutionConfig;
use zeno_tn::zeno::{MeasurementProtocol, ProtocolMode};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Invalid { field: &'static str, message: String },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, message: message.into() }
}

/// Inverse temperature in units of 1/Δ; `"inf"` in config files.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Beta(pub f64);

impl Beta {
    pub fn is_zero_temperature(&self) -> bool {
        self.0.is_infinite()
    }
}

impl fmt::Display for Beta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for Beta {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Beta {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Beta;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "a positive number or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Beta, E> {
                Ok(Beta(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Beta, E> {
                Ok(Beta(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Beta, E> {
                Ok(Beta(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Beta, E> {
                match v {
                    "inf" | "infinity" => Ok(Beta(f64::INFINITY)),
                    other => Err(E::custom(format!("unknown beta {other:?}; use a number or \"inf\""))),
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralKind {
    #[default]
    OneOverF,
    OhmicDebye,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralConfig {
    #[serde(default)]
    pub kind: SpectralKind,
    /// Coupling prefactor sweep (α for 1/f, η for Ohmic–Debye), units of Δ².
    pub alpha: Vec<f64>,
    #[serde(default = "default_omega_0")]
    pub omega_0: f64,
    #[serde(default = "default_omega_c")]
    pub omega_c: f64,
}

fn default_omega_0() -> f64 {
    0.1
}

fn default_omega_c() -> f64 {
    10.0
}

impl SpectralConfig {
    pub fn density(&self, alpha: f64) -> Result<SpectralDensity<f64>, ConfigError> {
        let d = match self.kind {
            SpectralKind::OneOverF => SpectralDensity::one_over_f(alpha, self.omega_0, self.omega_c),
            SpectralKind::OhmicDebye => SpectralDensity::ohmic_debye(alpha, self.omega_c),
        };
        d.map_err(|e| invalid("spectral", e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub delta: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self { delta: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperatureConfig {
    /// β in units of 1/Δ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<Beta>>,
    /// Alternatively β·ω_c.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_omega_c: Option<Vec<Beta>>,
}

impl Default for TemperatureConfig {
    fn default() -> Self {
        Self { beta: Some(vec![Beta(f64::INFINITY)]), beta_omega_c: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    /// Gauss–Legendre nodes per panel (M).
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    /// Log-spaced panels; 0 or 1 means a single panel.
    #[serde(default)]
    pub panels: usize,
    /// Sites per chain (N).
    #[serde(default = "default_sites")]
    pub sites: usize,
    #[serde(default)]
    pub method: ChainMethod,
    #[serde(default = "default_near_dim")]
    pub near_dim: usize,
    #[serde(default = "default_far_dim")]
    pub far_dim: usize,
    #[serde(default = "default_near_sites")]
    pub near_sites: usize,
    /// Explicit per-site truncations (site 0 first), applied to both chains.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_dims: Option<Vec<usize>>,
}

fn default_nodes() -> usize {
    400
}
fn default_sites() -> usize {
    60
}
fn default_near_dim() -> usize {
    12
}
fn default_far_dim() -> usize {
    8
}
fn default_near_sites() -> usize {
    4
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            nodes: default_nodes(),
            panels: 0,
            sites: default_sites(),
            method: ChainMethod::default(),
            near_dim: default_near_dim(),
            far_dim: default_far_dim(),
            near_sites: default_near_sites(),
            local_dims: None,
        }
    }
}

impl ChainConfig {
    pub fn params(&self) -> ChainParams {
        let mut p = ChainParams::new(self.nodes, self.sites);
        p.method = self.method;
        p.panels = if self.panels > 1 { Panels::Log(self.panels) } else { Panels::Single };
        p
    }

    pub fn dims(&self) -> BosonDims {
        match &self.local_dims {
            Some(d) => BosonDims { right: d.clone(), left: d.clone() },
            None => BosonDims::near_far(self.sites, self.sites, self.near_dim, self.far_dim, self.near_sites),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub tau: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_measurements: Option<usize>,
    /// Measure until at least this time: n = ceil(t_final / τ).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(default)]
    pub mode: ProtocolMode,
}

impl ProtocolConfig {
    pub fn measurements_for(&self, tau: f64) -> usize {
        match (self.n_measurements, self.t_final) {
            (Some(n), _) => n,
            (None, Some(t)) => ((t / tau) - 1e-9).ceil().max(1.0) as usize,
            (None, None) => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default = "default_dense_cap")]
    pub dense_cap: usize,
    #[serde(default = "default_niba_step")]
    pub niba_step: f64,
    #[serde(default = "default_quad_tol")]
    pub quad_tol: f64,
}

fn default_dense_cap() -> usize {
    zeno_tn::oracle::DEFAULT_DENSE_CAP
}
fn default_niba_step() -> f64 {
    0.002
}
fn default_quad_tol() -> f64 {
    1e-10
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { dense_cap: default_dense_cap(), niba_step: default_niba_step(), quad_tol: default_quad_tol() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOptions {
    /// Write a resumable checkpoint after every measurement cycle.
    #[serde(default)]
    pub checkpoint: bool,
    /// Common time for the summary Γ comparison; defaults to `t_final` or the
    /// shortest run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare_time: Option<f64>,
    /// Slope magnitude below which an interval is labelled flat.
    #[serde(default)]
    pub flat_tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub spectral: SpectralConfig,
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default)]
    pub temperature: TemperatureConfig,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub evolution: EvolutionConfig,
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub run: RunOptions,
}

fn default_output() -> PathBuf {
    PathBuf::from("zeno-output")
}

/// One (α, β, τ) combination of the sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    pub alpha: f64,
    pub beta: Beta,
    pub tau: f64,
}

impl SweepPoint {
    pub fn id(&self) -> String {
        format!("{:04}_alpha{}_beta{}_tau{}", self.index, self.alpha, self.beta, self.tau)
    }
}

fn check(ok: bool, field: &'static str, message: impl FnOnce() -> String) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(invalid(field, message()))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.spectral;
        check(!s.alpha.is_empty(), "spectral.alpha", || "at least one value required".into())?;
        for &a in &s.alpha {
            check(a.is_finite() && (0.0..=100.0).contains(&a), "spectral.alpha", || format!("{a} outside [0, 100]"))?;
        }
        check(s.omega_0 > 0.0 && s.omega_0.is_finite(), "spectral.omega_0", || format!("{} must be positive", s.omega_0))?;
        check(s.omega_c > s.omega_0 && s.omega_c <= 1e4, "spectral.omega_c", || {
            format!("{} must lie in (omega_0, 1e4]", s.omega_c)
        })?;
        let d = self.system.delta;
        check(d.is_finite() && (0.0..=1e3).contains(&d), "system.delta", || format!("{d} outside [0, 1000]"))?;

        let betas = self.betas()?;
        check(!betas.is_empty(), "temperature", || "at least one beta required".into())?;
        for b in &betas {
            check(b.0 > 0.0 && !b.0.is_nan(), "temperature", || format!("beta {} must be positive or inf", b.0))?;
        }

        let c = &self.chain;
        check((1..=1000).contains(&c.sites), "chain.sites", || format!("{} outside [1, 1000]", c.sites))?;
        check((1..=100_000).contains(&c.nodes), "chain.nodes", || format!("{} outside [1, 100000]", c.nodes))?;
        check(c.panels <= 64, "chain.panels", || format!("{} exceeds 64", c.panels))?;
        let total = c.nodes * c.panels.max(1);
        check(total >= 4 * c.sites, "chain.nodes", || format!("{total} nodes is fewer than 4 N = {}", 4 * c.sites))?;
        for (name, v) in [("chain.near_dim", c.near_dim), ("chain.far_dim", c.far_dim)] {
            check((2..=64).contains(&v), name, || format!("{v} outside [2, 64]"))?;
        }
        check(c.near_sites <= 1000, "chain.near_sites", || format!("{} exceeds 1000", c.near_sites))?;
        if let Some(dims) = &c.local_dims {
            check(dims.len() == c.sites, "chain.local_dims", || format!("{} entries for {} sites", dims.len(), c.sites))?;
            check(dims.iter().all(|d| (2..=64).contains(d)), "chain.local_dims", || "entries must lie in [2, 64]".into())?;
        }

        let e = &self.evolution;
        e.validate().map_err(|err| invalid("evolution", err.to_string()))?;
        check(e.dt <= 1.0, "evolution.dt", || format!("{} exceeds 1", e.dt))?;
        check(e.krylov_dim <= 500, "evolution.krylov_dim", || format!("{} exceeds 500", e.krylov_dim))?;
        check(e.chi_max <= 4096, "evolution.chi_max", || format!("{} exceeds 4096", e.chi_max))?;

        let p = &self.protocol;
        check(!p.tau.is_empty(), "protocol.tau", || "at least one value required".into())?;
        check(p.n_measurements.is_some() != p.t_final.is_some(), "protocol", || {
            "give exactly one of n_measurements and t_final".into()
        })?;
        if let Some(n) = p.n_measurements {
            check((1..=1_000_000).contains(&n), "protocol.n_measurements", || format!("{n} outside [1, 1e6]"))?;
        }
        if let Some(t) = p.t_final {
            check(t > 0.0 && t <= 1e4, "protocol.t_final", || format!("{t} outside (0, 1e4]"))?;
        }
        for &tau in &p.tau {
            check(tau > 0.0 && tau <= 1e3, "protocol.tau", || format!("{tau} outside (0, 1000]"))?;
            MeasurementProtocol::new(tau, 1, p.mode, *e).map_err(|err| invalid("protocol.tau", err.to_string()))?;
        }

        let o = &self.oracle;
        check((1..=1 << 26).contains(&o.dense_cap), "oracle.dense_cap", || format!("{} outside [1, 2^26]", o.dense_cap))?;
        check(o.niba_step > 0.0 && o.niba_step <= 0.1, "oracle.niba_step", || format!("{} outside (0, 0.1]", o.niba_step))?;
        check(o.quad_tol > 0.0 && o.quad_tol < 1e-2, "oracle.quad_tol", || format!("{} outside (0, 1e-2)", o.quad_tol))?;

        if let Some(t) = self.run.compare_time {
            check(t > 0.0 && t.is_finite(), "run.compare_time", || format!("{t} must be positive"))?;
        }
        check(self.run.flat_tolerance >= 0.0, "run.flat_tolerance", || "must be non-negative".into())?;
        check(!self.output_dir.as_os_str().is_empty(), "output_dir", || "must not be empty".into())?;
        SystemSpec::new(d).map_err(|err| invalid("system.delta", err.to_string()))?;
        Ok(())
    }

    /// β values in units of 1/Δ.
    pub fn betas(&self) -> Result<Vec<Beta>, ConfigError> {
        match (&self.temperature.beta, &self.temperature.beta_omega_c) {
            (Some(b), None) => Ok(b.clone()),
            (None, Some(b)) => Ok(b.iter().map(|x| Beta(x.0 / self.spectral.omega_c)).collect()),
            (None, None) => Ok(vec![Beta(f64::INFINITY)]),
            (Some(_), Some(_)) => Err(invalid("temperature", "give either beta or beta_omega_c, not both")),
        }
    }

    /// Sweep points in row-major order over (alpha, beta, tau).
    pub fn sweep(&self) -> Vec<SweepPoint> {
        let betas = self.betas().unwrap_or_default();
        let mut out = Vec::new();
        for &alpha in &self.spectral.alpha {
            for &beta in &betas {
                for &tau in &self.protocol.tau {
                    out.push(SweepPoint { index: out.len(), alpha, beta, tau });
                }
            }
        }
        out
    }

    pub fn protocol_for(&self, tau: f64) -> MeasurementProtocol {
        MeasurementProtocol {
            tau,
            n_measurements: self.protocol.measurements_for(tau),
            mode: self.protocol.mode,
            evolution: self.evolution,
        }
    }

    /// Canonical JSON form: every field present, fixed order.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical().as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
