//! Repeated projective measurement of the system site.

use std::path::Path;

use faer::Mat;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ChainModel;
use crate::mps::{MpsError, MpsState};
use crate::ops;
use crate::tdvp::{EvolutionConfig, Evolver, TdvpError};

/// Survival factors below this are treated as a terminated run.
pub const UNDERFLOW_FLOOR: f64 = 1e-300;

#[derive(Debug, Error)]
pub enum ZenoError {
    #[error("invalid protocol: {0}")]
    Protocol(String),
    #[error(transparent)]
    Evolution(#[from] TdvpError),
    #[error(transparent)]
    State(#[from] MpsError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolMode {
    /// The bath keeps the disturbance left by every projection.
    #[default]
    NonMarkovian,
    /// `P_sur(nτ) = P̃(τ)ⁿ` from a single interval.
    Markovian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementProtocol {
    pub tau: f64,
    pub n_measurements: usize,
    pub mode: ProtocolMode,
    pub evolution: EvolutionConfig,
}

impl MeasurementProtocol {
    pub fn new(tau: f64, n_measurements: usize, mode: ProtocolMode, evolution: EvolutionConfig) -> Result<Self, ZenoError> {
        let p = Self { tau, n_measurements, mode, evolution };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ZenoError> {
        self.evolution.validate()?;
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(ZenoError::Protocol(format!("tau must be positive, got {}", self.tau)));
        }
        if self.n_measurements < 1 {
            return Err(ZenoError::Protocol("n_measurements must be at least 1".into()));
        }
        self.steps_per_interval()?;
        Ok(())
    }

    /// Integrator steps per measurement interval; `tau` must be an integer multiple of `dt`.
    pub fn steps_per_interval(&self) -> Result<usize, ZenoError> {
        let ratio = self.tau / self.evolution.dt;
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio.max(1.0) {
            return Err(ZenoError::Protocol(format!(
                "tau = {} is not an integer multiple of dt = {}",
                self.tau, self.evolution.dt
            )));
        }
        Ok(k as usize)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CycleDiagnostics {
    pub max_bond: usize,
    pub discarded: f64,
    pub sigma_z_before: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZenoRecord {
    pub protocol: MeasurementProtocol,
    /// `P̃(τ, i)` for i = 1, 2, ...
    pub per_step: Vec<f64>,
    /// `P_sur(iτ)`.
    pub cumulative: Vec<f64>,
    /// `Γ(τ, iτ)`.
    pub gamma: Vec<f64>,
    pub diagnostics: Vec<CycleDiagnostics>,
    pub terminated_early: bool,
}

impl ZenoRecord {
    pub fn new(protocol: MeasurementProtocol) -> Self {
        Self {
            protocol,
            per_step: Vec::new(),
            cumulative: Vec::new(),
            gamma: Vec::new(),
            diagnostics: Vec::new(),
            terminated_early: false,
        }
    }

    pub fn tau(&self) -> f64 {
        self.protocol.tau
    }

    pub fn len(&self) -> usize {
        self.per_step.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_step.is_empty()
    }

    /// Measurement instants `iτ`.
    pub fn times(&self) -> Vec<f64> {
        (1..=self.len()).map(|i| i as f64 * self.tau()).collect()
    }

    /// Appends one survival factor. The cumulative product is recomputed
    /// from the factors so that it never drifts from them.
    pub fn push(&mut self, factor: f64, diag: CycleDiagnostics) {
        let prev = self.cumulative.last().copied().unwrap_or(1.0);
        let cum = prev * factor;
        let i = self.per_step.len() + 1;
        self.per_step.push(factor);
        self.cumulative.push(cum);
        self.gamma.push(decay_rate(cum, i as f64 * self.tau()));
        self.diagnostics.push(diag);
    }

    /// `Γ` at time `t` by linear interpolation between measurement instants;
    /// `None` outside `[τ, nτ]`.
    pub fn gamma_at(&self, t: f64) -> Option<f64> {
        interpolate(&self.times(), &self.gamma, t)
    }

    /// `P_sur` at time `t`, interpolated like [`ZenoRecord::gamma_at`].
    pub fn survival_at(&self, t: f64) -> Option<f64> {
        interpolate(&self.times(), &self.cumulative, t)
    }
}

fn decay_rate(p: f64, t: f64) -> f64 {
    if p >= 1.0 {
        0.0
    } else {
        -p.ln() / t
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    let (first, last) = (*xs.first()?, *xs.last()?);
    let slack = 1e-9 * last.abs().max(1.0);
    if !(x >= first - slack && x <= last + slack) {
        return None;
    }
    let x = x.clamp(first, last);
    let k = xs.partition_point(|&v| v < x);
    if k == 0 {
        return Some(ys[0]);
    }
    if k >= xs.len() {
        return ys.last().copied();
    }
    let (x0, x1) = (xs[k - 1], xs[k]);
    let w = (x - x0) / (x1 - x0);
    Some(ys[k - 1] * (1.0 - w) + ys[k] * w)
}

/// `Γ(τ, iτ) = −ln P_sur(iτ) / (iτ)` for a cumulative survival series.
pub fn effective_decay_rate(cumulative: &[f64], tau: f64) -> Vec<f64> {
    cumulative.iter().enumerate().map(|(i, &p)| decay_rate(p, (i + 1) as f64 * tau)).collect()
}

/// Measurement operator on the system site.
pub fn system_projector() -> Mat<C64> {
    ops::excited_projector()
}

/// One protocol run, advanced a measurement cycle at a time.
pub struct ProtocolRun<'m> {
    model: &'m ChainModel,
    steps: usize,
    state: MpsState,
    evolver: Evolver,
    record: ZenoRecord,
    projector: Mat<C64>,
}

impl<'m> ProtocolRun<'m> {
    pub fn new(model: &'m ChainModel, proto: MeasurementProtocol) -> Result<Self, ZenoError> {
        proto.validate()?;
        let state = MpsState::initial_state(model).with_limits(proto.evolution.chi_max, proto.evolution.svd_cutoff);
        Self::resume(model, state, ZenoRecord::new(proto))
    }

    /// Continues from a state taken right after the last recorded projection.
    pub fn resume(model: &'m ChainModel, state: MpsState, record: ZenoRecord) -> Result<Self, ZenoError> {
        let proto = record.protocol.clone();
        proto.validate()?;
        if state.dims() != model.dims() {
            return Err(ZenoError::Checkpoint("state dimensions do not match the model".into()));
        }
        let steps = proto.steps_per_interval()?;
        let mut evolver = Evolver::new(model, proto.evolution)?;
        evolver.set_time(record.len() as f64 * proto.tau);
        Ok(Self { model, steps, state, evolver, record, projector: system_projector() })
    }

    pub fn record(&self) -> &ZenoRecord {
        &self.record
    }

    pub fn state(&self) -> &MpsState {
        &self.state
    }

    pub fn finished(&self) -> bool {
        self.record.terminated_early || self.record.len() >= self.target()
    }

    fn target(&self) -> usize {
        match self.record.protocol.mode {
            ProtocolMode::NonMarkovian => self.record.protocol.n_measurements,
            ProtocolMode::Markovian => 1,
        }
    }

    /// Evolves one interval and measures. Returns the survival factor, or
    /// `None` if the run is already complete.
    pub fn next_cycle(&mut self) -> Result<Option<f64>, ZenoError> {
        if self.finished() {
            return Ok(None);
        }
        let mut discarded: f64 = 0.0;
        for _ in 0..self.steps {
            let info = self.evolver.step(&mut self.state)?;
            discarded = discarded.max(info.discarded);
        }
        let sys = self.model.system_site();
        let sigma_z_before = self.state.expectation_real(&ops::sigma_z(), sys)?;
        let max_bond = self.state.max_bond_dim();
        self.state.apply_local(&self.projector, sys)?;
        let p = self.state.norm().powi(2);
        if !(p > UNDERFLOW_FLOOR) || !p.is_finite() {
            log::warn!("survival factor {p:e} below floor at cycle {}; stopping", self.record.len() + 1);
            self.record.terminated_early = true;
            return Ok(None);
        }
        self.state.normalize();
        self.evolver.invalidate();
        // the squared norm of a projected unit vector cannot exceed one
        let p = p.min(1.0);
        self.record.push(p, CycleDiagnostics { max_bond, discarded, sigma_z_before });
        Ok(Some(p))
    }

    /// Runs all remaining cycles; `on_cycle` sees the run after each one.
    pub fn run_with<F>(mut self, mut on_cycle: F) -> Result<ZenoRecord, ZenoError>
    where
        F: FnMut(&ProtocolRun<'_>) -> Result<(), ZenoError>,
    {
        while self.next_cycle()?.is_some() {
            on_cycle(&self)?;
        }
        Ok(self.into_record())
    }

    pub fn into_record(self) -> ZenoRecord {
        let mut record = self.record;
        if record.protocol.mode == ProtocolMode::Markovian && !record.terminated_early {
            expand_markovian(&mut record);
        }
        record
    }

    /// Writes the state and the record so far into `dir`.
    pub fn write_checkpoint(&self, dir: &Path, config_hash: &str) -> Result<(), ZenoError> {
        self.state.write_checkpoint(dir, config_hash)?;
        let text = serde_json::to_string(&self.record).map_err(|e| ZenoError::Checkpoint(e.to_string()))?;
        std::fs::write(dir.join("record.json"), text).map_err(|e| ZenoError::Checkpoint(e.to_string()))
    }

    /// Reads a checkpoint written by [`ProtocolRun::write_checkpoint`]. The
    /// stored config hash must equal `config_hash`.
    pub fn read_checkpoint(model: &'m ChainModel, dir: &Path, config_hash: &str) -> Result<Self, ZenoError> {
        let (state, manifest) = MpsState::read_checkpoint(dir)?;
        if manifest.config_hash != config_hash {
            return Err(ZenoError::Checkpoint(format!(
                "config hash mismatch: checkpoint {}, run {}",
                manifest.config_hash, config_hash
            )));
        }
        let text = std::fs::read_to_string(dir.join("record.json")).map_err(|e| ZenoError::Checkpoint(e.to_string()))?;
        let record: ZenoRecord = serde_json::from_str(&text).map_err(|e| ZenoError::Checkpoint(e.to_string()))?;
        Self::resume(model, state, record)
    }
}

pub(crate) fn expand_markovian(record: &mut ZenoRecord) {
    let Some(&p) = record.per_step.first() else { return };
    let diag = record.diagnostics[0];
    let n = record.protocol.n_measurements;
    let tau = record.tau();
    record.per_step = vec![p; n];
    record.cumulative = (1..=n).map(|i| p.powi(i as i32)).collect();
    // Γ is the same at every n for a pure power law
    record.gamma = (1..=n).map(|i| decay_rate(record.cumulative[i - 1], i as f64 * tau)).collect();
    record.diagnostics = vec![diag; n];
}

/// Runs the protocol from the model's initial state.
pub fn run_protocol(model: &ChainModel, proto: &MeasurementProtocol) -> Result<ZenoRecord, ZenoError> {
    ProtocolRun::new(model, proto.clone())?.run_with(|_| Ok(()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ZenoLabel {
    Qze,
    Qaze,
    Flat,
}

impl ZenoLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            ZenoLabel::Qze => "QZE",
            ZenoLabel::Qaze => "QAZE",
            ZenoLabel::Flat => "flat",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalLabel {
    pub tau_lo: f64,
    pub tau_hi: f64,
    pub slope: f64,
    pub label: ZenoLabel,
}

/// `Γ` sampled on a τ grid at a common time.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GammaSlice {
    pub t: f64,
    pub tau: Vec<f64>,
    pub gamma: Vec<f64>,
    /// τ values of runs that do not cover `t`.
    pub excluded: Vec<f64>,
}

/// Interpolates every record to time `t`. Runs that do not reach `t` are
/// excluded with a warning.
pub fn gamma_slice(records: &[ZenoRecord], t: f64) -> GammaSlice {
    let mut rows: Vec<(f64, f64)> = Vec::new();
    let mut excluded = Vec::new();
    for r in records {
        match r.gamma_at(t) {
            Some(g) => rows.push((r.tau(), g)),
            None => {
                log::warn!("run with tau = {} does not cover t = {t}; excluded", r.tau());
                excluded.push(r.tau());
            }
        }
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    GammaSlice { t, tau: rows.iter().map(|r| r.0).collect(), gamma: rows.iter().map(|r| r.1).collect(), excluded }
}

/// Labels adjacent τ intervals by the sign of `∂Γ/∂τ`. Slopes with
/// magnitude at most `flat_tol` are labelled flat.
pub fn classify(tau: &[f64], gamma: &[f64], flat_tol: f64) -> Result<Vec<IntervalLabel>, ZenoError> {
    if tau.len() != gamma.len() {
        return Err(ZenoError::Protocol("tau and gamma lengths differ".into()));
    }
    if tau.len() < 2 {
        return Err(ZenoError::Protocol("classification needs at least two tau points".into()));
    }
    let mut out = Vec::with_capacity(tau.len() - 1);
    for k in 0..tau.len() - 1 {
        let dx = tau[k + 1] - tau[k];
        if !(dx > 0.0) {
            return Err(ZenoError::Protocol("tau grid must be strictly increasing".into()));
        }
        let slope = (gamma[k + 1] - gamma[k]) / dx;
        let label = if slope.abs() <= flat_tol {
            ZenoLabel::Flat
        } else if slope > 0.0 {
            ZenoLabel::Qze
        } else {
            ZenoLabel::Qaze
        };
        out.push(IntervalLabel { tau_lo: tau[k], tau_hi: tau[k + 1], slope, label });
    }
    Ok(out)
}

impl GammaSlice {
    pub fn classify(&self, flat_tol: f64) -> Result<Vec<IntervalLabel>, ZenoError> {
        classify(&self.tau, &self.gamma, flat_tol)
    }
}
