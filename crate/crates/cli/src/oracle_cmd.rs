//! `oracle` verb: the same sweep on the state-vector and NIBA backends.

use anyhow::{bail, Result};

use zeno_tn::model::ChainModel;
use zeno_tn::oracle::{dense_zeno, niba_sigma_z, survival_from_sigma_z, DenseInstance, NibaSpec, TimeGrid};
use zeno_tn::zeno::{CycleDiagnostics, ProtocolMode, ZenoRecord};

use crate::config::{RunConfig, SweepPoint};
use crate::output::Backend;
use crate::runner::{run_sweep_in, PointOutcome};

/// Exact propagation of the full chain; fails for points over the dense cap.
pub fn dense_record(cfg: &RunConfig, point: &SweepPoint, model: &ChainModel) -> Result<ZenoRecord> {
    let mut inst = DenseInstance::with_cap(model, cfg.oracle.dense_cap)?;
    Ok(dense_zeno(&mut inst, &cfg.protocol_for(point.tau))?)
}

/// Markovian survival from the NIBA population: every cycle restarts from
/// the equilibrium bath, so each factor is `(1 + ⟨σ_z(τ)⟩)/2`.
pub fn niba_record(cfg: &RunConfig, point: &SweepPoint) -> Result<ZenoRecord> {
    let proto = cfg.protocol_for(point.tau);
    if proto.mode != ProtocolMode::Markovian {
        log::info!("{}: NIBA backend evaluates the Markovian protocol only", point.id());
    }
    // a step that divides τ exactly, no coarser than the configured one
    let cells = (point.tau / cfg.oracle.niba_step - 1e-9).ceil().max(1.0) as usize;
    let spec = NibaSpec {
        density: cfg.spectral.density(point.alpha)?,
        beta: point.beta.0,
        delta: cfg.system.delta,
        t_grid: TimeGrid::new(point.tau / cells as f64, cells + 1)?,
        quad_tol: cfg.oracle.quad_tol,
    };
    let sol = niba_sigma_z(&spec)?;
    let Some(&z) = sol.sigma_z.last() else { bail!("empty NIBA solution") };
    let p = survival_from_sigma_z(z);
    if !(p > 0.0 && p <= 1.0 + 1e-9) {
        bail!("NIBA survival factor {p} outside (0, 1]");
    }
    let mut record = ZenoRecord::new(proto);
    let diag = CycleDiagnostics { max_bond: 0, discarded: 0.0, sigma_z_before: z };
    for _ in 0..record.protocol.n_measurements {
        record.push(p.min(1.0), diag);
    }
    Ok(record)
}

/// Which oracle backends to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum OracleBackend {
    Dense,
    Niba,
    Both,
}

/// Writes `oracle/dense/summary_dense.csv` and/or
/// `oracle/niba/summary_niba.csv`, each with its own runs and manifest.
pub fn run_oracle(cfg: &RunConfig, which: OracleBackend, workers: usize) -> Result<Vec<(Backend, Vec<PointOutcome>)>> {
    let root = cfg.output_dir.join("oracle");
    let mut out = Vec::new();
    if matches!(which, OracleBackend::Dense | OracleBackend::Both) {
        let o = run_sweep_in(cfg, &root.join("dense"), Backend::Dense, "summary_dense.csv", workers)?;
        out.push((Backend::Dense, o));
    }
    if matches!(which, OracleBackend::Niba | OracleBackend::Both) {
        let o = run_sweep_in(cfg, &root.join("niba"), Backend::NibaMarkovian, "summary_niba.csv", workers)?;
        out.push((Backend::NibaMarkovian, o));
    }
    Ok(out)
}
