//! Sweep execution: model building, protocol runs, isolation and scheduling.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, Context, Result};
use sha2::{Digest, Sha256};

use zeno_tn::model::{build, ChainModel, ModelSummary, SystemSpec};
use zeno_tn::zeno::{ProtocolRun, ZenoRecord};

use crate::config::{hex, RunConfig, SweepPoint};
use crate::output::{self, Backend, RunManifest, RunStatus};

/// Environment variable holding the worker-pool size.
pub const WORKERS_ENV: &str = "ZENO_WORKERS";

pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

pub fn build_model(cfg: &RunConfig, point: &SweepPoint) -> Result<ChainModel> {
    let density = cfg.spectral.density(point.alpha)?;
    let system = SystemSpec::new(cfg.system.delta)?;
    let model = build(system, &density, point.beta.0, &cfg.chain.params(), &cfg.chain.dims())?;
    Ok(model)
}

/// sha256 over the mapped chain tables, right branch first.
pub fn chain_checksum(model: &ChainModel) -> String {
    let mut h = Sha256::new();
    h.update(model.right.to_table().as_bytes());
    if let Some(left) = &model.left {
        h.update(b"\n--left--\n");
        h.update(left.to_table().as_bytes());
    }
    hex(&h.finalize())
}

/// Outcome of one sweep point.
#[derive(Clone, Debug)]
pub struct PointOutcome {
    pub point: SweepPoint,
    pub record: Option<ZenoRecord>,
    pub error: Option<String>,
}

impl PointOutcome {
    pub fn failed(point: SweepPoint, error: String) -> Self {
        Self { point, record: None, error: Some(error) }
    }
}

pub fn run_dir(root: &Path, point: &SweepPoint) -> PathBuf {
    root.join("runs").join(point.id())
}

fn checkpoint_key(config_hash: &str, point: &SweepPoint) -> String {
    format!("{config_hash}:{}", point.id())
}

fn simulate(cfg: &RunConfig, point: &SweepPoint, config_hash: &str, dir: &Path, backend: Backend) -> Result<Simulated> {
    let model = build_model(cfg, point).context("building chain model")?;
    let checksum = chain_checksum(&model);
    let summary = model.summary();
    let record = match backend {
        Backend::Mps => simulate_mps(cfg, point, config_hash, dir, &model)?,
        Backend::Dense => crate::oracle_cmd::dense_record(cfg, point, &model)?,
        Backend::NibaMarkovian => crate::oracle_cmd::niba_record(cfg, point)?,
    };
    Ok(Simulated { record, checksum, summary })
}

/// Runs the MPS protocol for one point, resuming from a checkpoint when one
/// with a matching key exists.
fn simulate_mps(cfg: &RunConfig, point: &SweepPoint, config_hash: &str, dir: &Path, model: &ChainModel) -> Result<ZenoRecord> {
    let proto = cfg.protocol_for(point.tau);
    let ckpt = dir.join("checkpoint");
    let key = checkpoint_key(config_hash, point);
    let run = if cfg.run.checkpoint && ckpt.join("record.json").exists() {
        match ProtocolRun::read_checkpoint(model, &ckpt, &key) {
            Ok(r) => {
                log::info!("{}: resuming after {} cycles", point.id(), r.record().len());
                r
            }
            Err(e) => {
                log::warn!("{}: ignoring checkpoint ({e})", point.id());
                ProtocolRun::new(model, proto)?
            }
        }
    } else {
        ProtocolRun::new(model, proto)?
    };
    let id = point.id();
    let record = run.run_with(|r| {
        if cfg.run.checkpoint {
            let tmp = dir.join("checkpoint.tmp");
            let _ = std::fs::remove_dir_all(&tmp);
            r.write_checkpoint(&tmp, &key)?;
            let _ = std::fs::remove_dir_all(&ckpt);
            std::fs::rename(&tmp, &ckpt).map_err(|e| zeno_tn::zeno::ZenoError::Checkpoint(e.to_string()))?;
        }
        log::debug!("{id}: cycle {} P = {:.6e}", r.record().len(), r.record().cumulative.last().copied().unwrap_or(1.0));
        Ok(())
    })?;
    if ckpt.exists() {
        std::fs::remove_dir_all(&ckpt).with_context(|| format!("removing {}", ckpt.display()))?;
    }
    Ok(record)
}

struct Simulated {
    record: ZenoRecord,
    checksum: String,
    summary: ModelSummary,
}

/// Runs one point and writes its CSV and manifest. Never panics; failures
/// are returned in the outcome and recorded in the manifest.
pub fn run_point(cfg: &RunConfig, point: SweepPoint, config_hash: &str, root: &Path, backend: Backend) -> PointOutcome {
    let dir = run_dir(root, &point);
    let result = catch_unwind(AssertUnwindSafe(|| -> Result<Simulated> {
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        simulate(cfg, &point, config_hash, &dir, backend)
    }));
    let result = match result {
        Ok(r) => r,
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            Err(anyhow!("panic: {msg}"))
        }
    };
    let (record, checksum, summary, error) = match result {
        Ok(s) => (Some(s.record), Some(s.checksum), Some(s.summary), None),
        Err(e) => {
            log::error!("{}: {e:#}", point.id());
            (None, None, None, Some(format!("{e:#}")))
        }
    };
    let manifest = RunManifest::new(
        cfg,
        &point,
        config_hash,
        checksum,
        backend,
        if error.is_some() { RunStatus::Failed } else { RunStatus::Ok },
        error.clone(),
        summary,
    );
    let written = output::write_run(&dir, record.as_ref(), &manifest);
    if let Err(e) = written {
        log::error!("{}: writing outputs: {e:#}", point.id());
        return PointOutcome::failed(point, format!("{e:#}"));
    }
    PointOutcome { point, record, error }
}

/// Runs `job` on every point with a bounded worker pool. Results come back
/// in sweep order whatever the completion order.
pub fn parallel_map<T, F>(points: &[SweepPoint], workers: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(SweepPoint) -> T + Sync,
{
    let slots: Vec<Mutex<Option<T>>> = points.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = workers.clamp(1, points.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(&p) = points.get(k) else { break };
                let out = job(p);
                *slots[k].lock().expect("slot lock") = Some(out);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().expect("slot lock").expect("every slot filled")).collect()
}

/// Executes the whole sweep on `backend` under `root` and writes the
/// summary. Returns the outcomes in sweep order.
pub fn run_sweep_in(cfg: &RunConfig, root: &Path, backend: Backend, summary_name: &str, workers: usize) -> Result<Vec<PointOutcome>> {
    std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    let hash = cfg.hash();
    let points = cfg.sweep();
    log::info!("{} sweep points ({backend:?}) on {workers} workers, config {}", points.len(), &hash[..12]);
    let outcomes = parallel_map(&points, workers, |p| run_point(cfg, p, &hash, root, backend));
    output::write_summary(&root.join(summary_name), cfg, &outcomes)?;
    output::write_sweep_manifest(&root.join("manifest.json"), cfg, &hash, &outcomes, backend)?;
    Ok(outcomes)
}

/// The MPS sweep into the configured output directory.
pub fn run_sweep(cfg: &RunConfig, workers: usize) -> Result<Vec<PointOutcome>> {
    run_sweep_in(cfg, &cfg.output_dir, Backend::Mps, "summary.csv", workers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Beta;

    fn tiny(dir: &Path) -> RunConfig {
        let text = format!(
            r#"
output_dir = "{}"
[spectral]
alpha = [0.3]
[chain]
nodes = 40
sites = 4
near_dim = 3
far_dim = 3
[evolution]
dt = 0.05
[protocol]
tau = [0.5]
n_measurements = 4
[run]
checkpoint = true
"#,
            dir.display()
        );
        RunConfig::from_toml(&text).unwrap()
    }

    #[test]
    fn parallel_map_keeps_order() {
        let pts: Vec<SweepPoint> =
            (0..17).map(|i| SweepPoint { index: i, alpha: i as f64, beta: Beta(1.0), tau: 0.1 }).collect();
        let out = parallel_map(&pts, 4, |p| p.index * 2);
        assert_eq!(out, (0..17).map(|i| i * 2).collect::<Vec<_>>());
    }

    #[test]
    fn panics_are_isolated() {
        let pts: Vec<SweepPoint> =
            (0..3).map(|i| SweepPoint { index: i, alpha: 0.0, beta: Beta(1.0), tau: 0.1 }).collect();
        let out = parallel_map(&pts, 2, |p| {
            catch_unwind(|| {
                assert!(p.index != 1, "boom");
                p.index
            })
            .ok()
        });
        assert_eq!(out, vec![Some(0), None, Some(2)]);
    }

    #[test]
    fn resume_from_checkpoint_matches_straight_run() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny(tmp.path());
        let point = cfg.sweep()[0];
        let hash = cfg.hash();
        let straight = run_point(&cfg, point, &hash, tmp.path(), Backend::Mps).record.unwrap();

        // leave a checkpoint after two cycles, as an interrupted run would
        let model = build_model(&cfg, &point).unwrap();
        let mut run = ProtocolRun::new(&model, cfg.protocol_for(point.tau)).unwrap();
        run.next_cycle().unwrap();
        run.next_cycle().unwrap();
        let dir = run_dir(tmp.path(), &point);
        run.write_checkpoint(&dir.join("checkpoint"), &checkpoint_key(&hash, &point)).unwrap();

        let resumed = run_point(&cfg, point, &hash, tmp.path(), Backend::Mps).record.unwrap();
        assert_eq!(resumed.len(), 4);
        for (a, b) in straight.cumulative.iter().zip(&resumed.cumulative) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!(!dir.join("checkpoint").exists());
    }

    #[test]
    fn checksum_depends_on_coefficients() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny(tmp.path());
        let p = cfg.sweep()[0];
        let a = chain_checksum(&build_model(&cfg, &p).unwrap());
        let mut q = p;
        q.beta = Beta(2.0);
        let b = chain_checksum(&build_model(&cfg, &q).unwrap());
        assert_ne!(a, b);
        assert_eq!(a, chain_checksum(&build_model(&cfg, &p).unwrap()));
    }
}
