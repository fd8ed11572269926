//! CSV and manifest writers.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use zeno_tn::model::ModelSummary;
use zeno_tn::zeno::{classify, ZenoRecord};

use crate::config::{Beta, RunConfig, SweepPoint};
use crate::runner::PointOutcome;

pub const CODE_VERSION: &str = concat!("zeno-cli ", env!("CARGO_PKG_VERSION"));

pub const RUN_HEADER: [&str; 5] = ["step_index", "t", "survival_factor", "cumulative_survival", "gamma"];
pub const SUMMARY_HEADER: [&str; 6] = ["alpha", "beta", "tau", "t", "gamma", "label"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Mps,
    Dense,
    NibaMarkovian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Per-run manifest written next to `run.csv`.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: &'static str,
    pub chain_checksum: Option<String>,
    pub backend: Backend,
    pub status: RunStatus,
    pub error: Option<String>,
    pub run_id: String,
    pub alpha: f64,
    pub beta: Beta,
    pub beta_delta: Option<f64>,
    pub beta_omega_c: Option<f64>,
    pub tau: f64,
    pub n_measurements: usize,
    pub delta: f64,
    pub omega_0: f64,
    pub omega_c: f64,
    pub model: Option<ModelSummary>,
}

impl RunManifest {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cfg: &RunConfig,
        point: &SweepPoint,
        config_hash: &str,
        chain_checksum: Option<String>,
        backend: Backend,
        status: RunStatus,
        error: Option<String>,
        model: Option<ModelSummary>,
    ) -> Self {
        let finite = |x: f64| if x.is_finite() { Some(x) } else { None };
        Self {
            config_hash: config_hash.to_string(),
            code_version: CODE_VERSION,
            chain_checksum,
            backend,
            status,
            error,
            run_id: point.id(),
            alpha: point.alpha,
            beta: point.beta,
            beta_delta: finite(point.beta.0 * cfg.system.delta),
            beta_omega_c: finite(point.beta.0 * cfg.spectral.omega_c),
            tau: point.tau,
            n_measurements: cfg.protocol.measurements_for(point.tau),
            delta: cfg.system.delta,
            omega_0: cfg.spectral.omega_0,
            omega_c: cfg.spectral.omega_c,
            model,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn write_run_csv(path: &Path, record: &ZenoRecord) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(RUN_HEADER)?;
    let times = record.times();
    for i in 0..record.len() {
        w.write_record([
            (i + 1).to_string(),
            times[i].to_string(),
            record.per_step[i].to_string(),
            record.cumulative[i].to_string(),
            record.gamma[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `run.csv` (when a record exists) and `manifest.json` into `dir`.
pub fn write_run(dir: &Path, record: Option<&ZenoRecord>, manifest: &RunManifest) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    if let Some(r) = record {
        write_run_csv(&dir.join("run.csv"), r)?;
    }
    write_json(&dir.join("manifest.json"), manifest)
}

/// Time at which Γ is compared across τ: the configured compare time, else
/// `t_final`, else the shortest successful run.
pub fn compare_time(cfg: &RunConfig, outcomes: &[PointOutcome]) -> Option<f64> {
    cfg.run.compare_time.or(cfg.protocol.t_final).or_else(|| {
        outcomes
            .iter()
            .filter_map(|o| o.record.as_ref())
            .filter_map(|r| r.times().last().copied())
            .min_by(f64::total_cmp)
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub alpha: f64,
    pub beta: Beta,
    pub tau: f64,
    pub t: Option<f64>,
    pub gamma: Option<f64>,
    pub label: String,
}

/// One row per sweep point, in sweep order. Within each (α, β) group the
/// label is the sign class of the τ interval to the right of the row, and
/// of the interval to the left for the largest τ. Failed runs are labelled
/// `failed`, runs that do not reach the compare time `excluded`.
pub fn summary_rows(cfg: &RunConfig, outcomes: &[PointOutcome]) -> Vec<SummaryRow> {
    let t = compare_time(cfg, outcomes);
    let mut rows: Vec<SummaryRow> = outcomes
        .iter()
        .map(|o| {
            let gamma = match (&o.record, t) {
                (Some(r), Some(t)) => r.gamma_at(t),
                _ => None,
            };
            let label = if o.error.is_some() || o.record.is_none() {
                "failed"
            } else if gamma.is_none() {
                "excluded"
            } else {
                "n/a"
            };
            SummaryRow { alpha: o.point.alpha, beta: o.point.beta, tau: o.point.tau, t, gamma, label: label.into() }
        })
        .collect();

    let mut groups: Vec<(f64, f64)> = Vec::new();
    for r in &rows {
        if !groups.iter().any(|&(a, b)| a == r.alpha && b == r.beta.0) {
            groups.push((r.alpha, r.beta.0));
        }
    }
    for (a, b) in groups {
        let mut members: Vec<usize> =
            (0..rows.len()).filter(|&k| rows[k].alpha == a && rows[k].beta.0 == b && rows[k].gamma.is_some()).collect();
        members.sort_by(|&x, &y| rows[x].tau.total_cmp(&rows[y].tau));
        members.dedup_by(|x, y| rows[*x].tau == rows[*y].tau);
        if members.len() < 2 {
            continue;
        }
        let tau: Vec<f64> = members.iter().map(|&k| rows[k].tau).collect();
        let gamma: Vec<f64> = members.iter().map(|&k| rows[k].gamma.unwrap_or(f64::NAN)).collect();
        let Ok(labels) = classify(&tau, &gamma, cfg.run.flat_tolerance) else { continue };
        for (j, &k) in members.iter().enumerate() {
            let l = labels[j.min(labels.len() - 1)].label;
            // duplicates of the same τ share the label
            for m in 0..rows.len() {
                if rows[m].alpha == a && rows[m].beta.0 == b && rows[m].tau == rows[k].tau && rows[m].gamma.is_some() {
                    rows[m].label = l.as_str().into();
                }
            }
        }
    }
    rows
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_summary(path: &Path, cfg: &RunConfig, outcomes: &[PointOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(SUMMARY_HEADER)?;
    for r in summary_rows(cfg, outcomes) {
        w.write_record([r.alpha.to_string(), r.beta.to_string(), r.tau.to_string(), opt(r.t), opt(r.gamma), r.label])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct PointEntry {
    run_id: String,
    status: RunStatus,
    error: Option<String>,
}

#[derive(Serialize)]
struct SweepManifest<'a> {
    config_hash: &'a str,
    code_version: &'static str,
    backend: Backend,
    points: Vec<PointEntry>,
    failed: usize,
    config: serde_json::Value,
}

/// Top-level manifest for a sweep; chain checksums live in each run's manifest.
pub fn write_sweep_manifest(
    path: &Path,
    cfg: &RunConfig,
    config_hash: &str,
    outcomes: &[PointOutcome],
    backend: Backend,
) -> Result<()> {
    let points: Vec<PointEntry> = outcomes
        .iter()
        .map(|o| PointEntry {
            run_id: o.point.id(),
            status: if o.error.is_some() { RunStatus::Failed } else { RunStatus::Ok },
            error: o.error.clone(),
        })
        .collect();
    let failed = points.iter().filter(|p| p.status == RunStatus::Failed).count();
    let m = SweepManifest {
        config_hash,
        code_version: CODE_VERSION,
        backend,
        points,
        failed,
        config: serde_json::from_str(&cfg.canonical())?,
    };
    write_json(path, &m)
}
