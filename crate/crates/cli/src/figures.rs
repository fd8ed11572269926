//! Figure harness: parameter grids for the four result figures and a
//! long-format CSV per figure.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use zeno_tn::tdvp::EvolutionConfig;
use zeno_tn::zeno::ProtocolMode;

use crate::config::{Beta, ChainConfig, OracleConfig, ProtocolConfig, RunConfig, RunOptions, SpectralConfig, SpectralKind, SystemConfig, TemperatureConfig};
use crate::output::write_json;
use crate::runner::{run_sweep, PointOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum FigureId {
    Fig2,
    Fig3,
    Fig4,
    Fig5,
}

impl FigureId {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Fig2 => "fig2",
            Self::Fig3 => "fig3",
            Self::Fig4 => "fig4",
            Self::Fig5 => "fig5",
        }
    }
}

impl std::str::FromStr for FigureId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fig2" => Ok(Self::Fig2),
            "fig3" => Ok(Self::Fig3),
            "fig4" => Ok(Self::Fig4),
            "fig5" => Ok(Self::Fig5),
            other => Err(format!("unknown figure {other:?}; expected fig2, fig3, fig4 or fig5")),
        }
    }
}

/// τ grid of the decay-rate surfaces.
pub const SURFACE_TAU: [f64; 10] = [0.15, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 2.0];
/// Time span of the survival and decay-rate figures.
pub const FIGURE_T_FINAL: f64 = 20.0;

/// One sweep belonging to a figure.
#[derive(Clone, Debug)]
pub struct FigurePart {
    pub name: String,
    pub config: RunConfig,
}

fn base(out: &Path, alpha: Vec<f64>, tau: Vec<f64>, quick: bool) -> RunConfig {
    let (chain, evolution) = if quick {
        let chain = ChainConfig { nodes: 40, sites: 6, near_dim: 4, far_dim: 3, near_sites: 2, ..ChainConfig::default() };
        (chain, EvolutionConfig { dt: 0.05, chi_max: 16, ..EvolutionConfig::default() })
    } else {
        (ChainConfig::default(), EvolutionConfig::default())
    };
    RunConfig {
        output_dir: out.to_path_buf(),
        spectral: SpectralConfig { kind: SpectralKind::OneOverF, alpha, omega_0: 0.1, omega_c: 10.0 },
        system: SystemConfig::default(),
        temperature: TemperatureConfig::default(),
        chain,
        evolution,
        protocol: ProtocolConfig { tau, n_measurements: None, t_final: Some(if quick { 4.0 } else { FIGURE_T_FINAL }), mode: ProtocolMode::NonMarkovian },
        oracle: OracleConfig::default(),
        run: RunOptions::default(),
    }
}

/// The sweeps that make up figure `id`, rooted at `out/<id>/`. `quick`
/// keeps every grid but shrinks the chain and time span for smoke runs.
pub fn figure_parts(id: FigureId, out: &Path, quick: bool) -> Vec<FigurePart> {
    let root = out.join(id.as_str());
    let part = |name: &str, cfg: RunConfig| FigurePart { name: name.to_string(), config: RunConfig { output_dir: root.join(name), ..cfg } };
    match id {
        FigureId::Fig2 => {
            let mut c = base(&root, vec![0.1, 1.0, 2.0], vec![0.5], quick);
            c.protocol.t_final = None;
            c.protocol.n_measurements = Some(20);
            vec![part("per_step", c)]
        }
        FigureId::Fig3 => {
            let non = base(&root, vec![0.1, 0.5, 1.5], vec![0.1, 0.2, 0.4, 0.8], quick);
            let mut mark = non.clone();
            mark.protocol.mode = ProtocolMode::Markovian;
            vec![part("non_markovian", non), part("markovian", mark)]
        }
        FigureId::Fig4 => vec![part("surface", base(&root, vec![0.1, 0.5, 1.0], SURFACE_TAU.to_vec(), quick))],
        FigureId::Fig5 => {
            let mut c = base(&root, vec![0.5], SURFACE_TAU.to_vec(), quick);
            c.temperature = TemperatureConfig {
                beta: None,
                beta_omega_c: Some([10.0, 15.0, 25.0, 50.0].into_iter().map(Beta).collect()),
            };
            vec![part("thermal", c)]
        }
    }
}

pub const LONG_HEADER: [&str; 12] = [
    "figure",
    "part",
    "mode",
    "alpha",
    "beta",
    "beta_omega_c",
    "tau",
    "step_index",
    "t",
    "survival_factor",
    "cumulative_survival",
    "gamma",
];

/// Plot-ready long format: one row per (run, measurement).
pub fn write_long_csv(path: &Path, id: FigureId, parts: &[(FigurePart, Vec<PointOutcome>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(LONG_HEADER)?;
    for (part, outcomes) in parts {
        let mode = match part.config.protocol.mode {
            ProtocolMode::NonMarkovian => "non_markovian",
            ProtocolMode::Markovian => "markovian",
        };
        for o in outcomes {
            let Some(r) = &o.record else { continue };
            let bwc = Beta(o.point.beta.0 * part.config.spectral.omega_c);
            let times = r.times();
            for i in 0..r.len() {
                w.write_record([
                    id.as_str().to_string(),
                    part.name.clone(),
                    mode.to_string(),
                    o.point.alpha.to_string(),
                    o.point.beta.to_string(),
                    bwc.to_string(),
                    o.point.tau.to_string(),
                    (i + 1).to_string(),
                    times[i].to_string(),
                    r.per_step[i].to_string(),
                    r.cumulative[i].to_string(),
                    r.gamma[i].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes each part's config, runs it unless `dry_run`, and emits the
/// long-format CSV. Returns the path of the long CSV (or of the figure
/// directory for a dry run) and whether any point failed.
pub fn run_figure(id: FigureId, out: &Path, quick: bool, dry_run: bool, workers: usize) -> Result<(PathBuf, bool)> {
    let parts = figure_parts(id, out, quick);
    let root = out.join(id.as_str());
    std::fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
    for p in &parts {
        p.config.validate()?;
        std::fs::create_dir_all(&p.config.output_dir)?;
        let text = toml::to_string(&p.config)?;
        std::fs::write(p.config.output_dir.join("config.toml"), text)?;
    }
    let grid: Vec<_> = parts
        .iter()
        .map(|p| serde_json::json!({ "part": p.name, "points": p.config.sweep().len(), "config_hash": p.config.hash() }))
        .collect();
    write_json(&root.join("grid.json"), &grid)?;
    if dry_run {
        return Ok((root, false));
    }
    let mut done = Vec::new();
    let mut failed = false;
    for p in parts {
        let outcomes = run_sweep(&p.config, workers)?;
        failed |= outcomes.iter().any(|o| o.error.is_some());
        done.push((p, outcomes));
    }
    let path = root.join(format!("{}_long.csv", id.as_str()));
    write_long_csv(&path, id, &done)?;
    Ok((path, failed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_match_figures() {
        let out = Path::new("/tmp/x");
        let f2 = figure_parts(FigureId::Fig2, out, false);
        assert_eq!(f2[0].config.spectral.alpha, vec![0.1, 1.0, 2.0]);
        assert_eq!(f2[0].config.protocol.tau, vec![0.5]);
        let f3 = figure_parts(FigureId::Fig3, out, false);
        assert_eq!(f3.len(), 2);
        assert_eq!(f3[0].config.protocol.tau, vec![0.1, 0.2, 0.4, 0.8]);
        let f4 = figure_parts(FigureId::Fig4, out, false);
        let tau = &f4[0].config.protocol.tau;
        assert!(tau[0] <= 0.15 && *tau.last().unwrap() >= 2.0);
        let f5 = figure_parts(FigureId::Fig5, out, false);
        let b = f5[0].config.betas().unwrap();
        assert!(b.iter().any(|x| (x.0 * 10.0 - 15.0).abs() < 1e-12));
        for id in [FigureId::Fig2, FigureId::Fig3, FigureId::Fig4, FigureId::Fig5] {
            for quick in [false, true] {
                for p in figure_parts(id, out, quick) {
                    p.config.validate().unwrap();
                }
            }
        }
    }

    #[test]
    fn ids_parse() {
        assert_eq!("fig4".parse::<FigureId>(), Ok(FigureId::Fig4));
        assert!("fig1".parse::<FigureId>().is_err());
    }
}
