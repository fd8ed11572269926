use proptest::prelude::*;

use zeno_tn::chainmap::{map_to_chain, ChainMethod};
use zeno_tn::model::{build, BosonDims, ChainModel, ChainParams, SystemSpec};
use zeno_tn::mps::MpsState;
use zeno_tn::oracle::{blip_phases, dense_propagate, DenseInstance, NibaSpec, TimeGrid};
use zeno_tn::spectral::{Branch, DiscretizedMeasure, SpectralDensity};
use zeno_tn::tdvp::{EvolutionConfig, Evolver, Scheme};
use zeno_tn::zeno::{run_protocol, MeasurementProtocol, ProtocolMode};
use zeno_tn::C64;

fn one_over_f(alpha: f64) -> SpectralDensity<f64> {
    SpectralDensity::one_over_f(alpha, 0.1, 10.0).unwrap()
}

fn chain_model(alpha: f64, beta: f64, delta: f64, sites: usize, dims: BosonDims) -> ChainModel {
    build(SystemSpec::new(delta).unwrap(), &one_over_f(alpha), beta, &ChainParams::new(400, sites), &dims).unwrap()
}

/// Pure dephasing (Δ = 0) has the closed-form coherence `⟨σ_x(t)⟩ = exp(−Q₂(t))`
/// from the qubit in `(|e⟩ + |g⟩)/√2`. Checks the thermal split, chain mapping
/// and coupling convention end to end.
#[test]
fn pure_dephasing_coherence_is_exact() {
    for beta in [f64::INFINITY, 1.5] {
        let model = chain_model(0.1, beta, 0.0, 60, BosonDims::near_far(60, 60, 12, 8, 4));
        let locals: Vec<Vec<C64>> = model
            .dims()
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let mut v = vec![C64::new(0.0, 0.0); d];
                v[0] = C64::new(1.0, 0.0);
                if i == model.system_site() {
                    v[1] = C64::new(1.0, 0.0);
                }
                v
            })
            .collect();
        let mut state = MpsState::product(&locals).unwrap().with_limits(64, 1e-10);
        let mut ev = Evolver::new(&model, EvolutionConfig::default()).unwrap();
        let spec = NibaSpec { density: one_over_f(0.1), beta, delta: 1.0, t_grid: TimeGrid::new(0.01, 2).unwrap(), quad_tol: 1e-11 };
        for k in 1..=6 {
            ev.evolve_interval(&mut state, &model, 0.5, 50).unwrap();
            let t = 0.5 * k as f64;
            let x = state.expectation(&zeno_tn::ops::sigma_x(), model.system_site()).unwrap();
            let exact = (-blip_phases(&spec, t).unwrap().q2).exp();
            assert!((x.re - exact).abs() < 1e-5 && x.im.abs() < 1e-8, "beta {beta} t {t}: {x} vs {exact}");
        }
    }
}

#[test]
fn markovian_and_non_markovian_agree_without_bath() {
    let model = chain_model(0.0, f64::INFINITY, 1.0, 10, BosonDims::uniform(10, 10, 3));
    let evolution = EvolutionConfig { dt: 0.05, ..EvolutionConfig::default() };
    let a = run_protocol(&model, &MeasurementProtocol::new(0.5, 4, ProtocolMode::NonMarkovian, evolution).unwrap()).unwrap();
    let b = run_protocol(&model, &MeasurementProtocol::new(0.5, 4, ProtocolMode::Markovian, evolution).unwrap()).unwrap();
    for (x, y) in a.cumulative.iter().zip(&b.cumulative) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn measurement_disturbance_changes_survival() {
    let model = chain_model(1.0, f64::INFINITY, 1.0, 8, BosonDims::uniform(8, 8, 4));
    let evolution = EvolutionConfig { dt: 0.05, ..EvolutionConfig::default() };
    let a = run_protocol(&model, &MeasurementProtocol::new(0.5, 6, ProtocolMode::NonMarkovian, evolution).unwrap()).unwrap();
    let b = run_protocol(&model, &MeasurementProtocol::new(0.5, 6, ProtocolMode::Markovian, evolution).unwrap()).unwrap();
    // both agree on the first interval, then the retained bath state matters
    assert!((a.per_step[0] - b.per_step[0]).abs() < 1e-10);
    assert!((a.cumulative[5] - b.cumulative[5]).abs() > 1e-4);
    for w in b.per_step.windows(2) {
        assert!((w[0] - w[1]).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn stieltjes_and_lanczos_agree_on_random_measures(seed in proptest::collection::vec(0.05f64..1.0, 30..60), n in 2usize..12) {
        let m = seed.len();
        let nodes: Vec<f64> = (0..m).map(|k| 0.1 + 10.0 * k as f64 / m as f64).collect();
        let measure = DiscretizedMeasure::from_parts(nodes, seed);
        let a = map_to_chain(&measure, n, ChainMethod::Stieltjes, Branch::R).unwrap();
        let b = map_to_chain(&measure, n, ChainMethod::Lanczos, Branch::R).unwrap();
        prop_assert!((a.kappa0 - measure.total_weight().sqrt()).abs() < 1e-12);
        for (x, y) in a.eps.iter().zip(&b.eps) {
            prop_assert!((x - y).abs() < 1e-9);
            prop_assert!(*x >= 0.1 - 1e-12 && *x <= 10.0);
        }
        for (x, y) in a.hop.iter().zip(&b.hop) {
            prop_assert!((x - y).abs() < 1e-9);
            prop_assert!(*x > 0.0);
        }
    }

    #[test]
    fn mps_matches_dense_on_two_mode_chains(alpha in 0.05f64..1.5, finite in any::<bool>(), beta in 0.5f64..5.0, delta in 0.2f64..1.5) {
        let beta = if finite { beta } else { f64::INFINITY };
        let model = chain_model(alpha, beta, delta, 2, BosonDims::uniform(2, 2, 3));
        let mut inst = DenseInstance::new(&model).unwrap();
        let exact = dense_propagate(&mut inst, 1.0, 0.05).unwrap();
        let cfg = EvolutionConfig { dt: 0.05, scheme: Scheme::TwoSite, chi_max: usize::MAX, svd_cutoff: 0.0, ..EvolutionConfig::default() };
        let mut state = MpsState::initial_state(&model).with_limits(usize::MAX, 0.0);
        let traj = Evolver::new(&model, cfg).unwrap().evolve_interval(&mut state, &model, 1.0, 1).unwrap();
        for (k, z) in traj.sigma_z.iter().enumerate() {
            prop_assert!((z - exact.sigma_z[k + 1]).abs() < 1e-6, "{} vs {}", z, exact.sigma_z[k + 1]);
        }
    }

    #[test]
    fn survival_is_monotone_and_rates_consistent(alpha in 0.0f64..2.0, tau in 1usize..8, n in 1usize..6) {
        let tau = tau as f64 * 0.1;
        let model = chain_model(alpha, f64::INFINITY, 1.0, 4, BosonDims::uniform(4, 4, 3));
        let evolution = EvolutionConfig { dt: 0.05, ..EvolutionConfig::default() };
        let rec = run_protocol(&model, &MeasurementProtocol::new(tau, n, ProtocolMode::NonMarkovian, evolution).unwrap()).unwrap();
        let mut prev = 1.0;
        for (i, (&p, &g)) in rec.cumulative.iter().zip(&rec.gamma).enumerate() {
            prop_assert!(p <= prev + 1e-12 && p > 0.0);
            let t = (i + 1) as f64 * tau;
            prop_assert!((g - (-p.ln() / t).max(0.0)).abs() < 1e-12);
            prev = p;
        }
        let t_mid = 0.5 * (rec.times()[0] + rec.times()[rec.len() - 1]);
        let g = rec.gamma_at(t_mid).unwrap();
        let lo = rec.gamma.iter().copied().fold(f64::MAX, f64::min);
        let hi = rec.gamma.iter().copied().fold(f64::MIN, f64::max);
        prop_assert!(g >= lo - 1e-12 && g <= hi + 1e-12);
    }
}
