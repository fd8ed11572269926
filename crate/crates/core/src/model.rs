//! The chain-mapped thermofield Hamiltonian
//!
//! ```text
//! H = (Δ/2) σ_x
//!   + Σ_k ε_k^R d_k† d_k + Σ_k t_k^R (d_k† d_{k+1} + h.c.) + (1/2) κ₀^R σ_z (d_0† + d_0)
//!   − Σ_k ε_k^L c_k† c_k − Σ_k t_k^L (c_k† c_{k+1} + h.c.) + (1/2) κ₀^L σ_z (c_0† + c_0)
//! ```
//!
//! laid out on a line as `[L_{N−1} … L_0, system, R_0 … R_{N−1}]` so that every
//! term is nearest-neighbour. At zero temperature the L chain is absent.

use faer::Mat;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chainmap::{map_to_chain, ChainCoefficients, ChainError, ChainMethod};
use crate::ops;
use crate::spectral::{discretize, thermal_split, Branch, DiscretizedMeasure, Panels, SpectralDensity, SpectralError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("{branch} chain: {source}")]
    Chain { branch: Branch, source: ChainError },
    #[error("configuration error: {0}")]
    Config(String),
}

/// The qubit: `H_sys = (Δ/2) σ_x`, coupled through `σ_z`, prepared in `|e⟩`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub delta: f64,
}

impl SystemSpec {
    pub fn new(delta: f64) -> Result<Self, ModelError> {
        if delta.is_finite() && delta >= 0.0 {
            Ok(Self { delta })
        } else {
            Err(ModelError::Config(format!("delta must be finite and non-negative, got {delta}")))
        }
    }

    /// Amplitudes of `|e⟩` in the `σ_z` basis.
    pub fn initial_amplitudes(&self) -> [C64; 2] {
        [C64::new(1.0, 0.0), C64::new(0.0, 0.0)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Site {
    Left(usize),
    System,
    Right(usize),
}

/// Chain discretization and mapping parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    /// Gauss–Legendre nodes per panel.
    pub nodes: usize,
    pub panels: Panels,
    pub sites_right: usize,
    /// Ignored at zero temperature.
    pub sites_left: usize,
    pub method: ChainMethod,
    /// Require `total nodes ≥ 4 N` for each mapped chain.
    pub enforce_resolution: bool,
}

impl Default for ChainParams {
    /// 400 Gauss–Legendre nodes, 60 sites per chain.
    fn default() -> Self {
        Self::new(400, 60)
    }
}

impl ChainParams {
    pub fn new(nodes: usize, sites: usize) -> Self {
        Self {
            nodes,
            panels: Panels::Single,
            sites_right: sites,
            sites_left: sites,
            method: ChainMethod::Stieltjes,
            enforce_resolution: true,
        }
    }

    fn total_nodes(&self) -> usize {
        match self.panels {
            Panels::Single | Panels::Log(0) => self.nodes,
            Panels::Log(k) => self.nodes * k,
        }
    }
}

/// Fock-space truncation for every chain site.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BosonDims {
    pub right: Vec<usize>,
    pub left: Vec<usize>,
}

impl BosonDims {
    pub fn uniform(sites_right: usize, sites_left: usize, d: usize) -> Self {
        Self { right: vec![d; sites_right], left: vec![d; sites_left] }
    }

    /// `near` for the first `near_sites` sites of each chain, `far` beyond.
    pub fn near_far(sites_right: usize, sites_left: usize, near: usize, far: usize, near_sites: usize) -> Self {
        let mk = |n: usize| (0..n).map(|k| if k < near_sites { near } else { far }).collect();
        Self { right: mk(sites_right), left: mk(sites_left) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainModel {
    pub system: SystemSpec,
    pub right: ChainCoefficients<f64>,
    pub left: Option<ChainCoefficients<f64>>,
    layout: Vec<Site>,
    dims: Vec<usize>,
}

/// Builds the model: thermal split, discretization and chain mapping per branch.
pub fn build(
    system: SystemSpec,
    density: &SpectralDensity<f64>,
    beta: f64,
    chain: &ChainParams,
    dims: &BosonDims,
) -> Result<ChainModel, ModelError> {
    let (left_density, right_density) = thermal_split(density, beta)?;
    let zero_temperature = beta.is_infinite();

    let map_branch = |branch: Branch, sites: usize| -> Result<ChainCoefficients<f64>, ModelError> {
        if chain.enforce_resolution && chain.total_nodes() < 4 * sites {
            return Err(ModelError::Config(format!(
                "{branch} chain: {} quadrature nodes is fewer than 4 N = {}",
                chain.total_nodes(),
                4 * sites
            )));
        }
        let thermal = match branch {
            Branch::L => left_density,
            Branch::R => right_density,
        };
        let wrap = |source| ModelError::Chain { branch, source };
        if density.coupling() == 0.0 {
            // Free chain: coefficients from the unit-coupling shape, no edge coupling.
            let unit = density.with_coupling(1.0);
            let (l1, r1) = thermal_split(&unit, beta)?;
            let shape = discretize(if branch == Branch::L { &l1 } else { &r1 }, chain.nodes, chain.panels)?;
            let mut c = map_to_chain(&shape, sites, chain.method, branch).map_err(wrap)?;
            c.kappa0 = 0.0;
            return Ok(c);
        }
        let measure = discretize(&thermal, chain.nodes, chain.panels)?;
        map_to_chain(&measure, sites, chain.method, branch).map_err(wrap)
    };

    let right = map_branch(Branch::R, chain.sites_right)?;
    let left = if zero_temperature { None } else { Some(map_branch(Branch::L, chain.sites_left)?) };
    ChainModel::from_parts(system, right, left, dims)
}

impl ChainModel {
    /// Assembles a model from explicit coefficients. `dims.left` is ignored when
    /// `left` is `None`.
    pub fn from_parts(
        system: SystemSpec,
        right: ChainCoefficients<f64>,
        left: Option<ChainCoefficients<f64>>,
        dims: &BosonDims,
    ) -> Result<Self, ModelError> {
        let left = left.filter(|c| !c.is_empty());
        let nl = left.as_ref().map_or(0, |c| c.len());
        let nr = right.len();
        if dims.right.len() != nr {
            return Err(ModelError::Config(format!(
                "right chain has {nr} sites but {} local dimensions were given",
                dims.right.len()
            )));
        }
        if nl > 0 && dims.left.len() != nl {
            return Err(ModelError::Config(format!(
                "left chain has {nl} sites but {} local dimensions were given",
                dims.left.len()
            )));
        }
        let left_dims = if nl > 0 { &dims.left[..] } else { &[][..] };
        if let Some(&d) = dims.right.iter().chain(left_dims).find(|&&d| d < 2) {
            return Err(ModelError::Config(format!("local dimension {d} < 2")));
        }
        let mut layout = Vec::with_capacity(nl + 1 + nr);
        let mut site_dims = Vec::with_capacity(nl + 1 + nr);
        for k in (0..nl).rev() {
            layout.push(Site::Left(k));
            site_dims.push(dims.left[k]);
        }
        layout.push(Site::System);
        site_dims.push(2);
        for k in 0..nr {
            layout.push(Site::Right(k));
            site_dims.push(dims.right[k]);
        }
        Ok(Self { system, right, left, layout, dims: site_dims })
    }

    pub fn n_sites(&self) -> usize {
        self.layout.len()
    }

    pub fn layout(&self) -> &[Site] {
        &self.layout
    }

    /// Physical dimension of every site in layout order (system = 2).
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Bosonic truncations of the chain sites, in layout order.
    pub fn local_dims(&self) -> Vec<usize> {
        self.layout.iter().zip(&self.dims).filter(|(s, _)| **s != Site::System).map(|(_, &d)| d).collect()
    }

    pub fn system_site(&self) -> usize {
        self.left.as_ref().map_or(0, |c| c.len())
    }

    pub fn position(&self, site: Site) -> Option<usize> {
        self.layout.iter().position(|&s| s == site)
    }

    /// Total Hilbert-space dimension (may saturate for large models).
    pub fn hilbert_dim(&self) -> usize {
        self.dims.iter().fold(1usize, |acc, &d| acc.saturating_mul(d))
    }

    /// Ordered nearest-neighbour term list. The system carries a one-site term;
    /// every chain site's on-site energy is folded into the two-site term on the
    /// bond connecting it towards the system.
    pub fn nearest_neighbor_terms(&self) -> Vec<Term> {
        let sys = self.system_site();
        let half_delta = 0.5 * self.system.delta;
        let mut terms = vec![Term::OneSite { site: sys, op: ops::scaled(&ops::sigma_x(), half_delta) }];

        let r = &self.right;
        for k in 0..r.len() {
            let pos = sys + 1 + k;
            let d = self.dims[pos];
            let onsite = Some(ops::scaled(&ops::number(d), r.eps[k]));
            let products = if k == 0 {
                coupling_products(ops::scaled(&ops::sigma_z(), 0.5 * r.kappa0), ops::displacement(d), r.kappa0)
            } else {
                hopping_products(self.dims[pos - 1], d, r.hop[k - 1])
            };
            terms.push(Term::TwoSite { site: pos - 1, onsite_left: None, onsite_right: onsite, products });
        }

        if let Some(l) = &self.left {
            for k in 0..l.len() {
                let pos = sys - 1 - k;
                let d = self.dims[pos];
                let onsite = Some(ops::scaled(&ops::number(d), -l.eps[k]));
                let products = if k == 0 {
                    coupling_products(ops::scaled(&ops::displacement(d), 0.5 * l.kappa0), ops::sigma_z(), l.kappa0)
                } else {
                    hopping_products(d, self.dims[pos + 1], -l.hop[k - 1])
                };
                terms.push(Term::TwoSite { site: pos, onsite_left: onsite, onsite_right: None, products });
            }
        }
        terms
    }

    /// Per-site on-site operators and per-bond operator products, the form
    /// consumed by the effective-Hamiltonian contractions.
    pub fn local_hamiltonian(&self) -> LocalHamiltonian {
        let n = self.n_sites();
        let mut onsite: Vec<Mat<C64>> = self.dims.iter().map(|&d| Mat::zeros(d, d)).collect();
        let mut bonds: Vec<Vec<OpPair>> = vec![Vec::new(); n.saturating_sub(1)];
        for term in self.nearest_neighbor_terms() {
            match term {
                Term::OneSite { site, op } => onsite[site] += &op,
                Term::TwoSite { site, onsite_left, onsite_right, products } => {
                    if let Some(h) = onsite_left {
                        onsite[site] += &h;
                    }
                    if let Some(h) = onsite_right {
                        onsite[site + 1] += &h;
                    }
                    bonds[site].extend(products);
                }
            }
        }
        LocalHamiltonian { onsite, bonds }
    }

    pub fn summary(&self) -> ModelSummary {
        ModelSummary {
            sites: self.n_sites(),
            system_site: self.system_site(),
            delta: self.system.delta,
            dims: self.dims.clone(),
            kappa0_right: self.right.kappa0,
            kappa0_left: self.left.as_ref().map(|c| c.kappa0),
            eps_right: self.right.eps.clone(),
            hop_right: self.right.hop.clone(),
            eps_left: self.left.as_ref().map(|c| c.eps.clone()),
            hop_left: self.left.as_ref().map(|c| c.hop.clone()),
        }
    }
}

fn coupling_products(first: Mat<C64>, second: Mat<C64>, kappa0: f64) -> Vec<OpPair> {
    if kappa0 == 0.0 {
        Vec::new()
    } else {
        vec![OpPair { left: first, right: second }]
    }
}

fn hopping_products(d_left: usize, d_right: usize, t: f64) -> Vec<OpPair> {
    vec![
        OpPair { left: ops::scaled(&ops::creation(d_left), t), right: ops::annihilation(d_right) },
        OpPair { left: ops::scaled(&ops::annihilation(d_left), t), right: ops::creation(d_right) },
    ]
}

/// `left ⊗ right` acting on sites `(i, i+1)`.
#[derive(Clone, Debug)]
pub struct OpPair {
    pub left: Mat<C64>,
    pub right: Mat<C64>,
}

#[derive(Clone, Debug)]
pub enum Term {
    OneSite {
        site: usize,
        op: Mat<C64>,
    },
    /// Acts on `(site, site + 1)`.
    TwoSite {
        site: usize,
        onsite_left: Option<Mat<C64>>,
        onsite_right: Option<Mat<C64>>,
        products: Vec<OpPair>,
    },
}

impl Term {
    pub fn sites(&self) -> Vec<usize> {
        match self {
            Term::OneSite { site, .. } => vec![*site],
            Term::TwoSite { site, .. } => vec![*site, site + 1],
        }
    }

    /// Dense local matrix. Two-site terms use the merged index
    /// `s_left + d_left · s_right`.
    pub fn local_matrix(&self) -> Mat<C64> {
        match self {
            Term::OneSite { op, .. } => op.clone(),
            Term::TwoSite { onsite_left, onsite_right, products, .. } => {
                let (d1, d2) = match products.first() {
                    Some(p) => (p.left.nrows(), p.right.nrows()),
                    None => (
                        onsite_left.as_ref().map_or(0, |m| m.nrows()),
                        onsite_right.as_ref().map_or(0, |m| m.nrows()),
                    ),
                };
                assert!(d1 > 0 && d2 > 0, "two-site term with undetermined dimensions");
                let mut m = Mat::<C64>::zeros(d1 * d2, d1 * d2);
                if let Some(h) = onsite_left {
                    m += ops::kron_fast_slow(h, &ops::identity(d2));
                }
                if let Some(h) = onsite_right {
                    m += ops::kron_fast_slow(&ops::identity(d1), h);
                }
                for p in products {
                    m += ops::kron_fast_slow(&p.left, &p.right);
                }
                m
            }
        }
    }
}

/// Hamiltonian grouped for effective-operator contractions.
#[derive(Clone, Debug)]
pub struct LocalHamiltonian {
    pub onsite: Vec<Mat<C64>>,
    /// `bonds[i]` holds the products acting on `(i, i+1)`.
    pub bonds: Vec<Vec<OpPair>>,
}

/// Dense Hamiltonian reassembled from a term list. The full basis index puts
/// site 0 fastest: `idx = Σ_i s_i Π_{j<i} d_j`.
pub fn assemble_dense(terms: &[Term], dims: &[usize]) -> Mat<C64> {
    let total: usize = dims.iter().product();
    let mut strides = vec![1usize; dims.len()];
    for i in 1..dims.len() {
        strides[i] = strides[i - 1] * dims[i - 1];
    }
    let mut h = Mat::<C64>::zeros(total, total);
    for term in terms {
        let first = term.sites()[0];
        let local = term.local_matrix();
        let dl = local.nrows();
        let stride = strides[first];
        for col in 0..total {
            let s = (col / stride) % dl;
            let base = col - s * stride;
            for s_new in 0..dl {
                let v = local[(s_new, s)];
                if v != C64::new(0.0, 0.0) {
                    h[(base + s_new * stride, col)] += v;
                }
            }
        }
    }
    h
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub sites: usize,
    pub system_site: usize,
    pub delta: f64,
    pub dims: Vec<usize>,
    pub kappa0_right: f64,
    pub kappa0_left: Option<f64>,
    pub eps_right: Vec<f64>,
    pub hop_right: Vec<f64>,
    pub eps_left: Option<Vec<f64>>,
    pub hop_left: Option<Vec<f64>>,
}

/// Total weight of a branch measure, useful for summaries.
pub fn branch_weight(density: &SpectralDensity<f64>, beta: f64, branch: Branch, nodes: usize) -> Result<f64, ModelError> {
    let (l, r) = thermal_split(density, beta)?;
    let m: DiscretizedMeasure<f64> = discretize(if branch == Branch::L { &l } else { &r }, nodes, Panels::Single)?;
    Ok(m.total_weight())
}
