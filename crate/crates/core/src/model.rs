//! Model parameters, disorder sampling, the Hamiltonian, and gauge
//! transformations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_family, CouplingFamily, FamilyKind, LatticeKind, LatticeSpec};
use crate::rng::{coupling_word_pos, standard_normal, Domain, StreamId};
use crate::stats::CompensatedSum;

/// Relative tolerance for Nishimori-manifold membership and ratio agreement.
pub const NISHIMORI_RTOL: f64 = 1e-12;

/// One disorder species: Gaussian couplings on `B_p` with mean `mu` and
/// standard deviation `delta` (before mean-field rescaling).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Species {
    pub p: usize,
    pub delta: f64,
    pub mu: f64,
}

impl Species {
    pub fn new(p: usize, delta: f64, mu: f64) -> Self {
        Self { p, delta, mu }
    }

    /// Random couplings (`delta > 0`) take part in the Nishimori condition.
    pub fn is_active(&self) -> bool {
        self.delta > 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParameters {
    beta: f64,
    species: Vec<Species>,
    lattice_kind: LatticeKind,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= NISHIMORI_RTOL * a.abs().max(b.abs())
}

impl ModelParameters {
    pub fn new(beta: f64, species: Vec<Species>, lattice_kind: LatticeKind) -> Result<Self> {
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::InvalidParameters(format!(
                "beta must be finite and >= 0, got {beta}"
            )));
        }
        if species.is_empty() {
            return Err(Error::InvalidParameters(
                "at least one species is required".into(),
            ));
        }
        for (k, s) in species.iter().enumerate() {
            if s.p == 0 {
                return Err(Error::InvalidParameters("species p must be positive".into()));
            }
            if !(s.delta.is_finite() && s.delta >= 0.0) {
                return Err(Error::InvalidParameters(format!(
                    "species p={}: delta must be finite and >= 0",
                    s.p
                )));
            }
            if !(s.mu.is_finite() && s.mu >= 0.0) {
                return Err(Error::InvalidParameters(format!(
                    "species p={}: mu must be finite and >= 0",
                    s.p
                )));
            }
            if species[..k].iter().any(|t| t.p == s.p) {
                return Err(Error::InvalidParameters(format!(
                    "species p={} listed twice",
                    s.p
                )));
            }
        }
        Ok(Self {
            beta,
            species,
            lattice_kind,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn species(&self) -> &[Species] {
        &self.species
    }

    pub fn lattice_kind(&self) -> LatticeKind {
        self.lattice_kind
    }

    pub fn species_for(&self, p: usize) -> Option<&Species> {
        self.species.iter().find(|s| s.p == p)
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(beta, self.species.clone(), self.lattice_kind)
    }

    pub fn with_species(&self, species: Species) -> Result<Self> {
        let mut all = self.species.clone();
        match all.iter_mut().find(|s| s.p == species.p) {
            Some(slot) => *slot = species,
            None => all.push(species),
        }
        Self::new(self.beta, all, self.lattice_kind)
    }

    /// `beta * delta_p^2 == mu_p` for every active species.
    pub fn on_nishimori(&self) -> bool {
        let active: Vec<&Species> = self.species.iter().filter(|s| s.is_active()).collect();
        !active.is_empty() && active.iter().all(|s| close(self.beta * s.delta * s.delta, s.mu))
    }

    pub fn nishimori_beta(&self) -> Result<f64> {
        nishimori_beta(self)
    }
}

/// The common ratio `mu_p / delta_p^2` over active species.
pub fn nishimori_beta(params: &ModelParameters) -> Result<f64> {
    let mut first: Option<(usize, f64)> = None;
    for s in params.species.iter().filter(|s| s.is_active()) {
        let ratio = s.mu / (s.delta * s.delta);
        match first {
            None => first = Some((s.p, ratio)),
            Some((p_a, ratio_a)) if !close(ratio_a, ratio) => {
                return Err(Error::InconsistentNishimori {
                    p_a,
                    ratio_a,
                    p_b: s.p,
                    ratio_b: ratio,
                })
            }
            Some(_) => {}
        }
    }
    first.map(|(_, r)| r).ok_or(Error::NoActiveSpecies)
}

/// A lattice, its parameters, and one coupling family per species (same order).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    lattice: LatticeSpec,
    params: ModelParameters,
    families: Vec<CouplingFamily>,
}

impl Model {
    pub fn new(lattice: LatticeSpec, params: ModelParameters, families: Vec<CouplingFamily>) -> Result<Self> {
        if params.lattice_kind() != lattice.kind() {
            return Err(Error::InvalidParameters(
                "parameter lattice kind does not match the lattice".into(),
            ));
        }
        if families.len() != params.species().len() {
            return Err(Error::InvalidParameters(format!(
                "{} families for {} species",
                families.len(),
                params.species().len()
            )));
        }
        for (s, f) in params.species().iter().zip(&families) {
            if s.p != f.p() {
                return Err(Error::InvalidParameters(format!(
                    "species p={} paired with a family of p={}",
                    s.p,
                    f.p()
                )));
            }
            f.check_sites(lattice.num_sites())?;
        }
        Ok(Self {
            lattice,
            params,
            families,
        })
    }

    /// Uses the default family kind for every species.
    pub fn standard(lattice: LatticeSpec, params: ModelParameters) -> Result<Self> {
        let kinds = vec![None; params.species().len()];
        Self::with_kinds(lattice, params, &kinds)
    }

    /// `kinds[k]` overrides the family kind of species `k`.
    pub fn with_kinds(
        lattice: LatticeSpec,
        params: ModelParameters,
        kinds: &[Option<FamilyKind>],
    ) -> Result<Self> {
        let families = params
            .species()
            .iter()
            .zip(kinds)
            .map(|(s, kind)| {
                let kind = kind
                    .or_else(|| FamilyKind::default_for(s.p, lattice.kind()))
                    .ok_or_else(|| Error::InvalidFamily(format!("no default family for p={}", s.p)))?;
                build_family(&lattice, kind, s.p)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(lattice, params, families)
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.lattice
    }

    pub fn params(&self) -> &ModelParameters {
        &self.params
    }

    pub fn families(&self) -> &[CouplingFamily] {
        &self.families
    }

    pub fn num_sites(&self) -> usize {
        self.lattice.num_sites()
    }

    pub fn beta(&self) -> f64 {
        self.params.beta()
    }

    pub fn family(&self, p: usize) -> Result<&CouplingFamily> {
        self.families
            .iter()
            .find(|f| f.p() == p)
            .ok_or(Error::UnknownFamily(p))
    }

    pub fn with_params(&self, params: ModelParameters) -> Result<Self> {
        Self::new(self.lattice.clone(), params, self.families.clone())
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        self.with_params(self.params.with_beta(beta)?)
    }

    /// Rebuilds the model on a lattice of another side, keeping family kinds.
    pub fn with_side(&self, side: usize) -> Result<Self> {
        let lattice = self.lattice.with_side(side)?;
        let kinds: Vec<Option<FamilyKind>> = self
            .families
            .iter()
            .map(|f| match f.kind() {
                FamilyKind::Custom => None,
                k => Some(k),
            })
            .collect();
        Self::with_kinds(lattice, self.params.clone(), &kinds)
    }

    /// Mean of one coupling of species `s` (`L^{1-p} mu` in mean field).
    pub fn coupling_mean(&self, s: &Species) -> f64 {
        match self.lattice.kind() {
            LatticeKind::ShortRange => s.mu,
            LatticeKind::MeanField => s.mu * (self.lattice.side() as f64).powi(1 - s.p as i32),
        }
    }

    /// Standard deviation of one coupling (`L^{(1-p)/2} delta` in mean field).
    pub fn coupling_std(&self, s: &Species) -> f64 {
        match self.lattice.kind() {
            LatticeKind::ShortRange => s.delta,
            LatticeKind::MeanField => s.delta * (self.lattice.side() as f64).powf((1.0 - s.p as f64) / 2.0),
        }
    }

    pub fn sample_disorder(&self, provenance: Provenance) -> DisorderRealization {
        sample_disorder(self, provenance)
    }

    pub fn hamiltonian(&self, spins: &[i8], disorder: &DisorderRealization) -> f64 {
        hamiltonian(spins, disorder, &self.families)
    }

    /// Disorder realization with every coupling at its mean.
    pub fn mean_disorder(&self) -> DisorderRealization {
        let species = self
            .params
            .species()
            .iter()
            .zip(&self.families)
            .map(|(s, f)| SpeciesCouplings {
                p: s.p,
                couplings: vec![self.coupling_mean(s); f.len()],
            })
            .collect();
        DisorderRealization {
            seed: 0,
            index: 0,
            species,
        }
    }
}

/// Where a realization comes from: master seed and realization index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub index: u64,
}

impl Provenance {
    pub fn new(seed: u64, index: u64) -> Self {
        Self { seed, index }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesCouplings {
    pub p: usize,
    #[serde(rename = "J")]
    pub couplings: Vec<f64>,
}

/// One sampled coupling vector `J = (J_X^p)`, indexed like the families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderRealization {
    seed: u64,
    index: u64,
    species: Vec<SpeciesCouplings>,
}

impl DisorderRealization {
    pub fn new(provenance: Provenance, species: Vec<SpeciesCouplings>) -> Self {
        Self {
            seed: provenance.seed,
            index: provenance.index,
            species,
        }
    }

    pub fn provenance(&self) -> Provenance {
        Provenance::new(self.seed, self.index)
    }

    pub fn species(&self) -> &[SpeciesCouplings] {
        &self.species
    }

    pub fn couplings(&self, p: usize) -> Option<&[f64]> {
        self.species
            .iter()
            .find(|s| s.p == p)
            .map(|s| s.couplings.as_slice())
    }

    pub fn couplings_mut(&mut self, p: usize) -> Option<&mut Vec<f64>> {
        self.species
            .iter_mut()
            .find(|s| s.p == p)
            .map(|s| &mut s.couplings)
    }

    /// Checks that the vectors line up with a model's families.
    pub fn check_against(&self, model: &Model) -> Result<()> {
        let ok = self.species.len() == model.families().len()
            && self
                .species
                .iter()
                .zip(model.families())
                .all(|(s, f)| s.p == f.p() && s.couplings.len() == f.len());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameters(
                "disorder realization does not match the model's families".into(),
            ))
        }
    }
}

/// `J_X^p = std_p * g + mean_p` with `g` drawn at a stream position fixed by
/// (seed, realization index, p, range index).
pub fn sample_disorder(model: &Model, provenance: Provenance) -> DisorderRealization {
    let id = StreamId::new(provenance.seed, Domain::Disorder, provenance.index);
    let species = model
        .params()
        .species()
        .iter()
        .zip(model.families())
        .map(|(s, f)| {
            let mean = model.coupling_mean(s);
            let std = model.coupling_std(s);
            let couplings = if std == 0.0 {
                vec![mean; f.len()]
            } else {
                let mut rng = id.rng_at(coupling_word_pos(s.p, 0));
                (0..f.len())
                    .map(|_| std * standard_normal(&mut rng) + mean)
                    .collect()
            };
            SpeciesCouplings { p: s.p, couplings }
        })
        .collect();
    DisorderRealization::new(provenance, species)
}

#[inline]
fn parity(spins: &[i8], range: &[usize]) -> i8 {
    range.iter().fold(1i8, |acc, &i| acc * spins[i])
}

/// `H = -sum_p sum_{X in B_p} J_X^p sigma_X` with compensated accumulation.
///
/// Panics if a range refers to a site outside `spins`.
pub fn hamiltonian(spins: &[i8], disorder: &DisorderRealization, families: &[CouplingFamily]) -> f64 {
    let mut acc = CompensatedSum::new();
    for (sc, fam) in disorder.species.iter().zip(families) {
        for (j, range) in sc.couplings.iter().zip(fam.ranges()) {
            acc.add(-j * f64::from(parity(spins, range)));
        }
    }
    acc.value()
}

/// A gauge configuration `tau` in {-1, +1}^N.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<i8>", into = "Vec<i8>")]
pub struct GaugeConfiguration(Vec<i8>);

impl GaugeConfiguration {
    pub fn new(tau: Vec<i8>) -> Result<Self> {
        if tau.iter().any(|&t| t != 1 && t != -1) {
            return Err(Error::InvalidParameters("gauge entries must be +1 or -1".into()));
        }
        Ok(Self(tau))
    }

    pub fn identity(n: usize) -> Self {
        Self(vec![1; n])
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `tau_X`.
    pub fn parity(&self, range: &[usize]) -> i8 {
        parity(&self.0, range)
    }

    /// Site-wise product `sigma tau`.
    pub fn apply(&self, spins: &[i8]) -> Vec<i8> {
        spins.iter().zip(&self.0).map(|(s, t)| s * t).collect()
    }
}

impl TryFrom<Vec<i8>> for GaugeConfiguration {
    type Error = Error;

    fn try_from(v: Vec<i8>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<GaugeConfiguration> for Vec<i8> {
    fn from(g: GaugeConfiguration) -> Self {
        g.0
    }
}

/// `J_X -> J_X tau_X`.
pub fn gauge_transform(
    disorder: &DisorderRealization,
    tau: &GaugeConfiguration,
    families: &[CouplingFamily],
) -> DisorderRealization {
    let species = disorder
        .species
        .iter()
        .zip(families)
        .map(|(sc, fam)| SpeciesCouplings {
            p: sc.p,
            couplings: sc
                .couplings
                .iter()
                .zip(fam.ranges())
                .map(|(j, r)| j * f64::from(tau.parity(r)))
                .collect(),
        })
        .collect();
    DisorderRealization {
        seed: disorder.seed,
        index: disorder.index,
        species,
    }
}

/// `sum_p sum_X (mu_p / delta_p^2) J_X tau_X`: the log of the factor by which
/// the coupling density changes under the gauge transformation.
///
/// The ratio `mu/delta^2` is invariant under mean-field rescaling, so the
/// same expression holds for both lattice kinds.
pub fn gauge_log_weight(
    disorder: &DisorderRealization,
    tau: &GaugeConfiguration,
    params: &ModelParameters,
    families: &[CouplingFamily],
) -> Result<f64> {
    let mut acc = CompensatedSum::new();
    for (sc, fam) in disorder.species.iter().zip(families) {
        let s = params.species_for(sc.p).ok_or(Error::UnknownFamily(sc.p))?;
        if s.mu == 0.0 {
            continue;
        }
        if s.delta == 0.0 {
            return Err(Error::DegenerateDensity(s.p));
        }
        let ratio = s.mu / (s.delta * s.delta);
        for (j, r) in sc.couplings.iter().zip(fam.ranges()) {
            acc.add(ratio * j * f64::from(tau.parity(r)));
        }
    }
    Ok(acc.value())
}

/// Flattened couplings with a site -> couplings incidence list, used by the
/// enumeration and sampling kernels.
#[derive(Clone, Debug)]
pub struct CouplingTable {
    n_sites: usize,
    values: Vec<f64>,
    range_offsets: Vec<usize>,
    range_sites: Vec<u32>,
    site_offsets: Vec<usize>,
    site_couplings: Vec<u32>,
}

impl CouplingTable {
    pub fn new(model: &Model, disorder: &DisorderRealization) -> Result<Self> {
        disorder.check_against(model)?;
        let n_sites = model.num_sites();
        let mut values = Vec::new();
        let mut range_offsets = vec![0];
        let mut range_sites = Vec::new();
        for (sc, fam) in disorder.species.iter().zip(model.families()) {
            for (j, r) in sc.couplings.iter().zip(fam.ranges()) {
                if *j == 0.0 {
                    continue;
                }
                values.push(*j);
                range_sites.extend(r.iter().map(|&s| s as u32));
                range_offsets.push(range_sites.len());
            }
        }
        let mut degree = vec![0usize; n_sites];
        for &s in &range_sites {
            degree[s as usize] += 1;
        }
        let mut site_offsets = vec![0; n_sites + 1];
        for i in 0..n_sites {
            site_offsets[i + 1] = site_offsets[i] + degree[i];
        }
        let mut fill = site_offsets.clone();
        let mut site_couplings = vec![0u32; range_sites.len()];
        for c in 0..values.len() {
            for &s in &range_sites[range_offsets[c]..range_offsets[c + 1]] {
                site_couplings[fill[s as usize]] = c as u32;
                fill[s as usize] += 1;
            }
        }
        Ok(Self {
            n_sites,
            values,
            range_offsets,
            range_sites,
            site_offsets,
            site_couplings,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// Number of nonzero couplings.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, c: usize) -> f64 {
        self.values[c]
    }

    pub fn sites(&self, c: usize) -> &[u32] {
        &self.range_sites[self.range_offsets[c]..self.range_offsets[c + 1]]
    }

    pub fn incident(&self, site: usize) -> &[u32] {
        &self.site_couplings[self.site_offsets[site]..self.site_offsets[site + 1]]
    }

    #[inline]
    fn product(&self, c: usize, spins: &[i8]) -> i8 {
        self.sites(c).iter().fold(1i8, |acc, &s| acc * spins[s as usize])
    }

    pub fn energy(&self, spins: &[i8]) -> f64 {
        let mut acc = CompensatedSum::new();
        for c in 0..self.values.len() {
            acc.add(-self.values[c] * f64::from(self.product(c, spins)));
        }
        acc.value()
    }

    /// `H(after flipping site) - H(before)`.
    #[inline]
    pub fn flip_delta(&self, spins: &[i8], site: usize) -> f64 {
        let mut d = 0.0;
        for &c in self.incident(site) {
            let c = c as usize;
            d += self.values[c] * f64::from(self.product(c, spins));
        }
        2.0 * d
    }
}
