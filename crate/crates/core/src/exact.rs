//! Exact Gibbs states by full enumeration.
//!
//! Energies of all `2^N` configurations are produced by a Gray-code walk
//! (one spin flip per step). The normalized Boltzmann weights are then
//! Walsh-Hadamard transformed in place, which turns the probability vector
//! into the table of every correlation: entry `M` holds `<sigma_M>` where
//! `M` is the bit mask of the site set. All multi-point and multi-replica
//! queries become table lookups.

use crate::error::{Error, Result};
use crate::geometry::{site_mask, CouplingFamily};
use crate::model::{CouplingTable, DisorderRealization, Model};
use crate::observable::Observable;
use crate::stats::CompensatedSum;

/// Largest system enumerated by default (16.7M configurations).
pub const DEFAULT_MAX_SITES: usize = 24;

/// Gray-code steps between full energy recomputations.
const RESYNC_EVERY: usize = 1 << 12;

/// Enumeration-backed Gibbs state of one realization at one temperature.
#[derive(Clone, Debug)]
pub struct ExactGibbs {
    n_sites: usize,
    beta: f64,
    log_z: f64,
    mean_energy: f64,
    probability_mass: f64,
    spectrum: Vec<f64>,
}

/// `(<R_12>, <R_12^2>, <R_12 R_13>)` for one family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OverlapMoments {
    pub r: f64,
    pub r2: f64,
    pub r12_r13: f64,
}

/// Energies of all configurations, indexed by the configuration bit mask
/// (bit `i` set means `sigma_i = -1`).
pub fn enumerate_energies(model: &Model, disorder: &DisorderRealization) -> Result<Vec<f64>> {
    enumerate_energies_with_limit(model, disorder, DEFAULT_MAX_SITES)
}

fn enumerate_energies_with_limit(
    model: &Model,
    disorder: &DisorderRealization,
    limit: usize,
) -> Result<Vec<f64>> {
    let n = model.num_sites();
    if n > limit || n > 40 {
        return Err(Error::Capacity { sites: n, limit });
    }
    let table = CouplingTable::new(model, disorder)?;
    let total = 1usize << n;
    let mut energies = vec![0.0; total];
    let mut spins = vec![1i8; n];
    let mut e = table.energy(&spins);
    energies[0] = e;
    for k in 1..total {
        let i = k.trailing_zeros() as usize;
        e += table.flip_delta(&spins, i);
        spins[i] = -spins[i];
        if k % RESYNC_EVERY == 0 {
            e = table.energy(&spins);
        }
        energies[k ^ (k >> 1)] = e;
    }
    Ok(energies)
}

/// In-place Walsh-Hadamard transform (unnormalized).
fn walsh_hadamard(values: &mut [f64]) {
    let n = values.len();
    let mut h = 1;
    while h < n {
        for block in values.chunks_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
}

impl ExactGibbs {
    pub fn new(model: &Model, disorder: &DisorderRealization, beta: f64) -> Result<Self> {
        Self::with_limit(model, disorder, beta, DEFAULT_MAX_SITES)
    }

    pub fn with_limit(
        model: &Model,
        disorder: &DisorderRealization,
        beta: f64,
        limit: usize,
    ) -> Result<Self> {
        let mut weights = enumerate_energies_with_limit(model, disorder, limit)?;
        let energies_sum_needed = weights.clone();
        // log-sum-exp anchored at the largest log-weight
        let anchor = weights
            .iter()
            .map(|&e| -beta * e)
            .fold(f64::NEG_INFINITY, f64::max);
        let z: CompensatedSum = weights.iter().map(|&e| (-beta * e - anchor).exp()).collect();
        let log_z = anchor + z.value().ln();

        let mut mass = CompensatedSum::new();
        let mut energy = CompensatedSum::new();
        for (w, &e) in weights.iter_mut().zip(&energies_sum_needed) {
            let prob = (-beta * e - log_z).exp();
            *w = prob;
            mass.add(prob);
            energy.add(prob * e);
        }
        walsh_hadamard(&mut weights);
        weights[0] = 1.0;
        Ok(Self {
            n_sites: model.num_sites(),
            beta,
            log_z,
            mean_energy: energy.value(),
            probability_mass: mass.value(),
            spectrum: weights,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `log Z`.
    pub fn log_partition(&self) -> f64 {
        self.log_z
    }

    /// `psi_L = log Z / |Lambda_L|`.
    pub fn psi(&self) -> f64 {
        self.log_z / self.n_sites as f64
    }

    /// `<H>`.
    pub fn mean_energy(&self) -> f64 {
        self.mean_energy
    }

    /// Sum of the normalized Boltzmann weights before the transform.
    pub fn probability_mass(&self) -> f64 {
        self.probability_mass
    }

    #[inline]
    pub fn correlation_mask(&self, mask: u64) -> f64 {
        self.spectrum[mask as usize]
    }

    fn mask_of(&self, sites: &[usize]) -> Result<u64> {
        if let Some(&site) = sites.iter().find(|&&s| s >= self.n_sites) {
            return Err(Error::InvalidSite {
                site,
                n_sites: self.n_sites,
            });
        }
        Ok(site_mask(sites))
    }

    /// `<sigma_X>`; the empty set gives 1.
    pub fn correlation(&self, sites: &[usize]) -> Result<f64> {
        Ok(self.correlation_mask(self.mask_of(sites)?))
    }

    /// `<sigma_X sigma_Y> - <sigma_X><sigma_Y>`.
    pub fn truncated_k1(&self, x: &[usize], y: &[usize]) -> Result<f64> {
        let (mx, my) = (self.mask_of(x)?, self.mask_of(y)?);
        Ok(self.correlation_mask(mx ^ my) - self.correlation_mask(mx) * self.correlation_mask(my))
    }

    fn family_masks(&self, family: &CouplingFamily) -> Result<Vec<u64>> {
        family.check_sites(self.n_sites)?;
        Ok(family.masks())
    }

    /// `<m^p>` for `k = 1`, `<(m^p)^2>` for `k = 2`.
    pub fn magnetization_moment(&self, family: &CouplingFamily, k: u32) -> Result<f64> {
        let masks = self.family_masks(family)?;
        let b = masks.len() as f64;
        match k {
            1 => Ok(masks
                .iter()
                .map(|&m| self.correlation_mask(m))
                .collect::<CompensatedSum>()
                .value()
                / b),
            2 => {
                let mut acc = CompensatedSum::new();
                for &x in &masks {
                    for &y in &masks {
                        acc.add(self.correlation_mask(x ^ y));
                    }
                }
                Ok(acc.value() / (b * b))
            }
            _ => Err(Error::Unsupported(format!(
                "magnetization moment k={k}; only k = 1, 2"
            ))),
        }
    }

    /// Replica moments from products of single-replica correlations.
    pub fn overlap_moments(&self, family: &CouplingFamily) -> Result<OverlapMoments> {
        let masks = self.family_masks(family)?;
        let b = masks.len() as f64;
        let singles: Vec<f64> = masks.iter().map(|&m| self.correlation_mask(m)).collect();
        let r: CompensatedSum = singles.iter().map(|s| s * s).collect();
        let mut r2 = CompensatedSum::new();
        let mut r3 = CompensatedSum::new();
        for (x, sx) in masks.iter().zip(&singles) {
            for (y, sy) in masks.iter().zip(&singles) {
                let c = self.correlation_mask(x ^ y);
                r2.add(c * c);
                r3.add(c * sx * sy);
            }
        }
        Ok(OverlapMoments {
            r: r.value() / b,
            r2: r2.value() / (b * b),
            r12_r13: r3.value() / (b * b),
        })
    }

    pub fn observable(&self, model: &Model, obs: &Observable) -> Result<f64> {
        match obs {
            Observable::Constant => Ok(self.correlation_mask(0)),
            Observable::Energy => Ok(self.mean_energy),
            Observable::Correlation { sites } => self.correlation(sites),
            Observable::ReplicaProduct { a, b } => Ok(self.correlation(a)? * self.correlation(b)?),
            Observable::Magnetization { p } => self.magnetization_moment(model.family(*p)?, 1),
            Observable::MagnetizationSquared { p } => self.magnetization_moment(model.family(*p)?, 2),
            Observable::Overlap { p } => Ok(self.overlap_moments(model.family(*p)?)?.r),
            Observable::OverlapSquared { p } => Ok(self.overlap_moments(model.family(*p)?)?.r2),
            Observable::OverlapTriple { p } => Ok(self.overlap_moments(model.family(*p)?)?.r12_r13),
        }
    }
}

/// `log Z_L` for one realization.
pub fn log_partition(model: &Model, disorder: &DisorderRealization, beta: f64) -> Result<f64> {
    Ok(ExactGibbs::new(model, disorder, beta)?.log_partition())
}
