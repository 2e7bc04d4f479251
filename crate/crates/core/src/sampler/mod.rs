//! Markov chain Monte Carlo for systems beyond enumeration capacity.
//!
//! Single-site Metropolis on every rung of a parallel-tempering ladder.
//! Multi-replica observables run one independent ladder per replica on the
//! same couplings. Error bars come from the integrated autocorrelation time.

mod autocorr;
mod chain;
mod tempering;

pub use autocorr::{summarize, SeriesSummary};
pub use chain::{metropolis_sweep, ChainCheckpoint, ChainState, DRIFT_CHECK_EVERY};
pub use tempering::{default_ladder, TemperingLadder};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CouplingFamily;
use crate::model::{CouplingTable, DisorderRealization, Model};
use crate::observable::Observable;
use crate::rng::{Domain, StreamId};

/// Schedule and ladder shape of one Monte Carlo estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSettings {
    pub burn_in: u64,
    /// Measured sweeps after burn-in.
    pub sweeps: u64,
    pub thinning: u64,
    pub rungs: usize,
    pub ladder_low: f64,
    pub ladder_high: f64,
    pub swaps: bool,
    /// Explicit ladder; must contain every requested temperature.
    pub ladder: Option<Vec<f64>>,
}

impl Default for McmcSettings {
    fn default() -> Self {
        Self {
            burn_in: 2_000,
            sweeps: 20_000,
            thinning: 1,
            rungs: 8,
            ladder_low: 0.2,
            ladder_high: 1.2,
            swaps: true,
            ladder: None,
        }
    }
}

impl McmcSettings {
    fn validate(&self) -> Result<()> {
        if self.sweeps == 0 || self.thinning == 0 || self.sweeps < self.thinning {
            return Err(Error::InvalidParameters("need sweeps >= thinning >= 1".into()));
        }
        if self.rungs == 0 || self.rungs > 255 {
            return Err(Error::InvalidParameters("rungs must be in 1..=255".into()));
        }
        if !(self.ladder_low > 0.0 && self.ladder_low < self.ladder_high) {
            return Err(Error::InvalidParameters(
                "need 0 < ladder_low < ladder_high".into(),
            ));
        }
        Ok(())
    }

    /// Ladder holding every target: the default geometric ladder around the
    /// largest target with the remaining targets inserted.
    pub fn ladder_for(&self, targets: &[f64]) -> Result<Vec<f64>> {
        if targets.is_empty() || targets.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::InvalidParameters(format!(
                "invalid target temperatures {targets:?}"
            )));
        }
        let mut betas = match &self.ladder {
            Some(explicit) => {
                if let Some(missing) = targets.iter().find(|t| !explicit.contains(t)) {
                    return Err(Error::InvalidParameters(format!(
                        "ladder does not contain beta={missing}"
                    )));
                }
                explicit.clone()
            }
            None => {
                let top = targets.iter().copied().fold(0.0, f64::max);
                let mut betas = default_ladder(top, self.rungs, self.ladder_low, self.ladder_high);
                for &t in targets {
                    if !betas.contains(&t) {
                        betas.push(t);
                    }
                }
                betas
            }
        };
        betas.sort_by(f64::total_cmp);
        betas.dedup();
        if betas.len() > 255 {
            return Err(Error::InvalidParameters("ladder longer than 255 rungs".into()));
        }
        Ok(betas)
    }
}

/// Addresses the random streams of one estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RunContext {
    pub seed: u64,
    pub realization: u64,
    /// Separates several estimates on the same realization.
    pub slot: u8,
}

impl RunContext {
    pub fn new(seed: u64, realization: u64, slot: u8) -> Self {
        Self {
            seed,
            realization,
            slot,
        }
    }

    fn base(&self) -> u64 {
        assert!(self.realization < 1 << 40, "realization index too large");
        (self.realization << 24) | (u64::from(self.slot) << 16)
    }

    pub fn chain_stream(&self, replica: usize, rung: usize) -> StreamId {
        debug_assert!(replica < 256 && rung < 256);
        StreamId::new(
            self.seed,
            Domain::Chain,
            self.base() | ((replica as u64) << 8) | rung as u64,
        )
    }

    pub fn swap_stream(&self, replica: usize) -> StreamId {
        StreamId::new(self.seed, Domain::Swap, self.base() | ((replica as u64) << 8))
    }
}

/// Time average of one observable at one temperature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Integrated autocorrelation time in sweeps.
    pub tau_int: f64,
    /// False when `tau_int > sweeps / 50`.
    pub converged: bool,
}

/// Estimates at every rung of the ladder plus chain diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderReport {
    pub betas: Vec<f64>,
    /// `estimates[rung][observable]`.
    pub estimates: Vec<Vec<McmcEstimate>>,
    /// Per replica, per adjacent pair.
    pub swap_acceptance: Vec<Vec<f64>>,
    pub max_drift: f64,
}

impl LadderReport {
    pub fn at(&self, beta: f64) -> Option<&[McmcEstimate]> {
        self.betas
            .iter()
            .position(|&b| b == beta)
            .map(|k| self.estimates[k].as_slice())
    }
}

/// Per-family spin products of one configuration.
fn range_products(spins: &[i8], family: &CouplingFamily) -> Vec<f64> {
    family.ranges().iter().map(|r| site_product(spins, r)).collect()
}

fn site_product(spins: &[i8], sites: &[usize]) -> f64 {
    sites.iter().map(|&i| f64::from(spins[i])).product()
}

fn overlap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64
}

fn average(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    sum / n as f64
}

/// Replica-symmetrized instantaneous value of every observable.
struct Probe<'a> {
    observables: &'a [Observable],
    families: Vec<(usize, &'a CouplingFamily)>,
}

impl<'a> Probe<'a> {
    fn new(model: &'a Model, observables: &'a [Observable]) -> Result<Self> {
        let mut families = Vec::new();
        for obs in observables {
            let p = match obs {
                Observable::Magnetization { p }
                | Observable::MagnetizationSquared { p }
                | Observable::Overlap { p }
                | Observable::OverlapSquared { p }
                | Observable::OverlapTriple { p } => *p,
                Observable::Correlation { sites } => {
                    check_sites(sites, model.num_sites())?;
                    continue;
                }
                Observable::ReplicaProduct { a, b } => {
                    check_sites(a, model.num_sites())?;
                    check_sites(b, model.num_sites())?;
                    continue;
                }
                Observable::Constant | Observable::Energy => continue,
            };
            if families.iter().all(|(q, _)| *q != p) {
                families.push((p, model.family(p)?));
            }
        }
        Ok(Self {
            observables,
            families,
        })
    }

    fn measure(&self, spins: &[&[i8]], energies: &[f64], out: &mut [Vec<f64>]) {
        let r = spins.len();
        let products: Vec<(usize, Vec<Vec<f64>>)> = self
            .families
            .iter()
            .map(|(p, f)| (*p, spins.iter().map(|s| range_products(s, f)).collect()))
            .collect();
        let of = |p: usize| &products.iter().find(|(q, _)| *q == p).expect("probed family").1;
        let pairs = || (0..r).flat_map(move |a| (a + 1..r).map(move |b| (a, b)));

        for (obs, series) in self.observables.iter().zip(out.iter_mut()) {
            let v = match obs {
                Observable::Constant => 1.0,
                Observable::Energy => average(energies.iter().copied()),
                Observable::Correlation { sites } => average(spins.iter().map(|s| site_product(s, sites))),
                Observable::ReplicaProduct { a, b } => average(
                    (0..r)
                        .flat_map(|x| (0..r).filter(move |&y| y != x).map(move |y| (x, y)))
                        .map(|(x, y)| site_product(spins[x], a) * site_product(spins[y], b)),
                ),
                Observable::Magnetization { p } => average(of(*p).iter().map(|v| average(v.iter().copied()))),
                Observable::MagnetizationSquared { p } => {
                    average(of(*p).iter().map(|v| average(v.iter().copied()).powi(2)))
                }
                Observable::Overlap { p } => {
                    let v = of(*p);
                    average(pairs().map(|(a, b)| overlap(&v[a], &v[b])))
                }
                Observable::OverlapSquared { p } => {
                    let v = of(*p);
                    average(pairs().map(|(a, b)| overlap(&v[a], &v[b]).powi(2)))
                }
                Observable::OverlapTriple { p } => {
                    let v = of(*p);
                    average((0..r).flat_map(|a| {
                        pairs()
                            .filter(move |&(b, c)| b != a && c != a)
                            .map(move |(b, c)| overlap(&v[a], &v[b]) * overlap(&v[a], &v[c]))
                    }))
                }
            };
            series.push(v);
        }
    }
}

fn check_sites(sites: &[usize], n: usize) -> Result<()> {
    match sites.iter().find(|&&s| s >= n) {
        Some(&site) => Err(Error::InvalidSite { site, n_sites: n }),
        None => Ok(()),
    }
}

/// Runs one ladder per replica and estimates every observable at every rung.
pub fn run_ladder(
    model: &Model,
    disorder: &DisorderRealization,
    betas: &[f64],
    observables: &[Observable],
    settings: &McmcSettings,
    ctx: RunContext,
) -> Result<LadderReport> {
    settings.validate()?;
    let table = CouplingTable::new(model, disorder)?;
    let probe = Probe::new(model, observables)?;
    let replicas = observables.iter().map(Observable::replicas).max().unwrap_or(1);

    let mut streams = HashSet::new();
    let mut ladders = Vec::with_capacity(replicas);
    for replica in 0..replicas {
        for rung in 0..betas.len() {
            assert!(
                streams.insert(ctx.chain_stream(replica, rung)),
                "chain streams must be disjoint"
            );
        }
        assert!(
            streams.insert(ctx.swap_stream(replica)),
            "swap streams must be disjoint"
        );
        ladders.push(TemperingLadder::new(
            betas.to_vec(),
            &table,
            |rung| ctx.chain_stream(replica, rung),
            ctx.swap_stream(replica),
            settings.swaps,
        )?);
    }

    for _ in 0..settings.burn_in {
        for ladder in &mut ladders {
            ladder.sweep(&table);
        }
    }

    let samples = (settings.sweeps / settings.thinning) as usize;
    let mut series: Vec<Vec<Vec<f64>>> =
        vec![vec![Vec::with_capacity(samples); observables.len()]; betas.len()];
    for t in 1..=settings.sweeps {
        for ladder in &mut ladders {
            ladder.sweep(&table);
        }
        if t % settings.thinning != 0 {
            continue;
        }
        for (rung, out) in series.iter_mut().enumerate() {
            let spins: Vec<&[i8]> = ladders.iter().map(|l| l.chain(rung).spins()).collect();
            let energies: Vec<f64> = ladders.iter().map(|l| l.chain(rung).energy()).collect();
            probe.measure(&spins, &energies, out);
        }
    }

    let limit = settings.sweeps as f64 / 50.0;
    let estimates = series
        .iter()
        .map(|per_obs| {
            per_obs
                .iter()
                .map(|xs| {
                    let s = summarize(xs);
                    let tau = s.tau_int * settings.thinning as f64;
                    McmcEstimate {
                        value: s.mean,
                        std_error: s.std_error,
                        tau_int: tau,
                        converged: tau <= limit,
                    }
                })
                .collect()
        })
        .collect();
    let max_drift = ladders
        .iter()
        .flat_map(|l| l.chains().iter().map(ChainState::max_drift))
        .fold(0.0, f64::max);
    Ok(LadderReport {
        betas: betas.to_vec(),
        estimates,
        swap_acceptance: ladders.iter().map(TemperingLadder::swap_acceptance).collect(),
        max_drift,
    })
}

/// Estimates at each requested temperature from one shared ladder;
/// `result[k][j]` is observable `j` at `targets[k]`.
pub fn estimate_at(
    model: &Model,
    disorder: &DisorderRealization,
    targets: &[f64],
    observables: &[Observable],
    settings: &McmcSettings,
    ctx: RunContext,
) -> Result<Vec<Vec<McmcEstimate>>> {
    let betas = settings.ladder_for(targets)?;
    let report = run_ladder(model, disorder, &betas, observables, settings, ctx)?;
    Ok(targets
        .iter()
        .map(|&t| report.at(t).expect("ladder contains target").to_vec())
        .collect())
}

pub fn estimate(
    model: &Model,
    disorder: &DisorderRealization,
    beta: f64,
    observables: &[Observable],
    settings: &McmcSettings,
    ctx: RunContext,
) -> Result<Vec<McmcEstimate>> {
    Ok(estimate_at(model, disorder, &[beta], observables, settings, ctx)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{enumerate_energies, ExactGibbs};
    use crate::geometry::{LatticeKind, LatticeSpec};
    use crate::model::{ModelParameters, Provenance, Species};

    fn ea(side: usize, delta: f64, mu: f64) -> Model {
        let lattice = LatticeSpec::new(2, side, LatticeKind::ShortRange).unwrap();
        let params =
            ModelParameters::new(1.0, vec![Species::new(2, delta, mu)], LatticeKind::ShortRange).unwrap();
        Model::standard(lattice, params).unwrap()
    }

    fn settings(burn_in: u64, sweeps: u64) -> McmcSettings {
        McmcSettings {
            burn_in,
            sweeps,
            ..McmcSettings::default()
        }
    }

    #[test]
    fn infinite_temperature_accepts_everything() {
        let model = ea(3, 1.0, 0.3);
        let disorder = model.sample_disorder(Provenance::new(5, 0));
        let table = CouplingTable::new(&model, &disorder).unwrap();
        let mut chain = ChainState::random(&table, StreamId::new(1, Domain::Test, 0));
        for _ in 0..100 {
            metropolis_sweep(&mut chain, &table, 0.0);
        }
        assert_eq!(chain.acceptance(), 1.0);
    }

    #[test]
    fn single_bond_aligned_fraction() {
        // beta J = 3 on one bond: P(aligned) = e^3 / (e^3 + e^-3)
        let lattice = LatticeSpec::new(1, 2, LatticeKind::ShortRange).unwrap();
        let params =
            ModelParameters::new(3.0, vec![Species::new(2, 0.0, 1.0)], LatticeKind::ShortRange).unwrap();
        let model = Model::standard(lattice, params).unwrap();
        let disorder = model.mean_disorder();
        let table = CouplingTable::new(&model, &disorder).unwrap();
        let mut chain = ChainState::random(&table, StreamId::new(2, Domain::Test, 0));
        let series: Vec<f64> = (0..1_000_000)
            .map(|_| {
                metropolis_sweep(&mut chain, &table, 3.0);
                if chain.spins()[0] == chain.spins()[1] {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let s = summarize(&series);
        let expected = 3f64.exp() / (3f64.exp() + (-3f64).exp());
        assert!(
            (s.mean - expected).abs() <= 3.0 * s.std_error,
            "{} vs {expected} (se {})",
            s.mean,
            s.std_error
        );
    }

    #[test]
    fn cached_energy_does_not_drift() {
        let model = ea(3, 1.0, 0.2);
        let disorder = model.sample_disorder(Provenance::new(9, 3));
        let table = CouplingTable::new(&model, &disorder).unwrap();
        let mut chain = ChainState::random(&table, StreamId::new(3, Domain::Test, 0));
        for _ in 0..100_000 {
            metropolis_sweep(&mut chain, &table, 1.1);
        }
        assert!(chain.max_drift() <= 1e-9, "drift {}", chain.max_drift());
        assert!((chain.energy() - table.energy(chain.spins())).abs() <= 1e-9);
    }

    #[test]
    fn small_system_occupancy_converges_to_gibbs() {
        let model = ea(2, 1.0, 0.1);
        let disorder = model.sample_disorder(Provenance::new(4, 1));
        let beta = 0.8;
        let energies = enumerate_energies(&model, &disorder).unwrap();
        let weights: Vec<f64> = energies.iter().map(|e| (-beta * e).exp()).collect();
        let z: f64 = weights.iter().sum();

        let table = CouplingTable::new(&model, &disorder).unwrap();
        let mut chain = ChainState::random(&table, StreamId::new(4, Domain::Test, 0));
        let mut counts = vec![0u64; energies.len()];
        let sweeps = 1_000_000;
        for _ in 0..sweeps {
            metropolis_sweep(&mut chain, &table, beta);
            let mask = chain
                .spins()
                .iter()
                .enumerate()
                .filter(|(_, &s)| s < 0)
                .fold(0usize, |m, (i, _)| m | (1 << i));
            counts[mask] += 1;
        }
        let tv: f64 = counts
            .iter()
            .zip(&weights)
            .map(|(&c, &w)| (c as f64 / sweeps as f64 - w / z).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 0.01, "total variation {tv}");
    }

    #[test]
    fn tempering_preserves_rung_marginals() {
        let model = ea(4, 1.0, 0.3);
        let disorder = model.sample_disorder(Provenance::new(8, 2));
        let s = settings(2_000, 40_000);
        let betas = s.ladder_for(&[1.5]).unwrap();
        let report = run_ladder(
            &model,
            &disorder,
            &betas,
            &[Observable::Energy, Observable::MagnetizationSquared { p: 2 }],
            &s,
            RunContext::new(11, 0, 0),
        )
        .unwrap();
        assert!(report
            .swap_acceptance
            .iter()
            .flatten()
            .all(|a| (0.0..=1.0).contains(a)));
        for (k, &beta) in betas.iter().enumerate() {
            let exact = ExactGibbs::new(&model, &disorder, beta).unwrap();
            let est = &report.estimates[k];
            let m2 = exact.magnetization_moment(model.family(2).unwrap(), 2).unwrap();
            assert!(
                (est[0].value - exact.mean_energy()).abs() <= 4.0 * est[0].std_error,
                "rung {k}: {} vs {}",
                est[0].value,
                exact.mean_energy()
            );
            assert!((est[1].value - m2).abs() <= 4.0 * est[1].std_error);
        }
    }

    #[test]
    fn streams_are_disjoint_by_construction() {
        let ctx = RunContext::new(1, 7, 3);
        let mut seen = HashSet::new();
        for replica in 0..3 {
            for rung in 0..255 {
                assert!(seen.insert(ctx.chain_stream(replica, rung)));
            }
        }
        let other = RunContext::new(1, 7, 4);
        assert!(!seen.contains(&other.chain_stream(0, 0)));
        assert_ne!(ctx.chain_stream(0, 0), ctx.chain_stream(1, 0));
    }

    #[test]
    fn checkpoint_resumes_the_same_trajectory() {
        let model = ea(3, 1.0, 0.0);
        let disorder = model.sample_disorder(Provenance::new(1, 1));
        let table = CouplingTable::new(&model, &disorder).unwrap();
        let mut a = ChainState::random(&table, StreamId::new(6, Domain::Chain, 9));
        for _ in 0..137 {
            metropolis_sweep(&mut a, &table, 0.9);
        }
        let json = serde_json::to_string(&a.checkpoint()).unwrap();
        let restored: ChainCheckpoint = serde_json::from_str(&json).unwrap();
        let mut b = ChainState::restore(&table, &restored).unwrap();
        assert_eq!(b.sweeps(), 137);
        for _ in 0..500 {
            metropolis_sweep(&mut a, &table, 0.9);
            metropolis_sweep(&mut b, &table, 0.9);
        }
        assert_eq!(a.spins(), b.spins());
        assert_eq!(a.checkpoint(), b.checkpoint());
    }

    #[test]
    fn constant_observable_is_exactly_one() {
        let model = ea(3, 1.0, 0.1);
        let disorder = model.sample_disorder(Provenance::new(2, 0));
        let est = estimate(
            &model,
            &disorder,
            0.7,
            &[Observable::Constant],
            &settings(10, 200),
            RunContext::new(1, 0, 0),
        )
        .unwrap();
        assert_eq!(est[0].value, 1.0);
        assert_eq!(est[0].std_error, 0.0);
    }

    #[test]
    fn doubling_sweeps_shrinks_error_by_sqrt_two() {
        let model = ea(3, 1.0, 0.2);
        let disorder = model.sample_disorder(Provenance::new(3, 5));
        let obs = [Observable::Energy];
        let short = estimate(
            &model,
            &disorder,
            0.6,
            &obs,
            &settings(1_000, 40_000),
            RunContext::new(5, 0, 0),
        )
        .unwrap();
        let long = estimate(
            &model,
            &disorder,
            0.6,
            &obs,
            &settings(1_000, 80_000),
            RunContext::new(5, 0, 1),
        )
        .unwrap();
        let ratio = short[0].std_error / long[0].std_error;
        let target = 2f64.sqrt();
        assert!((ratio - target).abs() <= 0.3 * target, "ratio {ratio}");
    }

    #[test]
    fn agrees_with_enumeration_on_small_lattice() {
        let model = ea(3, 1.0, 0.4);
        let beta = 0.9;
        let obs = [
            Observable::Energy,
            Observable::correlation(&[0, 4]),
            Observable::ReplicaProduct {
                a: vec![0],
                b: vec![4],
            },
            Observable::Magnetization { p: 2 },
            Observable::Overlap { p: 2 },
            Observable::OverlapSquared { p: 2 },
            Observable::OverlapTriple { p: 2 },
        ];
        for index in 0..3 {
            let disorder = model.sample_disorder(Provenance::new(21, index));
            let exact = ExactGibbs::new(&model, &disorder, beta).unwrap();
            let est = estimate(
                &model,
                &disorder,
                beta,
                &obs,
                &settings(2_000, 20_000),
                RunContext::new(21, index, 0),
            )
            .unwrap();
            for (o, e) in obs.iter().zip(&est) {
                let truth = exact.observable(&model, o).unwrap();
                assert!(
                    (e.value - truth).abs() <= 4.0 * e.std_error.max(1e-12),
                    "{}: {} vs {truth} (se {})",
                    o.label(),
                    e.value,
                    e.std_error
                );
            }
        }
    }

    #[test]
    fn explicit_ladder_must_contain_target() {
        let s = McmcSettings {
            ladder: Some(vec![0.1, 0.5]),
            ..McmcSettings::default()
        };
        assert!(s.ladder_for(&[0.3]).is_err());
        assert_eq!(s.ladder_for(&[0.5]).unwrap(), vec![0.1, 0.5]);
        let d = McmcSettings::default().ladder_for(&[1.0, 0.5]).unwrap();
        assert!(d.contains(&1.0) && d.contains(&0.5));
        assert!(d.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(McmcSettings::default().ladder_for(&[0.0]).unwrap(), vec![0.0]);
    }
}
