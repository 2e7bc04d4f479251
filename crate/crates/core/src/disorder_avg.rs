//! Quenched averages over disorder realizations.
//!
//! A study is a table: one row per realization, one column per Gibbs
//! quantity, each cell carrying the engine's within-realization error.
//! Realizations come either from the seeded sampler or, when at most three
//! couplings are random, from a tensor Gauss-Hermite grid. Derived quantities
//! are evaluated on column means with delta-method error propagation.

use std::num::NonZeroUsize;

use gauss_quad::GaussHermite;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::ExactGibbs;
use crate::model::{DisorderRealization, Model, ModelParameters, Provenance};
use crate::observable::Observable;
use crate::sampler::{estimate_at, McmcSettings, RunContext};
use crate::stats::{sample_variance, CompensatedSum, Estimate};

/// Gauss-Hermite nodes per random coupling.
pub const DEFAULT_QUADRATURE_NODES: usize = 64;

/// Largest number of random couplings handled by the quadrature grid.
pub const MAX_QUADRATURE_COUPLINGS: usize = 3;

/// How the Gibbs state of one realization is evaluated.
#[derive(Clone, Debug, PartialEq)]
pub enum Engine {
    Exact,
    Mcmc(McmcSettings),
}

impl Engine {
    pub fn tag(&self) -> &'static str {
        match self {
            Engine::Exact => "exact",
            Engine::Mcmc(_) => "mcmc",
        }
    }

    /// `result[k][j]` is observable `j` at `betas[k]`. Monte Carlo runs each
    /// temperature on its own streams (slots `slot`, `slot + 1`, ...) so
    /// estimates at different temperatures are independent.
    pub fn evaluate(
        &self,
        model: &Model,
        disorder: &DisorderRealization,
        betas: &[f64],
        observables: &[Observable],
        ctx: RunContext,
    ) -> Result<Vec<Vec<Estimate>>> {
        match self {
            Engine::Exact => betas
                .iter()
                .map(|&beta| {
                    let gibbs = ExactGibbs::new(model, disorder, beta)?;
                    observables
                        .iter()
                        .map(|o| gibbs.observable(model, o).map(Estimate::exact))
                        .collect()
                })
                .collect(),
            Engine::Mcmc(settings) => betas
                .iter()
                .enumerate()
                .map(|(k, &beta)| {
                    let slot_ctx = RunContext {
                        slot: ctx.slot.wrapping_add(k as u8),
                        ..ctx
                    };
                    let est = estimate_at(model, disorder, &[beta], observables, settings, slot_ctx)?;
                    Ok(est[0]
                        .iter()
                        .map(|e| Estimate::new(e.value, e.std_error))
                        .collect())
                })
                .collect(),
        }
    }
}

/// Source of disorder realizations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisorderMethod {
    Sampled { n: usize, seed: u64 },
    Quadrature { nodes: usize },
}

impl DisorderMethod {
    pub fn sampled(n: usize, seed: u64) -> Self {
        Self::Sampled { n, seed }
    }

    pub fn quadrature() -> Self {
        Self::Quadrature {
            nodes: DEFAULT_QUADRATURE_NODES,
        }
    }

    /// Quadrature when the model has few enough random couplings for a
    /// tensor grid, sampling otherwise.
    pub fn auto(model: &Model, n: usize, seed: u64) -> Self {
        if random_couplings(model).len() <= MAX_QUADRATURE_COUPLINGS {
            Self::quadrature()
        } else {
            Self::sampled(n, seed)
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Self::Sampled { .. } => "sampled",
            Self::Quadrature { .. } => "quadrature",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Self::Sampled { seed, .. } => Some(*seed),
            Self::Quadrature { .. } => None,
        }
    }
}

/// One realization's cells: values and within-realization standard errors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Row {
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
}

impl Row {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            values: Vec::with_capacity(n),
            errors: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, e: Estimate) {
        self.values.push(e.value);
        self.errors.push(e.std_error);
    }

    /// Product of two independent estimates.
    pub fn push_product(&mut self, a: Estimate, b: Estimate) {
        self.push(product(a, b));
    }

    /// Square of an estimate, debiased by its variance.
    pub fn push_square(&mut self, a: Estimate) {
        self.push(Estimate::new(
            a.value * a.value - a.std_error * a.std_error,
            2.0 * a.value.abs() * a.std_error,
        ));
    }
}

/// `a * b` for independent estimates, first-order error.
pub fn product(a: Estimate, b: Estimate) -> Estimate {
    Estimate::new(
        a.value * b.value,
        (b.value * a.std_error).hypot(a.value * b.std_error),
    )
}

/// Delta-method result with its error split by source.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Combined {
    pub value: f64,
    /// Quadrature sum of the two sources below.
    pub std_error: f64,
    pub disorder_error: f64,
    pub mcmc_error: f64,
}

impl Combined {
    pub fn estimate(&self) -> Estimate {
        Estimate::new(self.value, self.std_error)
    }
}

/// Realization-by-quantity table.
#[derive(Clone, Debug, PartialEq)]
pub struct QuenchedSample {
    columns: usize,
    rows: Vec<Row>,
    /// Quadrature weights; `None` for equally weighted samples.
    weights: Option<Vec<f64>>,
}

impl QuenchedSample {
    pub fn new(rows: Vec<Row>, weights: Option<Vec<f64>>) -> Result<Self> {
        let columns = rows.first().map_or(0, |r| r.values.len());
        if rows.is_empty()
            || rows
                .iter()
                .any(|r| r.values.len() != columns || r.errors.len() != columns)
        {
            return Err(Error::InvalidParameters("ragged or empty sample".into()));
        }
        if let Some(w) = &weights {
            if w.len() != rows.len() {
                return Err(Error::InvalidParameters("weights do not match rows".into()));
            }
        }
        Ok(Self {
            columns,
            rows,
            weights,
        })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn is_quadrature(&self) -> bool {
        self.weights.is_some()
    }

    /// Column means (weighted for quadrature).
    pub fn means(&self) -> Vec<f64> {
        (0..self.columns)
            .map(|j| self.weighted_sum(|r| r.values[j]))
            .collect()
    }

    fn weighted_sum(&self, f: impl Fn(&Row) -> f64) -> f64 {
        match &self.weights {
            Some(w) => self
                .rows
                .iter()
                .zip(w)
                .map(|(r, &w)| w * f(r))
                .collect::<CompensatedSum>()
                .value(),
            None => self.rows.iter().map(f).collect::<CompensatedSum>().value() / self.rows.len() as f64,
        }
    }

    pub fn mean(&self, j: usize) -> Combined {
        self.combine(|m| m[j])
    }

    /// `f` evaluated on the column means, with errors from the sample
    /// covariance (sampling) and the within-realization errors, linearized
    /// by a central-difference gradient of `f`.
    pub fn combine(&self, f: impl Fn(&[f64]) -> f64) -> Combined {
        let means = self.means();
        let value = f(&means);
        let mut probe = means.clone();
        let gradient: Vec<f64> = (0..self.columns)
            .map(|j| {
                let h = 1e-6 * means[j].abs().max(1.0);
                probe[j] = means[j] + h;
                let up = f(&probe);
                probe[j] = means[j] - h;
                let down = f(&probe);
                probe[j] = means[j];
                (up - down) / (2.0 * h)
            })
            .collect();
        let active: Vec<usize> = (0..self.columns).filter(|&j| gradient[j] != 0.0).collect();

        let within = |r: &Row| -> f64 { active.iter().map(|&j| (gradient[j] * r.errors[j]).powi(2)).sum() };
        let (disorder_var, mcmc_var) = match &self.weights {
            Some(w) => {
                let mcmc: f64 = self
                    .rows
                    .iter()
                    .zip(w)
                    .map(|(r, &w)| w * w * within(r))
                    .collect::<CompensatedSum>()
                    .value();
                (0.0, mcmc)
            }
            None => {
                let n = self.rows.len() as f64;
                let projected: Vec<f64> = self
                    .rows
                    .iter()
                    .map(|r| active.iter().map(|&j| gradient[j] * r.values[j]).sum())
                    .collect();
                let disorder = if self.rows.len() > 1 {
                    sample_variance(&projected).max(0.0) / n
                } else {
                    0.0
                };
                let mcmc = self.rows.iter().map(within).collect::<CompensatedSum>().value() / (n * n);
                (disorder, mcmc)
            }
        };
        Combined {
            value,
            std_error: (disorder_var + mcmc_var).sqrt(),
            disorder_error: disorder_var.sqrt(),
            mcmc_error: mcmc_var.sqrt(),
        }
    }
}

/// Random couplings of a model as `(species index, range index, mean, std)`.
fn random_couplings(model: &Model) -> Vec<(usize, usize, f64, f64)> {
    model
        .params()
        .species()
        .iter()
        .zip(model.families())
        .enumerate()
        .flat_map(|(k, (s, f))| {
            let (mean, std) = (model.coupling_mean(s), model.coupling_std(s));
            (0..f.len())
                .filter(move |_| std > 0.0)
                .map(move |r| (k, r, mean, std))
        })
        .collect()
}

/// Evaluates `row` on every realization of `method`. Rows are produced in
/// parallel and kept in realization order.
pub fn collect_rows<F>(model: &Model, method: &DisorderMethod, row: F) -> Result<QuenchedSample>
where
    F: Fn(&DisorderRealization) -> Result<Row> + Sync,
{
    match *method {
        DisorderMethod::Sampled { n, seed } => {
            if n < 2 {
                return Err(Error::InvalidParameters(format!(
                    "need at least 2 realizations, got {n}"
                )));
            }
            let rows = (0..n as u64)
                .into_par_iter()
                .map(|index| row(&model.sample_disorder(Provenance::new(seed, index))))
                .collect::<Result<Vec<_>>>()?;
            QuenchedSample::new(rows, None)
        }
        DisorderMethod::Quadrature { nodes } => {
            let randoms = random_couplings(model);
            if randoms.len() > MAX_QUADRATURE_COUPLINGS {
                return Err(Error::Unsupported(format!(
                    "quadrature handles at most {MAX_QUADRATURE_COUPLINGS} random couplings, model has {}",
                    randoms.len()
                )));
            }
            let nodes = NonZeroUsize::new(nodes)
                .ok_or_else(|| Error::InvalidParameters("quadrature needs nodes >= 1".into()))?;
            let rule = GaussHermite::new(nodes);
            let pairs = rule.as_node_weight_pairs();
            let total_weight: f64 = pairs.iter().map(|&(_, w)| w).collect::<CompensatedSum>().value();
            let points = pairs.len().pow(randoms.len() as u32);
            let base = model.mean_disorder();

            let results = (0..points)
                .into_par_iter()
                .map(|index| {
                    let mut disorder = base.clone();
                    let mut weight = 1.0;
                    let mut rest = index;
                    for &(k, r, mean, std) in &randoms {
                        let (x, w) = pairs[rest % pairs.len()];
                        rest /= pairs.len();
                        let p = model.params().species()[k].p;
                        disorder.couplings_mut(p).expect("species present")[r] =
                            mean + std * std::f64::consts::SQRT_2 * x;
                        weight *= w / total_weight;
                    }
                    row(&disorder).map(|r| (r, weight))
                })
                .collect::<Result<Vec<_>>>()?;
            let (rows, weights) = results.into_iter().unzip();
            QuenchedSample::new(rows, Some(weights))
        }
    }
}

/// Published quenched estimate of one observable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub observable: String,
    pub beta: f64,
    pub params: ModelParameters,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub engine: String,
    pub seed: Option<u64>,
    pub disorder: String,
    pub disorder_stderr: f64,
    pub mcmc_stderr: f64,
}

impl EstimatorResult {
    pub fn from_combined(
        observable: impl Into<String>,
        model: &Model,
        beta: f64,
        method: &DisorderMethod,
        engine: &Engine,
        n: usize,
        c: Combined,
    ) -> Self {
        Self {
            observable: observable.into(),
            beta,
            params: model.params().clone(),
            mean: c.value,
            stderr: c.std_error,
            n,
            engine: engine.tag().into(),
            seed: method.seed(),
            disorder: method.tag().into(),
            disorder_stderr: c.disorder_error,
            mcmc_stderr: c.mcmc_error,
        }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate::new(self.mean, self.stderr)
    }
}

/// `E <A>` at the model's temperature.
pub fn quenched_average(
    model: &Model,
    observable: &Observable,
    method: &DisorderMethod,
    engine: &Engine,
) -> Result<EstimatorResult> {
    let beta = model.beta();
    let seed = method.seed().unwrap_or(0);
    let obs = std::slice::from_ref(observable);
    let sample = collect_rows(model, method, |d| {
        let est = engine.evaluate(
            model,
            d,
            &[beta],
            obs,
            RunContext::new(seed, d.provenance().index, 0),
        )?;
        let mut row = Row::with_capacity(1);
        row.push(est[0][0]);
        Ok(row)
    })?;
    Ok(EstimatorResult::from_combined(
        observable.label(),
        model,
        beta,
        method,
        engine,
        sample.n(),
        sample.mean(0),
    ))
}

/// Order parameter whose variances are decomposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VarianceObservable {
    Magnetization { p: usize },
    Overlap { p: usize },
}

impl VarianceObservable {
    pub fn p(&self) -> usize {
        match *self {
            Self::Magnetization { p } | Self::Overlap { p } => p,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Magnetization { p } => format!("m{p}"),
            Self::Overlap { p } => format!("R{p}_12"),
        }
    }

    /// `(A, A^2)` observables.
    fn moments(&self) -> [Observable; 2] {
        match *self {
            Self::Magnetization { p } => [
                Observable::Magnetization { p },
                Observable::MagnetizationSquared { p },
            ],
            Self::Overlap { p } => [Observable::Overlap { p }, Observable::OverlapSquared { p }],
        }
    }
}

/// Thermal `E<(A - <A>)^2>` and total `E<(A - E<A>)^2>` variances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariancePair {
    pub observable: VarianceObservable,
    pub thermal: Combined,
    pub total: Combined,
    pub n: usize,
}

/// Columns `(<A>, <A^2>, <A>^2)` per realization.
pub fn variance_sample(
    model: &Model,
    observable: VarianceObservable,
    beta: f64,
    method: &DisorderMethod,
    engine: &Engine,
) -> Result<QuenchedSample> {
    model.family(observable.p())?;
    let seed = method.seed().unwrap_or(0);
    let obs = observable.moments();
    collect_rows(model, method, |d| {
        let est = engine.evaluate(
            model,
            d,
            &[beta],
            &obs,
            RunContext::new(seed, d.provenance().index, 0),
        )?;
        let mut row = Row::with_capacity(3);
        row.push(est[0][0]);
        row.push(est[0][1]);
        row.push_square(est[0][0]);
        Ok(row)
    })
}

pub fn variance_from_sample(observable: VarianceObservable, sample: &QuenchedSample) -> VariancePair {
    VariancePair {
        observable,
        thermal: sample.combine(|m| m[1] - m[2]),
        total: sample.combine(|m| m[1] - m[0] * m[0]),
        n: sample.n(),
    }
}

pub fn variance_pair(
    model: &Model,
    observable: VarianceObservable,
    method: &DisorderMethod,
    engine: &Engine,
) -> Result<VariancePair> {
    let sample = variance_sample(model, observable, model.beta(), method, engine)?;
    Ok(variance_from_sample(observable, &sample))
}

/// Columns `(<A_k>_beta, <A_k>_beta <B_k>_beta2)` for every pair `k`, both
/// temperatures evaluated on the same realization.
pub fn paired_sample(
    model: &Model,
    beta: f64,
    beta2: f64,
    pairs: &[(Observable, Observable)],
    method: &DisorderMethod,
    engine: &Engine,
) -> Result<QuenchedSample> {
    let seed = method.seed().unwrap_or(0);
    let first: Vec<Observable> = pairs.iter().map(|(a, _)| a.clone()).collect();
    let second: Vec<Observable> = pairs.iter().map(|(_, b)| b.clone()).collect();
    collect_rows(model, method, |d| {
        let ctx = RunContext::new(seed, d.provenance().index, 0);
        let at_beta = engine.evaluate(model, d, &[beta], &first, ctx)?.remove(0);
        let ctx2 = RunContext { slot: 128, ..ctx };
        let at_beta2 = engine.evaluate(model, d, &[beta2], &second, ctx2)?.remove(0);
        let mut row = Row::with_capacity(2 * pairs.len());
        for (a, b) in at_beta.into_iter().zip(at_beta2) {
            row.push(a);
            row.push_product(a, b);
        }
        Ok(row)
    })
}

/// `E<A>_beta` and `E[<A>_beta <B>_beta2]` with common random numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedResult {
    pub single: EstimatorResult,
    pub product: EstimatorResult,
}

pub fn paired_average(
    model: &Model,
    beta: f64,
    beta2: f64,
    pairs: &[(Observable, Observable)],
    method: &DisorderMethod,
    engine: &Engine,
) -> Result<Vec<PairedResult>> {
    let sample = paired_sample(model, beta, beta2, pairs, method, engine)?;
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(k, (a, b))| PairedResult {
            single: EstimatorResult::from_combined(
                a.label(),
                model,
                beta,
                method,
                engine,
                sample.n(),
                sample.mean(2 * k),
            ),
            product: EstimatorResult::from_combined(
                format!("{}@{beta}*{}@{beta2}", a.label(), b.label()),
                model,
                beta,
                method,
                engine,
                sample.n(),
                sample.mean(2 * k + 1),
            ),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{LatticeKind, LatticeSpec};
    use crate::model::Species;
    use crate::rng::{unit, Domain, StreamId};

    fn model(d: usize, side: usize, kind: LatticeKind, beta: f64, species: Vec<Species>) -> Model {
        let lattice = LatticeSpec::new(d, side, kind).unwrap();
        Model::standard(lattice, ModelParameters::new(beta, species, kind).unwrap()).unwrap()
    }

    fn ea(side: usize, beta: f64, delta: f64, mu: f64) -> Model {
        model(
            2,
            side,
            LatticeKind::ShortRange,
            beta,
            vec![Species::new(2, delta, mu)],
        )
    }

    fn bond(beta: f64, delta: f64, mu: f64) -> Model {
        model(
            1,
            2,
            LatticeKind::ShortRange,
            beta,
            vec![Species::new(2, delta, mu)],
        )
    }

    #[test]
    fn no_disorder_means_no_spread() {
        let m = ea(3, 0.7, 0.0, 0.4);
        let r = quenched_average(
            &m,
            &Observable::Energy,
            &DisorderMethod::sampled(5, 3),
            &Engine::Exact,
        )
        .unwrap();
        let single = ExactGibbs::new(&m, &m.mean_disorder(), 0.7)
            .unwrap()
            .mean_energy();
        assert_eq!(r.stderr, 0.0);
        assert!((r.mean - single).abs() <= 1e-12);
    }

    #[test]
    fn nishimori_internal_energy_on_small_lattice() {
        let m = ea(3, 0.5, 1.0, 0.5);
        let r = quenched_average(
            &m,
            &Observable::Energy,
            &DisorderMethod::sampled(10_000, 1),
            &Engine::Exact,
        )
        .unwrap();
        assert!(
            (r.mean + 6.0).abs() <= 4.0 * r.stderr,
            "{} +- {}",
            r.mean,
            r.stderr
        );
        assert_eq!(r.n, 10_000);
    }

    #[test]
    fn infinite_temperature_correlations_vanish() {
        let m = ea(3, 0.0, 1.0, 0.3);
        let r = quenched_average(
            &m,
            &Observable::correlation(&[0, 1]),
            &DisorderMethod::sampled(20, 4),
            &Engine::Exact,
        )
        .unwrap();
        assert_eq!(r.mean, 0.0);
        assert_eq!(r.stderr, 0.0);
    }

    #[test]
    fn aggregation_ignores_row_order() {
        let m = ea(3, 0.8, 1.0, 0.2);
        let sample = variance_sample(
            &m,
            VarianceObservable::Overlap { p: 2 },
            0.8,
            &DisorderMethod::sampled(300, 8),
            &Engine::Exact,
        )
        .unwrap();
        let mut rows = sample.rows().to_vec();
        let mut rng = StreamId::new(1, Domain::Test, 0).rng();
        for i in (1..rows.len()).rev() {
            let j = (unit(&mut rng) * (i + 1) as f64) as usize;
            rows.swap(i, j);
        }
        let shuffled = QuenchedSample::new(rows, None).unwrap();
        let f = |m: &[f64]| m[1] - m[0] * m[0];
        let (a, b) = (sample.combine(f), shuffled.combine(f));
        assert!((a.value - b.value).abs() <= 1e-12);
        assert!((a.std_error - b.std_error).abs() <= 1e-12);
    }

    #[test]
    fn bounded_observables_stay_bounded() {
        let m = ea(3, 1.2, 1.0, 0.6);
        let method = DisorderMethod::sampled(200, 2);
        for obs in [
            Observable::correlation(&[0, 1]),
            Observable::Magnetization { p: 2 },
            Observable::Overlap { p: 2 },
            Observable::OverlapTriple { p: 2 },
        ] {
            let r = quenched_average(&m, &obs, &method, &Engine::Exact).unwrap();
            assert!(r.mean.abs() <= 1.0 + 4.0 * r.stderr, "{}", obs.label());
        }
    }

    #[test]
    fn variance_pair_is_consistent() {
        let m = ea(3, 0.9, 1.0, 0.3);
        for obs in [
            VarianceObservable::Magnetization { p: 2 },
            VarianceObservable::Overlap { p: 2 },
        ] {
            let v = variance_pair(&m, obs, &DisorderMethod::sampled(500, 5), &Engine::Exact).unwrap();
            let combined = v.thermal.std_error.hypot(v.total.std_error);
            assert!(v.total.value >= v.thermal.value - 4.0 * combined);
            assert!(v.thermal.value >= -4.0 * v.thermal.std_error);
        }
    }

    #[test]
    fn infinite_temperature_total_equals_thermal() {
        let m = ea(3, 0.0, 1.0, 0.3);
        let v = variance_pair(
            &m,
            VarianceObservable::Magnetization { p: 2 },
            &DisorderMethod::sampled(50, 6),
            &Engine::Exact,
        )
        .unwrap();
        assert!((v.total.value - v.thermal.value).abs() <= 1e-12);
        // uniform measure: <(m^2)^2> = 1/|B| for distinct bond products
        assert!((v.thermal.value - 1.0 / 12.0).abs() <= 1e-12);
    }

    #[test]
    fn pure_ferromagnet_thermal_variance_matches_enumeration() {
        let m = ea(3, 0.4, 0.0, 1.0);
        let v = variance_pair(
            &m,
            VarianceObservable::Magnetization { p: 2 },
            &DisorderMethod::sampled(2, 1),
            &Engine::Exact,
        )
        .unwrap();
        // naive oracle: explicit sum over all configurations
        let family = m.family(2).unwrap();
        let (mut z, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for mask in 0u32..(1 << 9) {
            let spins: Vec<i8> = (0..9).map(|i| if mask >> i & 1 == 1 { -1 } else { 1 }).collect();
            let w = (-0.4 * m.hamiltonian(&spins, &m.mean_disorder())).exp();
            let mag: f64 = family
                .ranges()
                .iter()
                .map(|r| r.iter().map(|&i| spins[i] as f64).product::<f64>())
                .sum::<f64>()
                / family.len() as f64;
            z += w;
            s1 += w * mag;
            s2 += w * mag * mag;
        }
        let oracle = s2 / z - (s1 / z).powi(2);
        assert!((v.thermal.value - oracle).abs() <= 1e-12);
        assert_eq!(v.thermal.std_error, 0.0);
    }

    #[test]
    fn quadrature_reproduces_gaussian_moments() {
        let m = bond(1.0, 0.7, 0.3);
        let sample = collect_rows(&m, &DisorderMethod::quadrature(), |d| {
            let j = d.couplings(2).unwrap()[0];
            let mut row = Row::with_capacity(2);
            row.push(Estimate::exact(j));
            row.push(Estimate::exact(j * j));
            Ok(row)
        })
        .unwrap();
        let means = sample.means();
        assert!((means[0] - 0.3).abs() <= 1e-12);
        assert!((means[1] - (0.49 + 0.09)).abs() <= 1e-12);
        assert_eq!(sample.n(), 64);
    }

    #[test]
    fn quadrature_nishimori_scalar_identity() {
        // E tanh(beta_N J) = E tanh^2(beta_N J) for J ~ N(mu, delta^2), beta_N = mu / delta^2
        let mut rng = StreamId::new(12, Domain::Test, 0).rng();
        for _ in 0..100 {
            let delta = 0.5 + 1.5 * unit(&mut rng);
            let mu = delta * 0.7 * (0.05 + 0.95 * unit(&mut rng));
            let beta_n = mu / (delta * delta);
            let m = bond(beta_n, delta, mu);
            let pair = (Observable::correlation(&[0, 1]), Observable::correlation(&[0, 1]));
            let s = paired_sample(
                &m,
                beta_n,
                beta_n,
                &[pair],
                &DisorderMethod::quadrature(),
                &Engine::Exact,
            )
            .unwrap();
            let r = s.combine(|x| x[0] - x[1]).value;
            assert!(r.abs() <= 1e-10, "mu {mu} delta {delta}: {r}");
            // the engine value is tanh(beta J)
            let oracle = GaussHermite::new(NonZeroUsize::new(64).unwrap()).integrate(|x| {
                let t = (beta_n * (mu + delta * std::f64::consts::SQRT_2 * x)).tanh();
                t - t * t
            }) / std::f64::consts::PI.sqrt();
            assert!((oracle - r).abs() <= 1e-12);
        }
    }

    #[test]
    fn quadrature_rejects_many_random_couplings() {
        let m = ea(3, 0.5, 1.0, 0.5);
        let err = collect_rows(&m, &DisorderMethod::quadrature(), |_| Ok(Row::default()));
        assert!(matches!(err, Err(Error::Unsupported(_))));
    }

    #[test]
    fn paired_products_vanish_at_infinite_temperature() {
        let m = ea(3, 0.5, 1.0, 0.5);
        let x = Observable::correlation(&[0, 1]);
        let r = paired_average(
            &m,
            0.0,
            0.5,
            &[(x.clone(), x)],
            &DisorderMethod::sampled(30, 2),
            &Engine::Exact,
        )
        .unwrap();
        assert_eq!(r[0].product.mean, 0.0);
        assert_eq!(r[0].single.mean, 0.0);
    }

    #[test]
    fn common_random_numbers_reduce_residual_variance() {
        let beta_n = 0.5;
        let m = bond(beta_n, 1.0, 0.5);
        let beta = 2.0 * beta_n;
        let n = 4_000u64;
        let residual = |paired: bool| {
            let xs: Vec<f64> = (0..n)
                .map(|i| {
                    let d1 = m.sample_disorder(Provenance::new(3, i));
                    let d2 = if paired {
                        d1.clone()
                    } else {
                        m.sample_disorder(Provenance::new(3, i + n))
                    };
                    let a = ExactGibbs::new(&m, &d1, beta)
                        .unwrap()
                        .correlation(&[0, 1])
                        .unwrap();
                    let b = ExactGibbs::new(&m, &d2, beta_n)
                        .unwrap()
                        .correlation(&[0, 1])
                        .unwrap();
                    a - a * b
                })
                .collect();
            sample_variance(&xs)
        };
        assert!(residual(true) <= residual(false));
    }

    #[test]
    fn mcmc_engine_propagates_within_errors() {
        let m = ea(3, 0.6, 1.0, 0.3);
        let engine = Engine::Mcmc(McmcSettings {
            burn_in: 200,
            sweeps: 2_000,
            ..McmcSettings::default()
        });
        let r = quenched_average(&m, &Observable::Energy, &DisorderMethod::sampled(4, 9), &engine).unwrap();
        assert!(r.mcmc_stderr > 0.0);
        assert!((r.stderr - r.disorder_stderr.hypot(r.mcmc_stderr)).abs() <= 1e-12);
        assert_eq!(r.engine, "mcmc");
    }
}
