//! Finite-size numerical checks of the gauge identities, correlation
//! inequalities and large-volume limit statements.
//!
//! Statistical checks pass at 4 standard errors; quadrature-backed checks use
//! absolute tolerances. Limit statements are checked as per-step trends in
//! the system size; a trend violation counts as a failure only when a nearby
//! parameter point on the Nishimori manifold also violates it.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::disorder_avg::{
    collect_rows, paired_sample, variance_from_sample, variance_sample, Combined, DisorderMethod, Engine,
    QuenchedSample, Row, VarianceObservable, VariancePair,
};
use crate::error::{Error, Result};
use crate::exact::ExactGibbs;
use crate::geometry::LatticeSpec;
use crate::model::{Model, ModelParameters, Species};
use crate::observable::Observable;
use crate::sampler::RunContext;
use crate::stats::Estimate;

/// Standard errors allowed by statistical checks.
pub const SIGMA: f64 = 4.0;
/// Tolerance of quadrature-backed identity checks.
pub const QUADRATURE_TOL: f64 = 1e-8;
/// Tolerance of the quadrature-backed internal energy check.
pub const ENERGY_QUADRATURE_TOL: f64 = 1e-10;
/// Tolerance of closed-form comparisons.
pub const CLOSED_FORM_TOL: f64 = 1e-12;
/// Relative displacement of the neighbouring parameter points.
pub const NEIGHBOUR_STEP: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
        }
    }

    /// Fail dominates inconclusive, which dominates pass.
    pub fn combine(self, other: Verdict) -> Verdict {
        match (self, other) {
            (Verdict::Fail, _) | (_, Verdict::Fail) => Verdict::Fail,
            (Verdict::Inconclusive, _) | (_, Verdict::Inconclusive) => Verdict::Inconclusive,
            _ => Verdict::Pass,
        }
    }
}

/// How `value` is compared with `target`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `value == target`.
    Equal,
    /// `value <= target`.
    AtMost,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Criterion {
    /// Violation of at most `k` standard errors.
    Sigma { k: f64 },
    /// Violation of at most `k` relative standard errors of the bound:
    /// `value <= target * (1 + k * se / |value|)`.
    RelativeSigma { k: f64 },
    /// Violation of at most `tol`.
    Absolute { tol: f64 },
    /// Verdict taken from the parts.
    Parts,
}

/// Everything needed to rerun a check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckInputs {
    pub lattice: LatticeSpec,
    pub params: ModelParameters,
    pub beta: f64,
    pub n: usize,
    pub seed: Option<u64>,
    pub engine: String,
    pub disorder: String,
}

impl CheckInputs {
    pub fn new(model: &Model, beta: f64, n: usize, method: &DisorderMethod, engine: &Engine) -> Self {
        Self {
            lattice: model.lattice().clone(),
            params: model.params().clone(),
            beta,
            n,
            seed: method.seed(),
            engine: engine.tag().into(),
            disorder: method.tag().into(),
        }
    }
}

/// One point of a reported sequence (system size or field strength).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub x: f64,
    pub value: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub label: String,
    pub side: Option<usize>,
    pub value: f64,
    pub target: f64,
    pub std_error: f64,
    pub relation: Relation,
    pub criterion: Criterion,
    /// Signed violation in standard errors (`None` when the error is zero);
    /// for `Equal` the absolute deviation.
    pub margin_sigma: Option<f64>,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub inputs: Option<CheckInputs>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub series: Vec<SeriesPoint>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub parts: Vec<CheckReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

impl CheckReport {
    /// Compares an estimate with a target under a criterion.
    pub fn compare(
        check: &str,
        label: impl Into<String>,
        value: Estimate,
        target: f64,
        relation: Relation,
        criterion: Criterion,
    ) -> Self {
        let deviation = match relation {
            Relation::Equal => (value.value - target).abs(),
            Relation::AtMost => value.value - target,
        };
        let margin_sigma = (value.std_error > 0.0).then(|| deviation / value.std_error);
        let pass = match criterion {
            Criterion::Sigma { k } => deviation <= k * value.std_error,
            Criterion::RelativeSigma { k } => {
                let rel = if value.value != 0.0 {
                    value.std_error / value.value.abs()
                } else {
                    0.0
                };
                deviation <= target.abs() * k * rel
            }
            Criterion::Absolute { tol } => deviation <= tol,
            Criterion::Parts => true,
        };
        Self {
            check: check.into(),
            label: label.into(),
            side: None,
            value: value.value,
            target,
            std_error: value.std_error,
            relation,
            criterion,
            margin_sigma,
            verdict: if pass && !value.value.is_nan() {
                Verdict::Pass
            } else {
                Verdict::Fail
            },
            inputs: None,
            series: Vec::new(),
            parts: Vec::new(),
            note: None,
        }
    }

    /// A report whose verdict is the combination of its parts.
    pub fn group(check: &str, label: impl Into<String>, parts: Vec<CheckReport>) -> Self {
        let verdict = parts.iter().fold(Verdict::Pass, |v, p| v.combine(p.verdict));
        let worst = parts
            .iter()
            .filter_map(|p| p.margin_sigma)
            .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))));
        let (value, target, std_error) = parts
            .first()
            .map_or((f64::NAN, f64::NAN, 0.0), |p| (p.value, p.target, p.std_error));
        Self {
            check: check.into(),
            label: label.into(),
            side: None,
            value,
            target,
            std_error,
            relation: Relation::AtMost,
            criterion: Criterion::Parts,
            margin_sigma: worst,
            verdict,
            inputs: None,
            series: Vec::new(),
            parts,
            note: None,
        }
    }

    pub fn with_inputs(mut self, inputs: CheckInputs) -> Self {
        self.inputs = Some(inputs);
        self
    }

    pub fn with_side(mut self, side: usize) -> Self {
        self.side = Some(side);
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

fn statistical(method: &DisorderMethod, tol: f64) -> Criterion {
    match method {
        DisorderMethod::Sampled { .. } => Criterion::Sigma { k: SIGMA },
        DisorderMethod::Quadrature { .. } => Criterion::Absolute { tol },
    }
}

fn bound_criterion(method: &DisorderMethod) -> Criterion {
    match method {
        DisorderMethod::Sampled { .. } => Criterion::RelativeSigma { k: SIGMA },
        DisorderMethod::Quadrature { .. } => Criterion::Absolute { tol: QUADRATURE_TOL },
    }
}

/// Nishimori temperature of a model whose identities are gauge-derivable:
/// a common ratio over active species and no deterministic nonzero mean.
pub fn nishimori_bracket(params: &ModelParameters) -> Result<f64> {
    if let Some(s) = params.species().iter().find(|s| !s.is_active() && s.mu != 0.0) {
        return Err(Error::OffNishimori(format!(
            "species p={} has mu={} but delta=0",
            s.p, s.mu
        )));
    }
    params.nishimori_beta()
}

fn require_on_nishimori(model: &Model) -> Result<f64> {
    let beta_n = nishimori_bracket(model.params())?;
    if !model.params().on_nishimori() {
        return Err(Error::OffNishimori(format!(
            "beta={} but mu/delta^2={beta_n}",
            model.beta()
        )));
    }
    Ok(beta_n)
}

fn active_delta(model: &Model, p: usize) -> Result<f64> {
    model.family(p)?;
    let s = model.params().species_for(p).ok_or(Error::UnknownFamily(p))?;
    if s.delta <= 0.0 {
        return Err(Error::InvalidParameters(format!("bound needs delta_{p} > 0")));
    }
    Ok(s.delta)
}

fn symmetric_difference(x: &[usize], y: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = x
        .iter()
        .filter(|s| !y.contains(s))
        .chain(y.iter().filter(|s| !x.contains(s)))
        .copied()
        .collect();
    out.sort_unstable();
    out
}

fn seed_of(method: &DisorderMethod) -> u64 {
    method.seed().unwrap_or(0)
}

/// `E<H> = -sum_p |B_p| E[J^p]` on the Nishimori manifold.
pub fn check_internal_energy_nm(
    model: &Model,
    method: &DisorderMethod,
    engine: &Engine,
) -> Result<CheckReport> {
    require_on_nishimori(model)?;
    let beta = model.beta();
    let target = -model
        .params()
        .species()
        .iter()
        .zip(model.families())
        .map(|(s, f)| f.len() as f64 * model.coupling_mean(s))
        .sum::<f64>();
    let seed = seed_of(method);
    let sample = collect_rows(model, method, |d| {
        let est = engine.evaluate(
            model,
            d,
            &[beta],
            &[Observable::Energy],
            RunContext::new(seed, d.provenance().index, 0),
        )?;
        let mut row = Row::with_capacity(1);
        row.push(est[0][0]);
        Ok(row)
    })?;
    let value = sample.mean(0).estimate();
    Ok(CheckReport::compare(
        "internal_energy_nm",
        "E<H>",
        value,
        target,
        Relation::Equal,
        statistical(method, ENERGY_QUADRATURE_TOL),
    )
    .with_side(model.lattice().side())
    .with_inputs(CheckInputs::new(model, beta, sample.n(), method, engine)))
}

/// The three one- and two-point gauge identities coupling `beta` and the
/// Nishimori temperature on the same realization.
pub fn check_gauge_correlations(
    model: &Model,
    beta: f64,
    x: &[usize],
    y: &[usize],
    method: &DisorderMethod,
    engine: &Engine,
) -> Result<CheckReport> {
    let beta_n = nishimori_bracket(model.params())?;
    let xy = symmetric_difference(x, y);
    let pairs = [
        (Observable::correlation(x), Observable::correlation(x)),
        (
            Observable::ReplicaProduct {
                a: x.to_vec(),
                b: y.to_vec(),
            },
            Observable::correlation(&xy),
        ),
        (Observable::correlation(&xy), Observable::correlation(&xy)),
    ];
    let sample = paired_sample(model, beta, beta_n, &pairs, method, engine)?;
    let criterion = statistical(method, QUADRATURE_TOL);
    let labels = ["r1", "r2", "r3"];
    let parts = labels
        .iter()
        .enumerate()
        .map(|(k, label)| {
            let r = sample.combine(|m| m[2 * k] - m[2 * k + 1]);
            CheckReport::compare(
                "gauge_correlations",
                *label,
                r.estimate(),
                0.0,
                Relation::Equal,
                criterion,
            )
        })
        .collect();
    Ok(
        CheckReport::group("gauge_correlations", format!("X={x:?} Y={y:?}"), parts)
            .with_side(model.lattice().side())
            .with_inputs(CheckInputs::new(model, beta, sample.n(), method, engine)),
    )
}

/// Columns: observables at `beta`, then at the Nishimori temperature.
fn two_temperature_sample(
    model: &Model,
    beta: f64,
    beta_n: f64,
    observables: &[Observable],
    method: &DisorderMethod,
    engine: &Engine,
) -> Result<QuenchedSample> {
    let seed = seed_of(method);
    collect_rows(model, method, |d| {
        let est = engine.evaluate(
            model,
            d,
            &[beta, beta_n],
            observables,
            RunContext::new(seed, d.provenance().index, 0),
        )?;
        let mut row = Row::with_capacity(2 * observables.len());
        for e in est.into_iter().flatten() {
            row.push(e);
        }
        Ok(row)
    })
}

fn clamped_sqrt(x: f64) -> f64 {
    x.max(0.0).sqrt()
}

/// Difference `lhs - sqrt(rhs)` compared with zero, reported as lhs vs bound.
fn sqrt_bound_report(
    check: &str,
    label: &str,
    sample: &QuenchedSample,
    lhs: impl Fn(&[f64]) -> f64,
    rhs: usize,
    method: &DisorderMethod,
) -> CheckReport {
    let means = sample.means();
    let bound = clamped_sqrt(means[rhs]);
    let diff = sample.combine(|m| lhs(m) - clamped_sqrt(m[rhs]));
    let criterion = statistical(method, QUADRATURE_TOL);
    let mut report = CheckReport::compare(
        check,
        label,
        Estimate::new(diff.value + bound, diff.std_error),
        bound,
        Relation::AtMost,
        criterion,
    );
    report.series.push(SeriesPoint {
        x: 0.0,
        value: means[rhs],
        std_error: sample.mean(rhs).std_error,
    });
    report
}

/// `E<(m^1)^2>_beta <= sqrt(E<(m^1)^2>_{beta_N})` without a field.
pub fn check_magnetization_square_bound(
    model: &Model,
    beta: f64,
    method: &DisorderMethod,
    engine: &Engine,
) -> Result<CheckReport> {
    model.family(1)?;
    model.family(2)?;
    let field = model.params().species_for(1).ok_or(Error::UnknownFamily(1))?;
    if field.delta != 0.0 || field.mu != 0.0 {
        return Err(Error::InvalidParameters(
            "the squared-magnetization bound is stated without a field (mu_1 = delta_1 = 0)".into(),
        ));
    }
    let beta_n = nishimori_bracket(model.params())?;
    let obs = [Observable::MagnetizationSquared { p: 1 }];
    let sample = two_temperature_sample(model, beta, beta_n, &obs, method, engine)?;
    Ok(sqrt_bound_report(
        "magnetization_square_bound",
        "E<(m1)^2>",
        &sample,
        |m| m[0],
        1,
        method,
    )
    .with_side(model.lattice().side())
    .with_inputs(CheckInputs::new(model, beta, sample.n(), method, engine)))
}

fn field_on_ray(model: &Model, mu1: f64, beta_n: f64) -> Result<Model> {
    let delta1 = (mu1 / beta_n).sqrt();
    model.with_params(model.params().with_species(Species::new(1, delta1, mu1))?)
}

/// `|E<m^1>_beta| <= sqrt(E<m^1>_{beta_N})` with the field on the ray
/// `delta_1 = sqrt(mu_1 / beta_N)`, plus the same bound along a field sweep.
pub fn check_spontaneous_magnetization_bound(
    model: &Model,
    beta: f64,
    mu1_sweep: &[f64],
    method: &DisorderMethod,
    engine: &Engine,
) -> Result<CheckReport> {
    model.family(1)?;
    let field = *model.params().species_for(1).ok_or(Error::UnknownFamily(1))?;
    if !(field.mu > 0.0 && field.delta > 0.0) {
        return Err(Error::OffNishimori(
            "field species needs mu_1 > 0 on the ray delta_1 = sqrt(mu_1 / beta_N)".into(),
        ));
    }
    let beta_n = nishimori_bracket(model.params())?;
    let obs = [Observable::Magnetization { p: 1 }];
    let at = |m: &Model| -> Result<(CheckReport, SeriesPoint)> {
        let sample = two_temperature_sample(m, beta, beta_n, &obs, method, engine)?;
        let mu1 = m.params().species_for(1).map_or(0.0, |s| s.mu);
        let report = sqrt_bound_report(
            "spontaneous_magnetization_bound",
            &format!("|E<m1>| mu1={mu1}"),
            &sample,
            |x| x[0].abs(),
            1,
            method,
        );
        let point = SeriesPoint {
            x: mu1,
            value: sample.means()[0],
            std_error: sample.mean(0).std_error,
        };
        Ok((report, point))
    };

    let (main, _) = at(model)?;
    let mut parts = vec![main];
    let mut series = Vec::new();
    for &mu1 in mu1_sweep {
        let (report, point) = at(&field_on_ray(model, mu1, beta_n)?)?;
        parts.push(report);
        series.push(point);
    }
    let n = match method {
        DisorderMethod::Sampled { n, .. } => *n,
        DisorderMethod::Quadrature { nodes } => nodes.pow(3),
    };
    let mut report = CheckReport::group(
        "spontaneous_magnetization_bound",
        format!("mu1={}", field.mu),
        parts,
    )
    .with_side(model.lattice().side())
    .with_inputs(CheckInputs::new(model, beta, n, method, engine));
    report.series = series;
    Ok(report)
}

fn exact_only(engine: &Engine, check: &str) -> Result<()> {
    match engine {
        Engine::Exact => Ok(()),
        Engine::Mcmc(_) => Err(Error::Unsupported(format!(
            "{check} sums per-pair quenched correlations and needs the exact engine"
        ))),
    }
}

fn range_in_family(model: &Model, p: usize, x: &[usize]) -> Result<Vec<Vec<usize>>> {
    let family = model.family(p)?;
    let mut sorted = x.to_vec();
    sorted.sort_unstable();
    if family.position(&sorted).is_none() {
        return Err(Error::InvalidParameters(format!(
            "X={x:?} is not a range of the p={p} family"
        )));
    }
    Ok(family.ranges().to_vec())
}

/// `sum_Y [E(<s_X s_Y> - <s_X><s_Y>)]^2 <= (beta delta_p)^-2`.
pub fn check_truncated_k1(
    model: &Model,
    p: usize,
    x: &[usize],
    method: &DisorderMethod,
    engine: &Engine,
) -> Result<CheckReport> {
    exact_only(engine, "truncated_k1")?;
    let delta = active_delta(model, p)?;
    let ranges = range_in_family(model, p, x)?;
    let beta = model.beta();
    let sample = collect_rows(model, method, |d| {
        let gibbs = ExactGibbs::new(model, d, beta)?;
        let mut row = Row::with_capacity(ranges.len());
        for y in &ranges {
            row.push(Estimate::exact(gibbs.truncated_k1(x, y)?));
        }
        Ok(row)
    })?;
    let sum = sample.combine(|m| m.iter().map(|c| c * c).sum());
    let bound = (beta * delta).powi(-2);
    Ok(CheckReport::compare(
        "truncated_k1",
        format!("X={x:?}"),
        sum.estimate(),
        bound,
        Relation::AtMost,
        bound_criterion(method),
    )
    .with_side(model.lattice().side())
    .with_inputs(CheckInputs::new(model, beta, sample.n(), method, engine)))
}

/// Third-order truncated combination at the Nishimori point: the bound
/// `(3/2)(beta_N delta_p)^-6` and the agreement of the direct form with the
/// form reduced by the gauge identities.
pub fn check_k3_combination(
    model: &Model,
    p: usize,
    x: &[usize],
    method: &DisorderMethod,
    engine: &Engine,
) -> Result<CheckReport> {
    exact_only(engine, "k3_combination")?;
    let beta_n = require_on_nishimori(model)?;
    let delta = active_delta(model, p)?;
    let ranges = range_in_family(model, p, x)?;
    let sample = collect_rows(model, method, |d| {
        let g = ExactGibbs::new(model, d, beta_n)?;
        let sx = g.correlation(x)?;
        let mut row = Row::with_capacity(2 * ranges.len());
        for y in &ranges {
            let sy = g.correlation(y)?;
            let sxy = g.correlation(&symmetric_difference(x, y))?;
            let direct = sxy * sxy - 4.0 * sx * sy * sxy + 3.0 * sx * sx * sy * sy;
            let reduced = sxy - 4.0 * sx * sy + 3.0 * sx * sx * sy * sy;
            row.push(Estimate::exact(direct));
            row.push(Estimate::exact(reduced));
        }
        Ok(row)
    })?;
    let inputs = CheckInputs::new(model, beta_n, sample.n(), method, engine);
    let k = ranges.len();

    let sum = sample.combine(|m| (0..k).map(|j| m[2 * j].powi(2)).sum());
    let bound = 1.5 * (beta_n * delta).powi(-6);
    let bound_report = CheckReport::compare(
        "k3_combination",
        "sum_Y (E d_Y)^2",
        sum.estimate(),
        bound,
        Relation::AtMost,
        bound_criterion(method),
    );

    let reduction: Vec<CheckReport> = ranges
        .iter()
        .enumerate()
        .map(|(j, y)| {
            let diff = sample.combine(|m| m[2 * j] - m[2 * j + 1]);
            CheckReport::compare(
                "k3_reduction",
                format!("Y={y:?}"),
                diff.estimate(),
                0.0,
                Relation::Equal,
                statistical(method, QUADRATURE_TOL),
            )
        })
        .collect();
    let worst = reduction
        .iter()
        .max_by(|a, b| {
            let key = |r: &CheckReport| {
                (
                    r.verdict == Verdict::Fail,
                    r.margin_sigma.unwrap_or(r.value.abs()),
                )
            };
            let (ka, kb) = (key(a), key(b));
            ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1))
        })
        .cloned()
        .expect("nonempty family");
    let reduction_report = CheckReport::group("k3_reduction", format!("worst of {k}"), vec![worst])
        .with_note(format!(
            "{} of {k} ranges agree",
            reduction.iter().filter(|r| r.passed()).count()
        ));
    Ok(CheckReport::group(
        "k3_combination",
        format!("X={x:?}"),
        vec![bound_report, reduction_report],
    )
    .with_side(model.lattice().side())
    .with_inputs(inputs))
}

/// `thermal_var(m^p) <= 1 / (beta delta_p sqrt|B_p|)` at the model's temperature.
pub fn check_magnetization_variance_bound(
    model: &Model,
    p: usize,
    method: &DisorderMethod,
    engine: &Engine,
) -> Result<CheckReport> {
    active_delta(model, p)?;
    let obs = VarianceObservable::Magnetization { p };
    let sample = variance_sample(model, obs, model.beta(), method, engine)?;
    let pair = variance_from_sample(obs, &sample);
    magnetization_variance_bound_report(model, p, &pair, method, engine)
}

/// Compares an already estimated `thermal_var(m^p)` with its bound.
pub fn magnetization_variance_bound_report(
    model: &Model,
    p: usize,
    pair: &VariancePair,
    method: &DisorderMethod,
    engine: &Engine,
) -> Result<CheckReport> {
    let delta = active_delta(model, p)?;
    let beta = model.beta();
    let size = model.family(p)?.len() as f64;
    let bound = 1.0 / (beta * delta * size.sqrt());
    Ok(CheckReport::compare(
        "magnetization_variance_bound",
        format!("thermal_var(m{p})"),
        pair.thermal.estimate(),
        bound,
        Relation::AtMost,
        statistical(method, QUADRATURE_TOL),
    )
    .with_side(model.lattice().side())
    .with_inputs(CheckInputs::new(model, beta, pair.n, method, engine)))
}

/// Per-step check that `values` do not increase by more than 4 combined
/// standard errors from one size to the next.
pub fn trend_report(check: &str, label: &str, sides: &[usize], values: &[Combined]) -> CheckReport {
    let parts = sides
        .windows(2)
        .zip(values.windows(2))
        .map(|(s, v)| {
            let se = v[0].std_error.hypot(v[1].std_error);
            CheckReport::compare(
                check,
                format!("{label} L={}->{}", s[0], s[1]),
                Estimate::new(v[1].value, se),
                v[0].value,
                Relation::AtMost,
                Criterion::Sigma { k: SIGMA },
            )
            .with_side(s[1])
        })
        .collect();
    let mut report = CheckReport::group(check, label, parts);
    report.series = sides
        .iter()
        .zip(values)
        .map(|(&s, v)| SeriesPoint {
            x: s as f64,
            value: v.value,
            std_error: v.std_error,
        })
        .collect();
    report
}

fn check_sides(sides: &[usize]) -> Result<()> {
    if sides.len() < 2 || sides.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameters(format!(
            "trend checks need at least two strictly increasing sizes, got {sides:?}"
        )));
    }
    Ok(())
}

fn abs_combined(c: Combined) -> Combined {
    Combined {
        value: c.value.abs(),
        ..c
    }
}

/// Moves `delta_p` by `factor` and `mu_p` with it so the model stays on the
/// Nishimori manifold at the same temperature.
pub fn nishimori_neighbour(model: &Model, p: usize, factor: f64) -> Result<Model> {
    let beta_n = require_on_nishimori(model)?;
    let s = *model.params().species_for(p).ok_or(Error::UnknownFamily(p))?;
    let delta = s.delta * factor;
    model.with_params(
        model
            .params()
            .with_species(Species::new(p, delta, beta_n * delta * delta))?,
    )
}

/// Runs a trend check; a failure is confirmed only when a neighbouring
/// point (`delta_p` scaled by `1 -+ NEIGHBOUR_STEP`) also fails, otherwise
/// the verdict is inconclusive.
pub fn with_neighbours(
    model: &Model,
    p: usize,
    run: impl Fn(&Model) -> Result<CheckReport>,
) -> Result<CheckReport> {
    let report = run(model)?;
    if report.verdict != Verdict::Fail {
        return Ok(report);
    }
    let mut neighbours = Vec::new();
    for factor in [1.0 - NEIGHBOUR_STEP, 1.0 + NEIGHBOUR_STEP] {
        let mut r = run(&nishimori_neighbour(model, p, factor)?)?;
        r.label = format!("{} (delta_{p} x{factor})", r.label);
        neighbours.push(r);
    }
    let confirmed = neighbours.iter().any(|r| r.verdict == Verdict::Fail);
    let mut report = report;
    report.verdict = if confirmed {
        Verdict::Fail
    } else {
        Verdict::Inconclusive
    };
    report.note = Some(if confirmed {
        "trend violated at a neighbouring point as well".into()
    } else {
        "isolated trend violation; neighbouring points pass".into()
    });
    report.parts.extend(neighbours);
    Ok(report)
}

fn size_model(model: &Model, side: usize) -> Result<Model> {
    model.with_side(side)
}

/// On the Nishimori manifold, `thermal_var(R^p)` does not grow with size.
pub fn check_overlap_variance_decay(
    model: &Model,
    p: usize,
    sides: &[usize],
    method: &DisorderMethod,
    engine: &Engine,
) -> Result<CheckReport> {
    check_sides(sides)?;
    require_on_nishimori(model)?;
    with_neighbours(model, p, |m| {
        let obs = VarianceObservable::Overlap { p };
        let values = sides
            .iter()
            .map(|&side| {
                let sized = size_model(m, side)?;
                let sample = variance_sample(&sized, obs, sized.beta(), method, engine)?;
                Ok(variance_from_sample(obs, &sample).thermal)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(trend_report(
            "overlap_variance_decay",
            &format!("thermal_var(R{p})"),
            sides,
            &values,
        )
        .with_inputs(CheckInputs::new(m, m.beta(), sample_size(method), method, engine)))
    })
}

fn sample_size(method: &DisorderMethod) -> usize {
    match method {
        DisorderMethod::Sampled { n, .. } => *n,
        DisorderMethod::Quadrature { nodes } => *nodes,
    }
}

/// Columns `(<R>, <R^2>, <R_12 R_13>, <R>^2)` per realization.
fn overlap_sample(
    model: &Model,
    p: usize,
    method: &DisorderMethod,
    engine: &Engine,
) -> Result<QuenchedSample> {
    model.family(p)?;
    let beta = model.beta();
    let seed = seed_of(method);
    let obs = [
        Observable::Overlap { p },
        Observable::OverlapSquared { p },
        Observable::OverlapTriple { p },
    ];
    collect_rows(model, method, |d| {
        let est = engine.evaluate(
            model,
            d,
            &[beta],
            &obs,
            RunContext::new(seed, d.provenance().index, 0),
        )?;
        let mut row = Row::with_capacity(4);
        for &e in &est[0] {
            row.push(e);
        }
        row.push_square(est[0][0]);
        Ok(row)
    })
}

/// `E<R12 R13> - (E<R12>)^2 / 2 - E<R12^2> / 2`.
pub fn overlap_identity_value(sample: &QuenchedSample) -> Combined {
    sample.combine(|m| m[2] - 0.5 * m[0] * m[0] - 0.5 * m[1])
}

/// `|overlap identity residual|` does not grow with size.
pub fn check_overlap_identity_residual(
    model: &Model,
    p: usize,
    sides: &[usize],
    method: &DisorderMethod,
    engine: &Engine,
) -> Result<CheckReport> {
    exact_only(engine, "overlap_identity_residual")?;
    check_sides(sides)?;
    with_neighbours(model, p, |m| {
        let values = sides
            .iter()
            .map(|&side| {
                let sample = overlap_sample(&size_model(m, side)?, p, method, engine)?;
                Ok(abs_combined(overlap_identity_value(&sample)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(trend_report(
            "overlap_identity_residual",
            &format!("|res(R{p})|"),
            sides,
            &values,
        )
        .with_inputs(CheckInputs::new(m, m.beta(), sample_size(method), method, engine)))
    })
}

/// At infinite temperature the residual is `-1 / (2 |B_p|)`.
pub fn check_overlap_identity_infinite_temperature(model: &Model, p: usize) -> Result<CheckReport> {
    let m = model.with_beta(0.0)?;
    let family = m.family(p)?;
    let moments = ExactGibbs::new(&m, &m.mean_disorder(), 0.0)?.overlap_moments(family)?;
    let value = moments.r12_r13 - 0.5 * moments.r * moments.r - 0.5 * moments.r2;
    let target = -0.5 / family.len() as f64;
    Ok(CheckReport::compare(
        "overlap_identity_beta0",
        format!("res(R{p}) |B|={}", family.len()),
        Estimate::exact(value),
        target,
        Relation::Equal,
        Criterion::Absolute { tol: CLOSED_FORM_TOL },
    )
    .with_side(m.lattice().side()))
}

/// `rho = 2 total_var(R) / (3 thermal_var(R))`.
pub fn variance_ratio(sample: &QuenchedSample) -> Combined {
    // columns: <R>, <R^2>, <R>^2 (variance sample layout)
    sample.combine(|m| 2.0 * (m[1] - m[0] * m[0]) / (3.0 * (m[1] - m[2])))
}

/// `|rho - 1|` does not grow with size; inconclusive when the variances
/// are indistinguishable from zero.
pub fn check_variance_relation(
    model: &Model,
    p: usize,
    sides: &[usize],
    method: &DisorderMethod,
    engine: &Engine,
) -> Result<CheckReport> {
    check_sides(sides)?;
    model.family(p)?;
    if model.params().species().iter().all(|s| !s.is_active()) {
        let mut report = CheckReport::group("variance_relation", format!("|rho(R{p}) - 1|"), Vec::new())
            .with_note("no random couplings: the relation is undefined");
        report.verdict = Verdict::Inconclusive;
        return Ok(report);
    }
    require_on_nishimori(model)?;
    let obs = VarianceObservable::Overlap { p };
    let run = |m: &Model| -> Result<CheckReport> {
        let mut degenerate = false;
        let values = sides
            .iter()
            .map(|&side| {
                let sized = size_model(m, side)?;
                let sample = variance_sample(&sized, obs, sized.beta(), method, engine)?;
                let pair = variance_from_sample(obs, &sample);
                let noise = |c: &Combined| c.value.abs() <= SIGMA * c.std_error;
                if noise(&pair.thermal) && noise(&pair.total) {
                    degenerate = true;
                }
                let rho = variance_ratio(&sample);
                Ok(Combined {
                    value: (rho.value - 1.0).abs(),
                    ..rho
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut report = trend_report("variance_relation", &format!("|rho(R{p}) - 1|"), sides, &values)
            .with_inputs(CheckInputs::new(m, m.beta(), sample_size(method), method, engine));
        if degenerate || values.iter().any(|v| !v.value.is_finite()) {
            report.verdict = Verdict::Inconclusive;
            report.note = Some("both variances are consistent with zero".into());
        }
        Ok(report)
    };
    with_neighbours(model, p, run)
}

fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "-".into()
    } else {
        format!("{x:.6e}")
    }
}

fn push_rows(out: &mut String, report: &CheckReport, depth: usize) {
    let name = format!("{}{} {}", "  ".repeat(depth), report.check, report.label);
    let _ = writeln!(
        out,
        "{:<56} {:>4} {:>14} {:>14} {:>9} {}",
        name,
        report.side.map_or("-".into(), |s| s.to_string()),
        fmt_num(report.value),
        fmt_num(report.target),
        report.margin_sigma.map_or("-".into(), |m| format!("{m:.2}")),
        report.verdict.as_str()
    );
    for part in &report.parts {
        push_rows(out, part, depth + 1);
    }
}

/// Human-readable table of reports and their parts.
pub fn render_table(reports: &[CheckReport]) -> String {
    let mut out = format!(
        "{:<56} {:>4} {:>14} {:>14} {:>9} {}\n",
        "check", "L", "value", "bound/target", "margin_σ", "verdict"
    );
    for r in reports {
        push_rows(&mut out, r, 0);
    }
    out
}
