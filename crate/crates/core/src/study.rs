//! Study drivers behind the command-line tool and the artifacts they write.
//!
//! Checks run in config order; within a check, realizations run on the
//! worker pool and are collected in realization order. Records carry their
//! position as `tag` and are written sorted by it, so output bytes depend
//! only on the effective config.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::{
    CheckSpec, ComputeBlock, EngineKind, ExperimentConfig, OutputFormat, PhaseProxySpec, ScalingSpec,
};
use crate::disorder_avg::{
    collect_rows, quenched_average, variance_pair, Engine, EstimatorResult, Row, VarianceObservable,
    VariancePair,
};
use crate::error::{Error, Result};
use crate::geometry::{build_family, CouplingFamily, FamilyKind};
use crate::model::{Model, Species};
use crate::observable::Observable;
use crate::sampler::RunContext;
use crate::verify::{self, CheckReport, Verdict};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const SCALING_FILE: &str = "scaling.csv";
pub const PHASE_FILE: &str = "phase_proxy.csv";
pub const TABLE_FILE: &str = "table.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Which parts of the study block a command executes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Checks, scaling study and phase-proxy grid, whichever are configured.
    Run,
    Verify,
    Scaling,
    PhaseProxy,
}

/// Command-line overrides of config values.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub engine: Option<EngineKind>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, config: &ExperimentConfig) -> ExperimentConfig {
        let mut c = config.clone();
        if let Some(seed) = self.seed {
            c.compute.seed = seed;
        }
        if let Some(engine) = self.engine {
            c.compute.engine = engine;
        }
        if let Some(out) = &self.out {
            c.output.directory = out.clone();
        }
        if let Some(workers) = self.workers {
            c.compute.workers = Some(workers);
        }
        c
    }
}

/// Override, then config, then the number of available cores.
pub fn resolve_workers(config: &ComputeBlock) -> usize {
    config
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum RecordBody {
    Check(CheckReport),
    Scaling(ScalingStudy),
    PhaseProxy(PhaseProxyTable),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Record {
    pub tag: usize,
    #[serde(flatten)]
    pub body: RecordBody,
}

impl Record {
    /// Every verdict-bearing report in the record.
    pub fn reports(&self) -> Vec<&CheckReport> {
        match &self.body {
            RecordBody::Check(r) => vec![r],
            RecordBody::Scaling(s) => s
                .rows
                .iter()
                .filter_map(|r| r.bound.as_ref())
                .chain(&s.trends)
                .collect(),
            RecordBody::PhaseProxy(_) => Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub records: Vec<Record>,
    pub failed: usize,
    pub inconclusive: usize,
    pub directory: PathBuf,
    pub table: String,
}

/// Runs `command` with the overrides applied and writes the artifacts.
pub fn execute(command: Command, config: &ExperimentConfig, overrides: &Overrides) -> Result<RunOutcome> {
    let config = overrides.apply(config);
    config.validate()?;
    let workers = resolve_workers(&config.compute);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let records = pool.install(|| run_records(command, &config))?;

    let reports: Vec<&CheckReport> = records.iter().flat_map(Record::reports).collect();
    let failed = reports.iter().filter(|r| r.verdict == Verdict::Fail).count();
    let inconclusive = reports
        .iter()
        .filter(|r| r.verdict == Verdict::Inconclusive)
        .count();
    let table = render(&records);
    let directory = config.output.directory.clone();
    write_artifacts(&directory, command, &config, workers, &records, &table)?;
    Ok(RunOutcome {
        records,
        failed,
        inconclusive,
        directory,
        table,
    })
}

/// Computes the records of `command` without touching the filesystem.
pub fn run_records(command: Command, config: &ExperimentConfig) -> Result<Vec<Record>> {
    let base = config.base_model()?;
    let mut bodies = Vec::new();
    if matches!(command, Command::Run | Command::Verify) {
        for check in &config.study.checks {
            bodies.push(RecordBody::Check(run_check(check, &base, &config.compute)?));
        }
    }
    if matches!(command, Command::Run | Command::Scaling) {
        match &config.study.scaling {
            Some(spec) => bodies.push(RecordBody::Scaling(scaling(&base, spec, &config.compute)?)),
            None if command == Command::Scaling => {
                return Err(Error::Config("study.scaling: missing".into()))
            }
            None => {}
        }
    }
    if matches!(command, Command::Run | Command::PhaseProxy) {
        match &config.study.phase_proxy {
            Some(spec) => bodies.push(RecordBody::PhaseProxy(phase_proxy(&base, spec, &config.compute)?)),
            None if command == Command::PhaseProxy => {
                return Err(Error::Config("study.phase_proxy: missing".into()))
            }
            None => {}
        }
    }
    Ok(bodies
        .into_iter()
        .enumerate()
        .map(|(tag, body)| Record { tag, body })
        .collect())
}

pub fn run_check(check: &CheckSpec, base: &Model, compute: &ComputeBlock) -> Result<CheckReport> {
    let model = match check.model_override() {
        Some(block) => block.build()?,
        None => base.clone(),
    };
    let engine = compute.engine();
    // trends are averaged at their largest size, so that size picks the method
    let method_at = |sides: &[usize]| -> Result<_> {
        let largest = sides.iter().copied().max().unwrap_or(model.lattice().side());
        Ok(compute.method_for(&model.with_side(largest)?))
    };
    let method = compute.method_for(&model);
    match check {
        CheckSpec::InternalEnergyNm { .. } => verify::check_internal_energy_nm(&model, &method, &engine),
        CheckSpec::GaugeCorrelations { beta, x, y, .. } => {
            verify::check_gauge_correlations(&model, *beta, x, y, &method, &engine)
        }
        CheckSpec::MagnetizationSquareBound { beta, .. } => {
            verify::check_magnetization_square_bound(&model, *beta, &method, &engine)
        }
        CheckSpec::SpontaneousMagnetizationBound { beta, mu1_sweep, .. } => {
            verify::check_spontaneous_magnetization_bound(&model, *beta, mu1_sweep, &method, &engine)
        }
        CheckSpec::TruncatedK1 { p, x, .. } => verify::check_truncated_k1(&model, *p, x, &method, &engine),
        CheckSpec::K3Combination { p, x, .. } => {
            verify::check_k3_combination(&model, *p, x, &method, &engine)
        }
        CheckSpec::MagnetizationVarianceBound { p, .. } => {
            verify::check_magnetization_variance_bound(&model, *p, &method, &engine)
        }
        CheckSpec::OverlapVarianceDecay { p, sides, .. } => {
            verify::check_overlap_variance_decay(&model, *p, sides, &method_at(sides)?, &engine)
        }
        CheckSpec::OverlapIdentityResidual { p, sides, .. } => {
            verify::check_overlap_identity_residual(&model, *p, sides, &method_at(sides)?, &engine)
        }
        CheckSpec::OverlapIdentityBeta0 { p, .. } => {
            verify::check_overlap_identity_infinite_temperature(&model, *p)
        }
        CheckSpec::VarianceRelation { p, sides, .. } => {
            verify::check_variance_relation(&model, *p, sides, &method_at(sides)?, &engine)
        }
    }
}

/// Least-squares slope of `log(variance)` against `log|B_p|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub series: String,
    pub slope: f64,
    pub std_error: f64,
    /// 95 % Student-t interval.
    pub ci_low: f64,
    pub ci_high: f64,
    pub points: usize,
}

/// Fits `y ~ a x^slope` on log-log axes; `None` with fewer than three
/// positive points.
pub fn fit_power_law(series: &str, xs: &[f64], ys: &[f64]) -> Option<ExponentFit> {
    let points: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let k = points.len();
    if k < 3 {
        return None;
    }
    let n = k as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let dof = n - 2.0;
    let std_error = (sse / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof).ok()?.inverse_cdf(0.975);
    Some(ExponentFit {
        series: series.into(),
        slope,
        std_error,
        ci_low: slope - t * std_error,
        ci_high: slope + t * std_error,
        points: k,
    })
}

type RowValue = fn(&ScalingRow) -> f64;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingRow {
    pub side: usize,
    pub sites: usize,
    pub family_size: usize,
    pub magnetization: VariancePair,
    pub overlap: VariancePair,
    /// `thermal_var(m^p)` against its bound; absent when `beta delta_p = 0`.
    pub bound: Option<CheckReport>,
}

/// Finite-size stand-ins for the ferromagnetic and spin-glass order
/// parameters at the weakest configured field.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderProxies {
    pub side: usize,
    pub mu1: f64,
    pub delta1: f64,
    pub m_plus: EstimatorResult,
    pub q_plus: EstimatorResult,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingStudy {
    pub observable: String,
    pub p: usize,
    pub beta: f64,
    pub on_nishimori: bool,
    pub engine: String,
    pub sides: Vec<usize>,
    pub rows: Vec<ScalingRow>,
    pub fits: Vec<ExponentFit>,
    pub trends: Vec<CheckReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proxies: Option<OrderProxies>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Adds or replaces the field species; a model without `B_1` gets the
/// default field family.
pub fn with_field(model: &Model, field: Species) -> Result<Model> {
    let params = model.params().with_species(field)?;
    let families = params
        .species()
        .iter()
        .map(|s| match model.family(s.p) {
            Ok(f) => Ok(f.clone()),
            Err(_) => {
                let kind = FamilyKind::default_for(s.p, model.lattice().kind())
                    .ok_or_else(|| Error::InvalidFamily(format!("no default family for p={}", s.p)))?;
                build_family(model.lattice(), kind, s.p)
            }
        })
        .collect::<Result<Vec<CouplingFamily>>>()?;
    Model::new(model.lattice().clone(), params, families)
}

pub fn scaling(base: &Model, spec: &ScalingSpec, compute: &ComputeBlock) -> Result<ScalingStudy> {
    let engine = compute.engine();
    if matches!(engine, Engine::Mcmc(_)) && !compute.mcmc_scaling {
        return Err(Error::Config(
            "compute.mcmc_scaling: the scaling study needs the exact engine unless this flag is set".into(),
        ));
    }
    let p = spec.p;
    base.family(p)?;
    let beta = base.beta();
    let mut rows = Vec::with_capacity(spec.sides.len());
    for &side in &spec.sides {
        let model = base.with_side(side)?;
        let method = compute.method_for(&model);
        let magnetization = variance_pair(&model, VarianceObservable::Magnetization { p }, &method, &engine)?;
        let overlap = variance_pair(&model, VarianceObservable::Overlap { p }, &method, &engine)?;
        let delta = model.params().species_for(p).map_or(0.0, |s| s.delta);
        let bound = if beta * delta > 0.0 {
            Some(verify::magnetization_variance_bound_report(
                &model,
                p,
                &magnetization,
                &method,
                &engine,
            )?)
        } else {
            None
        };
        rows.push(ScalingRow {
            side,
            sites: model.num_sites(),
            family_size: model.family(p)?.len(),
            magnetization,
            overlap,
            bound,
        });
    }

    let sizes: Vec<f64> = rows.iter().map(|r| r.family_size as f64).collect();
    let series: [(&str, RowValue); 4] = [
        ("thermal_var(m)", |r| r.magnetization.thermal.value),
        ("total_var(m)", |r| r.magnetization.total.value),
        ("thermal_var(R)", |r| r.overlap.thermal.value),
        ("total_var(R)", |r| r.overlap.total.value),
    ];
    let mut fits = Vec::new();
    let mut notes = Vec::new();
    for (name, value) in &series {
        let ys: Vec<f64> = rows.iter().map(value).collect();
        match fit_power_law(&format!("{name}{p}"), &sizes, &ys) {
            Some(fit) => fits.push(fit),
            None => notes.push(format!(
                "{name}{p}: fewer than three positive points, no exponent fit"
            )),
        }
    }
    let trends = vec![
        verify::trend_report(
            "scaling_trend",
            &format!("thermal_var(R{p})"),
            &spec.sides,
            &rows.iter().map(|r| r.overlap.thermal).collect::<Vec<_>>(),
        ),
        verify::trend_report(
            "scaling_trend",
            &format!("total_var(R{p})"),
            &spec.sides,
            &rows.iter().map(|r| r.overlap.total).collect::<Vec<_>>(),
        ),
    ];

    let beta_n = base.params().nishimori_beta().ok();
    let proxies = match spec.mu1.iter().copied().reduce(f64::min) {
        Some(mu1) => {
            let side = *spec.sides.last().expect("validated non-empty");
            // on the Nishimori manifold the field follows the ray delta_1^2 = mu_1 / beta_N
            let delta1 = beta_n.map_or(0.0, |b| (mu1 / b).sqrt());
            let model = with_field(&base.with_side(side)?, Species::new(1, delta1, mu1))?;
            let method = compute.method_for(&model);
            Some(OrderProxies {
                side,
                mu1,
                delta1,
                m_plus: quenched_average(&model, &Observable::Magnetization { p: 1 }, &method, &engine)?,
                q_plus: quenched_average(&model, &Observable::Overlap { p: 1 }, &method, &engine)?,
            })
        }
        None => None,
    };

    Ok(ScalingStudy {
        observable: format!("m{p},R{p}"),
        p,
        beta,
        on_nishimori: beta_n.is_some_and(|b| b == beta),
        engine: engine.tag().into(),
        sides: spec.sides.clone(),
        rows,
        fits,
        trends,
        proxies,
        notes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseProxyRow {
    pub beta: f64,
    pub mu2: f64,
    pub delta2: f64,
    pub m1: f64,
    pub m1_stderr: f64,
    pub r1: f64,
    pub r1_stderr: f64,
    /// `mu_2 / delta_2^2`; absent without bond disorder.
    pub nishimori_beta: Option<f64>,
    pub on_nishimori: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseProxyTable {
    pub side: usize,
    pub mu1: f64,
    pub delta1: f64,
    pub n: usize,
    pub disorder: String,
    pub seed: Option<u64>,
    pub rows: Vec<PhaseProxyRow>,
}

/// `(E<m^1>, E<R^1_12>)` over the `(beta, mu_2)` grid, beta-major.
pub fn phase_proxy(base: &Model, spec: &PhaseProxySpec, compute: &ComputeBlock) -> Result<PhaseProxyTable> {
    if compute.engine != EngineKind::Exact {
        return Err(Error::Config(
            "compute.engine: the phase-proxy sweep needs the exact engine".into(),
        ));
    }
    let side = spec.side.unwrap_or(base.lattice().side());
    let sized = base.with_side(side)?;
    let bonds = *sized
        .params()
        .species_for(2)
        .ok_or_else(|| Error::Config("model.species: the phase-proxy sweep needs a p=2 species".into()))?;
    let field = Species::new(1, spec.delta1, spec.mu1);
    let engine = Engine::Exact;
    let observables = [Observable::Magnetization { p: 1 }, Observable::Overlap { p: 1 }];

    let mut rows = Vec::with_capacity(spec.beta.len() * spec.mu2.len());
    let mut last_method = None;
    for &beta in &spec.beta {
        for &mu2 in &spec.mu2 {
            let with_bonds = sized.with_params(
                sized
                    .params()
                    .with_beta(beta)?
                    .with_species(Species::new(2, bonds.delta, mu2))?,
            )?;
            let model = with_field(&with_bonds, field)?;
            let method = compute.method_for(&model);
            let seed = method.seed().unwrap_or(0);
            let sample = collect_rows(&model, &method, |d| {
                let est = engine.evaluate(
                    &model,
                    d,
                    &[beta],
                    &observables,
                    RunContext::new(seed, d.provenance().index, 0),
                )?;
                let mut row = Row::with_capacity(2);
                row.push(est[0][0]);
                row.push(est[0][1]);
                Ok(row)
            })?;
            let (m1, r1) = (sample.mean(0), sample.mean(1));
            let nishimori_beta = (bonds.delta > 0.0).then(|| mu2 / (bonds.delta * bonds.delta));
            rows.push(PhaseProxyRow {
                beta,
                mu2,
                delta2: bonds.delta,
                m1: m1.value,
                m1_stderr: m1.std_error,
                r1: r1.value,
                r1_stderr: r1.std_error,
                nishimori_beta,
                on_nishimori: nishimori_beta.is_some_and(|b| (beta - b).abs() <= 1e-9 * b.abs().max(1.0)),
            });
            last_method = Some((method, sample.n()));
        }
    }
    let (method, n) = last_method.expect("grid is non-empty");
    Ok(PhaseProxyTable {
        side,
        mu1: spec.mu1,
        delta1: spec.delta1,
        n,
        disorder: method.tag().into(),
        seed: method.seed(),
        rows,
    })
}

fn render(records: &[Record]) -> String {
    let reports: Vec<CheckReport> = records.iter().flat_map(Record::reports).cloned().collect();
    let mut out = verify::render_table(&reports);
    for record in records {
        match &record.body {
            RecordBody::Scaling(s) => {
                out.push_str(&format!(
                    "\nscaling p={} beta={} ({})\n{:>4} {:>6} {:>14} {:>14} {:>14} {:>14}\n",
                    s.p,
                    s.beta,
                    s.engine,
                    "L",
                    "|B_p|",
                    "thermal_var(m)",
                    "total_var(m)",
                    "thermal_var(R)",
                    "total_var(R)"
                ));
                for r in &s.rows {
                    out.push_str(&format!(
                        "{:>4} {:>6} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e}\n",
                        r.side,
                        r.family_size,
                        r.magnetization.thermal.value,
                        r.magnetization.total.value,
                        r.overlap.thermal.value,
                        r.overlap.total.value
                    ));
                }
                for f in &s.fits {
                    out.push_str(&format!(
                        "fit {:<18} slope {:>9.4} [{:.4}, {:.4}] ({} points)\n",
                        f.series, f.slope, f.ci_low, f.ci_high, f.points
                    ));
                }
                if let Some(px) = &s.proxies {
                    out.push_str(&format!(
                        "proxies L={} mu1={}: m+ ~ {:.6} ± {:.1e}, q+ ~ {:.6} ± {:.1e}\n",
                        px.side, px.mu1, px.m_plus.mean, px.m_plus.stderr, px.q_plus.mean, px.q_plus.stderr
                    ));
                }
            }
            RecordBody::PhaseProxy(t) => {
                out.push_str(&format!(
                    "\nphase proxy L={} mu1={}: {} grid points in {PHASE_FILE}\n",
                    t.side,
                    t.mu1,
                    t.rows.len()
                ));
            }
            RecordBody::Check(_) => {}
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub version: String,
    pub command: Command,
    pub seed: u64,
    pub engine: EngineKind,
    pub workers: usize,
    /// Covers the effective config, the seed and every family serialization.
    pub run_sha256: String,
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub artifacts: Vec<String>,
    pub timestamp_unix: u64,
}

pub fn run_hash(config: &ExperimentConfig) -> Result<String> {
    let mut h = Sha256::new();
    h.update(config.to_json().as_bytes());
    h.update(b"\n");
    h.update(config.compute.seed.to_string().as_bytes());
    h.update(b"\n");
    h.update(config.family_fingerprint()?.as_bytes());
    Ok(hex(&h.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

fn summary_rows(path: &str, report: &CheckReport, out: &mut Vec<Vec<String>>) {
    out.push(vec![
        path.to_string(),
        report.check.clone(),
        report.label.clone(),
        report.side.map_or(String::new(), |s| s.to_string()),
        report.value.to_string(),
        report.target.to_string(),
        report.std_error.to_string(),
        fmt_opt(report.margin_sigma),
        report.verdict.as_str().to_string(),
    ]);
    for (k, part) in report.parts.iter().enumerate() {
        summary_rows(&format!("{path}.{k}"), part, out);
    }
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    w.write_record(header).map_err(|e| Error::Io(e.into()))?;
    for row in rows {
        w.write_record(row).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

fn write_artifacts(
    dir: &Path,
    command: Command,
    config: &ExperimentConfig,
    workers: usize,
    records: &[Record],
    table: &str,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut artifacts = Vec::new();
    let output = &config.output;

    if output.wants(OutputFormat::Jsonl) {
        let mut f = fs::File::create(dir.join(RESULTS_FILE))?;
        for record in records {
            serde_json::to_writer(&mut f, record)?;
            f.write_all(b"\n")?;
        }
        artifacts.push(RESULTS_FILE.to_string());
    }

    if output.wants(OutputFormat::Csv) {
        let mut rows = Vec::new();
        for record in records {
            for (k, report) in record.reports().into_iter().enumerate() {
                summary_rows(&format!("{}.{k}", record.tag), report, &mut rows);
            }
        }
        write_csv(
            &dir.join(SUMMARY_FILE),
            &[
                "path",
                "check",
                "label",
                "side",
                "value",
                "target",
                "std_error",
                "margin_sigma",
                "verdict",
            ],
            &rows,
        )?;
        artifacts.push(SUMMARY_FILE.to_string());

        for record in records {
            match &record.body {
                RecordBody::Scaling(s) => {
                    let rows: Vec<Vec<String>> = s
                        .rows
                        .iter()
                        .map(|r| {
                            vec![
                                r.side.to_string(),
                                r.sites.to_string(),
                                r.family_size.to_string(),
                                r.magnetization.thermal.value.to_string(),
                                r.magnetization.thermal.std_error.to_string(),
                                r.magnetization.total.value.to_string(),
                                r.magnetization.total.std_error.to_string(),
                                r.overlap.thermal.value.to_string(),
                                r.overlap.thermal.std_error.to_string(),
                                r.overlap.total.value.to_string(),
                                r.overlap.total.std_error.to_string(),
                                r.bound.as_ref().map_or(String::new(), |b| b.target.to_string()),
                            ]
                        })
                        .collect();
                    write_csv(
                        &dir.join(SCALING_FILE),
                        &[
                            "side",
                            "sites",
                            "family_size",
                            "thermal_var_m",
                            "thermal_var_m_stderr",
                            "total_var_m",
                            "total_var_m_stderr",
                            "thermal_var_r",
                            "thermal_var_r_stderr",
                            "total_var_r",
                            "total_var_r_stderr",
                            "thermal_var_m_bound",
                        ],
                        &rows,
                    )?;
                    artifacts.push(SCALING_FILE.to_string());
                }
                RecordBody::PhaseProxy(t) => {
                    let rows: Vec<Vec<String>> = t
                        .rows
                        .iter()
                        .map(|r| {
                            vec![
                                r.beta.to_string(),
                                r.mu2.to_string(),
                                r.delta2.to_string(),
                                r.m1.to_string(),
                                r.m1_stderr.to_string(),
                                r.r1.to_string(),
                                r.r1_stderr.to_string(),
                                fmt_opt(r.nishimori_beta),
                                r.on_nishimori.to_string(),
                            ]
                        })
                        .collect();
                    write_csv(
                        &dir.join(PHASE_FILE),
                        &[
                            "beta",
                            "mu2",
                            "delta2",
                            "m1",
                            "m1_stderr",
                            "r1",
                            "r1_stderr",
                            "nishimori_beta",
                            "on_nishimori",
                        ],
                        &rows,
                    )?;
                    artifacts.push(PHASE_FILE.to_string());
                }
                RecordBody::Check(_) => {}
            }
        }
    }

    if output.wants(OutputFormat::Table) {
        fs::write(dir.join(TABLE_FILE), table)?;
        artifacts.push(TABLE_FILE.to_string());
    }

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").into(),
        command,
        seed: config.compute.seed,
        engine: config.compute.engine,
        workers,
        run_sha256: run_hash(config)?,
        config_sha256: hex(&Sha256::digest(config.to_json().as_bytes())),
        config: config.clone(),
        artifacts,
        timestamp_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ModelBlock, SpeciesBlock};
    use crate::geometry::{LatticeKind, LatticeSpec};

    fn block(
        d: usize,
        side: usize,
        kind: LatticeKind,
        beta: f64,
        species: &[(usize, f64, f64)],
    ) -> ModelBlock {
        ModelBlock {
            lattice: LatticeSpec::new(d, side, kind).unwrap(),
            beta,
            species: species
                .iter()
                .map(|&(p, delta, mu)| SpeciesBlock {
                    p,
                    delta,
                    mu,
                    family: None,
                    ranges: None,
                })
                .collect(),
        }
    }

    #[test]
    fn power_law_fit_recovers_exponent() {
        let xs = [4.0, 12.0, 24.0, 40.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.5)).collect();
        let fit = fit_power_law("v", &xs, &ys).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!(fit.ci_low <= fit.slope && fit.slope <= fit.ci_high);
        assert!(fit_power_law("v", &xs[..2], &ys[..2]).is_none());
    }

    #[test]
    fn power_law_interval_widens_with_noise() {
        let xs = [4.0, 12.0, 24.0, 40.0];
        let ys = [1.0, 0.5, 0.4, 0.2];
        let fit = fit_power_law("v", &xs, &ys).unwrap();
        assert!(fit.std_error > 0.0);
        let t = StudentsT::new(0.0, 1.0, 2.0).unwrap().inverse_cdf(0.975);
        assert!((fit.ci_high - fit.slope - t * fit.std_error).abs() < 1e-12);
    }

    #[test]
    fn infinite_temperature_scaling_rows_match_uniform_measure() {
        let base = block(2, 2, LatticeKind::ShortRange, 0.0, &[(2, 1.0, 0.0)])
            .build()
            .unwrap();
        let spec = ScalingSpec {
            p: 2,
            sides: vec![2, 3, 4],
            mu1: vec![],
        };
        let compute = ComputeBlock {
            n: 4,
            ..ComputeBlock::default()
        };
        let s = scaling(&base, &spec, &compute).unwrap();
        for r in &s.rows {
            let inv = 1.0 / r.family_size as f64;
            assert!((r.magnetization.thermal.value - inv).abs() <= 1e-12);
            assert!((r.magnetization.total.value - inv).abs() <= 1e-12);
            assert!((r.overlap.thermal.value - inv).abs() <= 1e-12);
            assert!(r.bound.is_none());
        }
        let fit = s.fits.iter().find(|f| f.series == "thermal_var(m)2").unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-9);
    }

    #[test]
    fn field_is_added_with_default_family() {
        let m = block(2, 3, LatticeKind::ShortRange, 0.5, &[(2, 1.0, 0.5)])
            .build()
            .unwrap();
        let f = with_field(&m, Species::new(1, 0.0, 0.1)).unwrap();
        assert_eq!(f.family(1).unwrap().len(), 9);
        assert_eq!(f.family(2).unwrap(), m.family(2).unwrap());
    }

    #[test]
    fn phase_proxy_symmetric_and_infinite_temperature_rows() {
        let base = block(2, 2, LatticeKind::ShortRange, 1.0, &[(2, 1.0, 0.5)])
            .build()
            .unwrap();
        let spec = PhaseProxySpec {
            beta: vec![0.0, 0.7],
            mu2: vec![0.0, 0.5],
            mu1: 0.0,
            delta1: 0.0,
            side: None,
        };
        let compute = ComputeBlock {
            n: 50,
            disorder: crate::config::DisorderChoice::Sampled,
            ..ComputeBlock::default()
        };
        let t = phase_proxy(&base, &spec, &compute).unwrap();
        assert_eq!(t.rows.len(), 4);
        for r in &t.rows {
            // even couplings only: every realization is Z2 symmetric
            assert!(r.m1.abs() <= 1e-12, "{r:?}");
            if r.beta == 0.0 {
                assert!(r.r1.abs() <= 1e-12);
            }
        }
        assert!(t.rows[3].nishimori_beta == Some(0.5) && !t.rows[3].on_nishimori);
    }

    #[test]
    fn run_records_are_tagged_in_order() {
        let model = block(1, 2, LatticeKind::ShortRange, 0.5, &[(2, 1.0, 0.5)]);
        let config = ExperimentConfig {
            model,
            study: crate::config::StudyBlock {
                checks: vec![
                    CheckSpec::GaugeCorrelations {
                        beta: 0.25,
                        x: vec![0],
                        y: vec![1],
                        model: None,
                    },
                    CheckSpec::InternalEnergyNm { model: None },
                ],
                scaling: None,
                phase_proxy: None,
            },
            compute: ComputeBlock::default(),
            output: Default::default(),
        };
        let records = run_records(Command::Verify, &config).unwrap();
        assert_eq!(records.iter().map(|r| r.tag).collect::<Vec<_>>(), vec![0, 1]);
        assert!(records
            .iter()
            .flat_map(Record::reports)
            .all(|r| r.verdict == Verdict::Pass));
        assert!(run_records(Command::Scaling, &config).is_err());
    }

    #[test]
    fn run_hash_depends_on_seed_and_families() {
        let model = block(2, 3, LatticeKind::ShortRange, 0.5, &[(2, 1.0, 0.5)]);
        let config = ExperimentConfig {
            model,
            study: Default::default(),
            compute: ComputeBlock::default(),
            output: Default::default(),
        };
        let mut seeded = config.clone();
        seeded.compute.seed = 2;
        let mut bigger = config.clone();
        bigger.model.lattice = LatticeSpec::new(2, 4, LatticeKind::ShortRange).unwrap();
        let h = run_hash(&config).unwrap();
        assert_eq!(h, run_hash(&config.clone()).unwrap());
        assert_ne!(h, run_hash(&seeded).unwrap());
        assert_ne!(h, run_hash(&bigger).unwrap());
    }
}
