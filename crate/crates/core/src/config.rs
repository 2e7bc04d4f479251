//! Experiment configuration: a strict JSON schema describing one run.
//!
//! Every block rejects unknown keys. Defaults are filled in on load, so a
//! loaded config serializes to a document that parses back to the same value.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::disorder_avg::{DisorderMethod, Engine};
use crate::error::{Error, Result};
use crate::geometry::{build_family, CouplingFamily, FamilyKind, LatticeSpec};
use crate::model::{Model, ModelParameters, Species};
use crate::sampler::McmcSettings;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelBlock,
    #[serde(default)]
    pub study: StudyBlock,
    #[serde(default)]
    pub compute: ComputeBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

/// Lattice, temperature and one entry per disorder species.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub lattice: LatticeSpec,
    pub beta: f64,
    pub species: Vec<SpeciesBlock>,
}

/// A species and its support: the default family for `p`, a named kind,
/// or explicit ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesBlock {
    pub p: usize,
    pub delta: f64,
    pub mu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilyKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranges: Option<Vec<Vec<usize>>>,
}

impl SpeciesBlock {
    pub fn species(&self) -> Species {
        Species::new(self.p, self.delta, self.mu)
    }
}

impl ModelBlock {
    pub fn build(&self) -> Result<Model> {
        let kind = self.lattice.kind();
        let species = self.species.iter().map(SpeciesBlock::species).collect();
        let params = ModelParameters::new(self.beta, species, kind)?;
        let families = self
            .species
            .iter()
            .enumerate()
            .map(|(k, s)| {
                self.family(s)
                    .map_err(|e| Error::Config(format!("model.species[{k}]: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Model::new(self.lattice.clone(), params, families)
    }

    fn family(&self, s: &SpeciesBlock) -> Result<CouplingFamily> {
        match (&s.ranges, s.family) {
            (Some(ranges), None | Some(FamilyKind::Custom)) => {
                CouplingFamily::custom(s.p, self.lattice.num_sites(), ranges.clone())
            }
            (Some(_), Some(_)) => Err(Error::Config(
                "explicit ranges require family \"custom\" or no family".into(),
            )),
            (None, kind) => {
                let kind = kind
                    .or_else(|| FamilyKind::default_for(s.p, self.lattice.kind()))
                    .ok_or_else(|| Error::Config(format!("no default family for p={}", s.p)))?;
                build_family(&self.lattice, kind, s.p)
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyBlock {
    #[serde(default)]
    pub checks: Vec<CheckSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_proxy: Option<PhaseProxySpec>,
}

/// One identity or bound check. Temperatures are absolute; `model`
/// replaces the top-level model for this check only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckSpec {
    InternalEnergyNm {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<ModelBlock>,
    },
    GaugeCorrelations {
        beta: f64,
        x: Vec<usize>,
        y: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<ModelBlock>,
    },
    MagnetizationSquareBound {
        beta: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<ModelBlock>,
    },
    SpontaneousMagnetizationBound {
        beta: f64,
        #[serde(default)]
        mu1_sweep: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<ModelBlock>,
    },
    TruncatedK1 {
        p: usize,
        x: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<ModelBlock>,
    },
    K3Combination {
        p: usize,
        x: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<ModelBlock>,
    },
    MagnetizationVarianceBound {
        p: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<ModelBlock>,
    },
    OverlapVarianceDecay {
        p: usize,
        sides: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<ModelBlock>,
    },
    OverlapIdentityResidual {
        p: usize,
        sides: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<ModelBlock>,
    },
    OverlapIdentityBeta0 {
        p: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<ModelBlock>,
    },
    VarianceRelation {
        p: usize,
        sides: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<ModelBlock>,
    },
}

impl CheckSpec {
    pub fn model_override(&self) -> Option<&ModelBlock> {
        match self {
            Self::InternalEnergyNm { model }
            | Self::GaugeCorrelations { model, .. }
            | Self::MagnetizationSquareBound { model, .. }
            | Self::SpontaneousMagnetizationBound { model, .. }
            | Self::TruncatedK1 { model, .. }
            | Self::K3Combination { model, .. }
            | Self::MagnetizationVarianceBound { model, .. }
            | Self::OverlapVarianceDecay { model, .. }
            | Self::OverlapIdentityResidual { model, .. }
            | Self::OverlapIdentityBeta0 { model, .. }
            | Self::VarianceRelation { model, .. } => model.as_ref(),
        }
    }
}

/// Size series of the variances of `m^p` and `R^p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSpec {
    pub p: usize,
    pub sides: Vec<usize>,
    /// Field strengths for the order-parameter proxies; the smallest is used.
    #[serde(default)]
    pub mu1: Vec<f64>,
}

/// Grid of `(beta, mu_2)` at fixed field `(delta_1, mu_1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseProxySpec {
    pub beta: Vec<f64>,
    pub mu2: Vec<f64>,
    pub mu1: f64,
    #[serde(default)]
    pub delta1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    #[default]
    Exact,
    Mcmc,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisorderChoice {
    /// Quadrature for at most three random couplings, sampling otherwise.
    #[default]
    Auto,
    Sampled,
    Quadrature,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComputeBlock {
    pub engine: EngineKind,
    /// Realizations per sampled quenched average.
    pub n: usize,
    pub seed: u64,
    pub workers: Option<usize>,
    pub disorder: DisorderChoice,
    pub mcmc: McmcSettings,
    /// Lets the scaling study run on Monte Carlo estimates.
    pub mcmc_scaling: bool,
}

impl Default for ComputeBlock {
    fn default() -> Self {
        Self {
            engine: EngineKind::Exact,
            n: 1000,
            seed: 1,
            workers: None,
            disorder: DisorderChoice::Auto,
            mcmc: McmcSettings::default(),
            mcmc_scaling: false,
        }
    }
}

impl ComputeBlock {
    pub fn engine(&self) -> Engine {
        match self.engine {
            EngineKind::Exact => Engine::Exact,
            EngineKind::Mcmc => Engine::Mcmc(self.mcmc.clone()),
        }
    }

    pub fn method_for(&self, model: &Model) -> DisorderMethod {
        match self.disorder {
            DisorderChoice::Auto => DisorderMethod::auto(model, self.n, self.seed),
            DisorderChoice::Sampled => DisorderMethod::sampled(self.n, self.seed),
            DisorderChoice::Quadrature => DisorderMethod::quadrature(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Jsonl,
    Csv,
    Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub directory: PathBuf,
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("results"),
            formats: vec![OutputFormat::Jsonl, OutputFormat::Csv, OutputFormat::Table],
        }
    }
}

impl OutputBlock {
    pub fn wants(&self, format: OutputFormat) -> bool {
        self.formats.contains(&format)
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Canonical serialization, used for hashing.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn base_model(&self) -> Result<Model> {
        self.model
            .build()
            .map_err(|e| Error::Config(format!("model: {e}")))
    }

    /// Builds every model named by the config so errors surface before any
    /// computation starts.
    pub fn validate(&self) -> Result<()> {
        self.base_model()?;
        for (k, check) in self.study.checks.iter().enumerate() {
            if let Some(block) = check.model_override() {
                block
                    .build()
                    .map_err(|e| Error::Config(format!("study.checks[{k}].model: {e}")))?;
            }
        }
        if let Some(s) = &self.study.scaling {
            if s.sides.len() < 2 || s.sides.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(
                    "study.scaling.sides: need at least two strictly increasing sizes".into(),
                ));
            }
            if s.mu1.iter().any(|&m| m.is_nan() || m <= 0.0) {
                return Err(Error::Config(
                    "study.scaling.mu1: field strengths must be positive".into(),
                ));
            }
        }
        if let Some(g) = &self.study.phase_proxy {
            if g.beta.is_empty() || g.mu2.is_empty() {
                return Err(Error::Config(
                    "study.phase_proxy: beta and mu2 must be non-empty".into(),
                ));
            }
        }
        if self.compute.n < 2 {
            return Err(Error::Config("compute.n: need at least 2 realizations".into()));
        }
        if self.compute.workers == Some(0) {
            return Err(Error::Config("compute.workers: must be positive".into()));
        }
        Ok(())
    }

    /// Serialized families of every model the run touches.
    pub fn family_fingerprint(&self) -> Result<String> {
        let mut models = vec![self.base_model()?];
        for check in &self.study.checks {
            if let Some(block) = check.model_override() {
                models.push(block.build()?);
            }
        }
        let families: Vec<&[CouplingFamily]> = models.iter().map(|m| m.families()).collect();
        Ok(serde_json::to_string(&families)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "model": {
            "lattice": {"dimension": 2, "side": 3, "kind": "short_range"},
            "beta": 0.5,
            "species": [{"p": 2, "delta": 1.0, "mu": 0.5}]
        }
    }"#;

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.compute.engine, EngineKind::Exact);
        assert_eq!(c.output.formats.len(), 3);
        assert_eq!(c.base_model().unwrap().family(2).unwrap().len(), 12);
    }

    #[test]
    fn round_trip_is_lossless() {
        let text = r#"{
            "model": {
                "lattice": {"dimension": 1, "side": 2, "kind": "short_range"},
                "beta": 0.5,
                "species": [{"p": 2, "delta": 1.0, "mu": 0.5, "ranges": [[0, 1]]}]
            },
            "study": {
                "checks": [
                    {"check": "gauge_correlations", "beta": 0.25, "x": [0], "y": [1]},
                    {"check": "overlap_identity_beta0", "p": 2,
                     "model": {"lattice": {"dimension": 1, "side": 4, "kind": "mean_field"},
                               "beta": 0.5, "species": [{"p": 2, "delta": 1.0, "mu": 0.5}]}}
                ],
                "scaling": {"p": 2, "sides": [2, 3], "mu1": [0.1]}
            },
            "compute": {"engine": "mcmc", "n": 10, "seed": 9, "mcmc": {"sweeps": 100}}
        }"#;
        let c = ExperimentConfig::from_json(text).unwrap();
        let again = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.to_json(), again.to_json());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = MINIMAL.replace("\"beta\": 0.5", "\"beta\": 0.5, \"temperature\": 2");
        let e = ExperimentConfig::from_json(&bad).unwrap_err().to_string();
        assert!(e.contains("temperature"), "{e}");
    }

    #[test]
    fn missing_beta_is_named() {
        let bad = MINIMAL.replace("\"beta\": 0.5,", "");
        let e = ExperimentConfig::from_json(&bad).unwrap_err().to_string();
        assert!(e.contains("missing field `beta`"), "{e}");
        assert!(e.contains("line"), "{e}");
    }

    #[test]
    fn unknown_check_is_rejected() {
        let bad = MINIMAL.replace(
            "\"species\": [{\"p\": 2, \"delta\": 1.0, \"mu\": 0.5}]\n        }",
            "\"species\": [{\"p\": 2, \"delta\": 1.0, \"mu\": 0.5}]\n        }, \"study\": {\"checks\": [{\"check\": \"nope\"}]}",
        );
        assert!(ExperimentConfig::from_json(&bad).is_err());
    }

    #[test]
    fn invalid_model_reports_location() {
        let bad = MINIMAL.replace("\"p\": 2,", "\"p\": 3,");
        let e = ExperimentConfig::from_json(&bad).unwrap_err().to_string();
        assert!(e.contains("model"), "{e}");
    }

    #[test]
    fn scaling_sides_must_increase() {
        let bad = MINIMAL.replacen(
            "\"model\"",
            "\"study\": {\"scaling\": {\"p\": 2, \"sides\": [3, 2]}}, \"model\"",
            1,
        );
        let e = ExperimentConfig::from_json(&bad).unwrap_err().to_string();
        assert!(e.contains("study.scaling.sides"), "{e}");
    }

    #[test]
    fn fingerprint_tracks_families() {
        let a = ExperimentConfig::from_json(MINIMAL).unwrap();
        let b = ExperimentConfig::from_json(&MINIMAL.replace("\"side\": 3", "\"side\": 4")).unwrap();
        assert_ne!(a.family_fingerprint().unwrap(), b.family_fingerprint().unwrap());
    }
}
