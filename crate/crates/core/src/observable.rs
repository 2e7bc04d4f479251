//! Gibbs observables shared by the exact and Monte Carlo engines.

use serde::{Deserialize, Serialize};

/// A thermal expectation for one disorder realization.
///
/// Multi-replica observables are expectations in the product measure of
/// independent replicas sharing the same couplings.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Observable {
    /// `<1>`.
    Constant,
    /// `<H>`.
    Energy,
    /// `<sigma_X>`.
    Correlation { sites: Vec<usize> },
    /// `<sigma_A^1 sigma_B^2> = <sigma_A><sigma_B>`.
    ReplicaProduct { a: Vec<usize>, b: Vec<usize> },
    /// `<m^p>`.
    Magnetization { p: usize },
    /// `<(m^p)^2>`.
    MagnetizationSquared { p: usize },
    /// `<R_{1,2}^p>`.
    Overlap { p: usize },
    /// `<(R_{1,2}^p)^2>`.
    OverlapSquared { p: usize },
    /// `<R_{1,2}^p R_{1,3}^p>`.
    OverlapTriple { p: usize },
}

impl Observable {
    pub fn correlation(sites: &[usize]) -> Self {
        Self::Correlation {
            sites: sites.to_vec(),
        }
    }

    /// Independent replicas the estimator needs.
    pub fn replicas(&self) -> usize {
        match self {
            Self::ReplicaProduct { .. } | Self::Overlap { .. } | Self::OverlapSquared { .. } => 2,
            Self::OverlapTriple { .. } => 3,
            _ => 1,
        }
    }

    pub fn label(&self) -> String {
        let sites = |s: &[usize]| s.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        match self {
            Self::Constant => "one".into(),
            Self::Energy => "H".into(),
            Self::Correlation { sites: s } => format!("sigma[{}]", sites(s)),
            Self::ReplicaProduct { a, b } => format!("sigma[{}]*sigma[{}]", sites(a), sites(b)),
            Self::Magnetization { p } => format!("m{p}"),
            Self::MagnetizationSquared { p } => format!("m{p}^2"),
            Self::Overlap { p } => format!("R{p}_12"),
            Self::OverlapSquared { p } => format!("R{p}_12^2"),
            Self::OverlapTriple { p } => format!("R{p}_12*R{p}_13"),
        }
    }

    /// Pointwise `|A| <= 1` (everything but the energy).
    pub fn is_bounded(&self) -> bool {
        !matches!(self, Self::Energy)
    }
}
