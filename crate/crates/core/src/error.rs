use thiserror::Error;

/// Errors produced by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("invalid coupling family: {0}")]
    InvalidFamily(String),

    #[error("invalid model parameters: {0}")]
    InvalidParameters(String),

    #[error(
        "inconsistent Nishimori ratios: species p={p_a} has mu/delta^2 = {ratio_a}, \
         species p={p_b} has mu/delta^2 = {ratio_b}"
    )]
    InconsistentNishimori {
        p_a: usize,
        ratio_a: f64,
        p_b: usize,
        ratio_b: f64,
    },

    #[error("no active disorder species: every delta is zero")]
    NoActiveSpecies,

    #[error("degenerate disorder density for species p={0}: delta = 0 with mu > 0")]
    DegenerateDensity(usize),

    #[error("exact enumeration capacity exceeded: {sites} sites > limit {limit}; use the mcmc engine")]
    Capacity { sites: usize, limit: usize },

    #[error("invalid site {site} for a lattice with {n_sites} sites")]
    InvalidSite { site: usize, n_sites: usize },

    #[error("no coupling family with p={0} in this model")]
    UnknownFamily(usize),

    #[error("parameters are not on the Nishimori manifold: {0}")]
    OffNishimori(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
