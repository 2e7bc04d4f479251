use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CouplingTable;
use crate::rng::{unit, RngPosition, StreamId};

/// Sweeps between full energy recomputations.
pub const DRIFT_CHECK_EVERY: u64 = 1000;

/// One Markov chain: configuration, cached energy, and its random stream.
#[derive(Clone, Debug)]
pub struct ChainState {
    spins: Vec<i8>,
    energy: f64,
    sweeps: u64,
    proposed: u64,
    accepted: u64,
    max_drift: f64,
    stream: StreamId,
    rng: ChaCha8Rng,
}

/// Resumable chain snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainCheckpoint {
    pub spins: Vec<i8>,
    pub sweeps: u64,
    pub rng: RngPosition,
}

impl ChainState {
    /// Random initial configuration drawn from the chain's own stream.
    pub fn random(table: &CouplingTable, stream: StreamId) -> Self {
        let mut rng = stream.rng();
        let spins: Vec<i8> = (0..table.n_sites())
            .map(|_| if unit(&mut rng) < 0.5 { 1 } else { -1 })
            .collect();
        Self::from_parts(table, spins, 0, stream, rng)
    }

    fn from_parts(
        table: &CouplingTable,
        spins: Vec<i8>,
        sweeps: u64,
        stream: StreamId,
        rng: ChaCha8Rng,
    ) -> Self {
        let energy = table.energy(&spins);
        Self {
            spins,
            energy,
            sweeps,
            proposed: 0,
            accepted: 0,
            max_drift: 0.0,
            stream,
            rng,
        }
    }

    pub fn restore(table: &CouplingTable, checkpoint: &ChainCheckpoint) -> Result<Self> {
        if checkpoint.spins.len() != table.n_sites() || checkpoint.spins.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidParameters(
                "checkpoint spins do not fit the model".into(),
            ));
        }
        Ok(Self::from_parts(
            table,
            checkpoint.spins.clone(),
            checkpoint.sweeps,
            checkpoint.rng.id,
            checkpoint.rng.restore(),
        ))
    }

    pub fn checkpoint(&self) -> ChainCheckpoint {
        ChainCheckpoint {
            spins: self.spins.clone(),
            sweeps: self.sweeps,
            rng: RngPosition {
                id: self.stream,
                word_pos: self.rng.get_word_pos(),
            },
        }
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn sweeps(&self) -> u64 {
        self.sweeps
    }

    pub fn stream(&self) -> StreamId {
        self.stream
    }

    /// Largest |cached - recomputed| energy seen at a drift check.
    pub fn max_drift(&self) -> f64 {
        self.max_drift
    }

    pub fn acceptance(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// Exchanges configurations (not streams) with another chain.
    pub(crate) fn swap_configuration(&mut self, other: &mut ChainState) {
        std::mem::swap(&mut self.spins, &mut other.spins);
        std::mem::swap(&mut self.energy, &mut other.energy);
    }
}

/// One sweep of `N` sequential single-site Metropolis proposals.
pub fn metropolis_sweep(state: &mut ChainState, table: &CouplingTable, beta: f64) {
    for site in 0..state.spins.len() {
        let delta = table.flip_delta(&state.spins, site);
        state.proposed += 1;
        let accept = delta <= 0.0 || unit(&mut state.rng) < (-beta * delta).exp();
        if accept {
            state.spins[site] = -state.spins[site];
            state.energy += delta;
            state.accepted += 1;
        }
    }
    state.sweeps += 1;
    if state.sweeps.is_multiple_of(DRIFT_CHECK_EVERY) {
        let exact = table.energy(&state.spins);
        state.max_drift = state.max_drift.max((exact - state.energy).abs());
        state.energy = exact;
    }
}
