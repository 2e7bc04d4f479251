use rand_chacha::ChaCha8Rng;

use super::chain::{metropolis_sweep, ChainState};
use crate::error::{Error, Result};
use crate::model::CouplingTable;
use crate::rng::{unit, StreamId};

/// Geometric ladder between `low * target` and `high * target` with the rung
/// nearest to `target` (in log space) replaced by `target` itself.
pub fn default_ladder(target: f64, rungs: usize, low: f64, high: f64) -> Vec<f64> {
    if target <= 0.0 || rungs <= 1 {
        return vec![target];
    }
    let (a, b) = (low * target, high * target);
    let mut betas: Vec<f64> = (0..rungs)
        .map(|k| a * (b / a).powf(k as f64 / (rungs - 1) as f64))
        .collect();
    let nearest = betas
        .iter()
        .enumerate()
        .min_by(|x, y| {
            let dx = (x.1.ln() - target.ln()).abs();
            let dy = (y.1.ln() - target.ln()).abs();
            dx.total_cmp(&dy)
        })
        .map(|(k, _)| k)
        .unwrap_or(0);
    betas[nearest] = target;
    betas
}

/// Replica-exchange ladder: one chain per inverse temperature.
#[derive(Clone, Debug)]
pub struct TemperingLadder {
    betas: Vec<f64>,
    chains: Vec<ChainState>,
    swaps_enabled: bool,
    swap_attempts: Vec<u64>,
    swap_accepts: Vec<u64>,
    swap_rng: ChaCha8Rng,
    round: u64,
}

impl TemperingLadder {
    /// `chain_stream(k)` names the stream of rung `k`.
    pub fn new(
        betas: Vec<f64>,
        table: &CouplingTable,
        chain_stream: impl Fn(usize) -> StreamId,
        swap_stream: StreamId,
        swaps_enabled: bool,
    ) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidParameters("empty tempering ladder".into()));
        }
        if betas.windows(2).any(|w| w[0] >= w[1]) || betas.iter().any(|b| b.is_nan() || *b < 0.0) {
            return Err(Error::InvalidParameters(format!(
                "ladder must be strictly increasing and non-negative: {betas:?}"
            )));
        }
        let chains = (0..betas.len())
            .map(|k| ChainState::random(table, chain_stream(k)))
            .collect();
        let pairs = betas.len() - 1;
        Ok(Self {
            betas,
            chains,
            swaps_enabled,
            swap_attempts: vec![0; pairs],
            swap_accepts: vec![0; pairs],
            swap_rng: swap_stream.rng(),
            round: 0,
        })
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn chain(&self, rung: usize) -> &ChainState {
        &self.chains[rung]
    }

    pub fn chains(&self) -> &[ChainState] {
        &self.chains
    }

    pub fn rung_of(&self, beta: f64) -> Option<usize> {
        self.betas.iter().position(|&b| b == beta)
    }

    /// Acceptance rate of each adjacent pair, in `[0, 1]`.
    pub fn swap_acceptance(&self) -> Vec<f64> {
        self.swap_attempts
            .iter()
            .zip(&self.swap_accepts)
            .map(|(&n, &a)| if n == 0 { 0.0 } else { a as f64 / n as f64 })
            .collect()
    }

    /// A Metropolis sweep on every rung followed by one exchange pass over
    /// alternating even/odd adjacent pairs.
    pub fn sweep(&mut self, table: &CouplingTable) {
        for (chain, &beta) in self.chains.iter_mut().zip(&self.betas) {
            metropolis_sweep(chain, table, beta);
        }
        if self.swaps_enabled && self.betas.len() > 1 {
            let start = (self.round % 2) as usize;
            let mut k = start;
            while k + 1 < self.betas.len() {
                self.try_swap(k);
                k += 2;
            }
        }
        self.round += 1;
    }

    fn try_swap(&mut self, k: usize) {
        let d_beta = self.betas[k + 1] - self.betas[k];
        let d_energy = self.chains[k + 1].energy() - self.chains[k].energy();
        let log_ratio = d_beta * d_energy;
        self.swap_attempts[k] += 1;
        if log_ratio >= 0.0 || unit(&mut self.swap_rng) < log_ratio.exp() {
            let (lo, hi) = self.chains.split_at_mut(k + 1);
            lo[k].swap_configuration(&mut hi[0]);
            self.swap_accepts[k] += 1;
        }
    }
}
