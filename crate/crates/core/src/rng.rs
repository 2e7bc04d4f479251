//! Keyed, seekable random streams.
//!
//! Every random number in the laboratory comes from a ChaCha8 stream
//! addressed by `(master seed, domain, stream id)` and a word position, so any
//! single draw can be regenerated without producing its predecessors.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Separates the key spaces of unrelated consumers of the same master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Disorder,
    Chain,
    Swap,
    Test,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Disorder => 0x6469_736f_7264_6572,
            Domain::Chain => 0x6368_6169_6e73_7461,
            Domain::Swap => 0x7377_6170_7377_6170,
            Domain::Test => 0x7465_7374_7465_7374,
        }
    }
}

/// Words consumed by one Gaussian draw (two u64 outputs).
pub const WORDS_PER_NORMAL: u128 = 4;

/// Bits reserved for the range index inside a disorder word position.
const RANGE_BITS: u32 = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamId {
    pub seed: u64,
    pub domain: Domain,
    pub stream: u64,
}

impl StreamId {
    pub fn new(seed: u64, domain: Domain, stream: u64) -> Self {
        Self { seed, domain, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ self.domain.tag());
        rng.set_stream(self.stream);
        rng
    }

    pub fn rng_at(&self, word_pos: u128) -> ChaCha8Rng {
        let mut rng = self.rng();
        rng.set_word_pos(word_pos);
        rng
    }
}

/// A stream plus the position reached in it; enough to resume a chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngPosition {
    pub id: StreamId,
    pub word_pos: u128,
}

impl RngPosition {
    pub fn restore(&self) -> ChaCha8Rng {
        self.id.rng_at(self.word_pos)
    }
}

/// Word position of the first draw of coupling `range_index` of species `p`
/// inside a realization's disorder stream.
pub fn coupling_word_pos(p: usize, range_index: usize) -> u128 {
    assert!(
        (range_index as u128) < (1u128 << RANGE_BITS),
        "range index too large"
    );
    assert!(p < (1 << 20), "p too large");
    (((p as u128) << RANGE_BITS) | range_index as u128) * WORDS_PER_NORMAL
}

/// Uniform in (0, 1].
fn open_unit(x: u64) -> f64 {
    ((x >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in [0, 1).
pub fn unit(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Box-Muller standard normal consuming exactly two u64 outputs.
pub fn standard_normal(rng: &mut impl RngCore) -> f64 {
    let u1 = open_unit(rng.next_u64());
    let u2 = unit(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
