//! Named random streams.
//!
//! Every source of randomness in a run is derived from one top-level seed.
//! Independent concerns (proposals, mini-batch draws, accept tests, ...) get
//! their own ChaCha stream so that two samplers run with the same seed see
//! identical proposal and batch sequences even if one of them consumes more
//! accept-test draws than the other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    Proposal = 1,
    Batches = 2,
    Accept = 3,
    Init = 4,
    Noise = 5,
    Tuning = 6,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Deterministically derive a child seed from a parent seed and a label.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Exact position of a ChaCha stream, enough to resume it bit-for-bit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngPosition {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngPosition {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let seed: String = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        RngPosition {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> crate::Result<ChaCha8Rng> {
        let bad = |what: &str| crate::Error::Format(format!("bad rng position: {what}"));
        if self.seed.len() != 64 {
            return Err(bad("seed length"));
        }
        let mut seed = [0u8; 32];
        for (i, byte) in seed.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad("seed hex"))?;
        }
        let word_pos: u128 = self.word_pos.parse().map_err(|_| bad("word position"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(word_pos);
        Ok(rng)
    }
}
