//! Reproducible random streams.
//!
//! Every stream is a ChaCha8 generator whose key is expanded from the
//! experiment's master seed and whose 64-bit stream word encodes the
//! replicate index and the purpose tag. Two streams with the same
//! `(master_seed, StreamId)` produce the same sequence on any thread, and
//! distinct ids never share a ChaCha stream.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// What a stream is used for inside one replicate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Rewards,
    Thompson,
    MonteCarlo,
}

impl Purpose {
    fn code(self) -> u64 {
        match self {
            Purpose::Rewards => 0,
            Purpose::Thompson => 1,
            Purpose::MonteCarlo => 2,
        }
    }
}

const PURPOSE_SLOTS: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamId {
    pub replicate: u64,
    pub purpose: Purpose,
}

impl StreamId {
    pub fn new(replicate: u64, purpose: Purpose) -> Self {
        StreamId { replicate, purpose }
    }

    fn stream_word(&self) -> u64 {
        self.replicate
            .wrapping_mul(PURPOSE_SLOTS)
            .wrapping_add(self.purpose.code())
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn expand_key(master_seed: u64) -> [u8; 32] {
    let mut state = master_seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

/// A single-owner random stream keyed by `(master_seed, StreamId)`.
#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    id: StreamId,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, id: StreamId) -> Self {
        let mut inner = ChaCha8Rng::from_seed(expand_key(master_seed));
        inner.set_stream(id.stream_word());
        RngStream {
            master_seed,
            id,
            inner,
        }
    }

    pub fn for_replicate(master_seed: u64, replicate: u64, purpose: Purpose) -> Self {
        Self::new(master_seed, StreamId::new(replicate, purpose))
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn id(&self) -> StreamId {
        self.id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
