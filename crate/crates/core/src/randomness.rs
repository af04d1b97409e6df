//! Keyed, counter-based random streams.
//!
//! Every random quantity in a run is drawn from a [`RandomStream`] derived
//! from a [`StreamKey`]. The key is hashed (SHA-256 over a fixed little-endian
//! serialization) into a ChaCha8 seed, and the stream position is a plain draw
//! counter. Any party that can name a key can therefore regenerate the exact
//! draws another party used, in any order, and can jump straight to draw `i`
//! without producing the draws before it.
//!
//! Shared randomness is emulated by key reachability: keys with
//! [`Party::Global`] are used by every simulated party, keys with
//! [`Party::Client`] only by that client and the federator.

use std::convert::Infallible;

use rand::{SeedableRng, TryRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const KEY_DOMAIN: &[u8] = b"mrcfl/stream-key/v1";

/// Who can reproduce a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Party {
    Federator,
    Client(u32),
    Global,
}

/// What a stream is used for. Distinct roles never share draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    UplinkCandidates,
    DownlinkCandidates,
    /// Encoder-side index selection on the uplink.
    IndexDraw,
    /// Encoder-side index selection on the downlink (federator as encoder).
    DownlinkIndexDraw,
    DataShuffle,
    MaskSample,
    TheoryTrial,
    ModelInit,
}

impl Party {
    fn tag(self) -> (u8, u64) {
        match self {
            Party::Federator => (0, 0),
            Party::Client(i) => (1, u64::from(i)),
            Party::Global => (2, 0),
        }
    }
}

impl Role {
    fn tag(self) -> u8 {
        match self {
            Role::UplinkCandidates => 0,
            Role::DownlinkCandidates => 1,
            Role::IndexDraw => 2,
            Role::DownlinkIndexDraw => 3,
            Role::DataShuffle => 4,
            Role::MaskSample => 5,
            Role::TheoryTrial => 6,
            Role::ModelInit => 7,
        }
    }
}

/// Hierarchical address of a random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub master_seed: u64,
    pub round: u64,
    pub party: Party,
    pub role: Role,
    pub block: u64,
    pub sample: u64,
}

impl StreamKey {
    pub fn new(master_seed: u64, party: Party, role: Role) -> Self {
        Self {
            master_seed,
            round: 0,
            party,
            role,
            block: 0,
            sample: 0,
        }
    }

    pub fn with_round(mut self, round: u64) -> Self {
        self.round = round;
        self
    }

    pub fn with_party(mut self, party: Party) -> Self {
        self.party = party;
        self
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn with_block(mut self, block: u64) -> Self {
        self.block = block;
        self
    }

    pub fn with_sample(mut self, sample: u64) -> Self {
        self.sample = sample;
        self
    }

    fn seed(&self) -> [u8; 32] {
        let (party_tag, client) = self.party.tag();
        let mut hasher = Sha256::new();
        hasher.update(KEY_DOMAIN);
        hasher.update(self.master_seed.to_le_bytes());
        hasher.update(self.round.to_le_bytes());
        hasher.update([party_tag]);
        hasher.update(client.to_le_bytes());
        hasher.update([self.role.tag()]);
        hasher.update(self.block.to_le_bytes());
        hasher.update(self.sample.to_le_bytes());
        hasher.finalize().into()
    }
}

/// A replayable stream of uniform draws. Draw `i` depends only on the key
/// and `i`.
#[derive(Clone, Debug)]
pub struct RandomStream {
    rng: ChaCha8Rng,
}

/// Derives the stream addressed by `key`.
pub fn derive_stream(key: &StreamKey) -> RandomStream {
    RandomStream {
        rng: ChaCha8Rng::from_seed(key.seed()),
    }
}

impl RandomStream {
    /// Next raw 64-bit draw.
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let Ok(v) = self.rng.try_next_u64();
        v
    }

    /// Next uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Positions the stream so that the next draw is draw number `draw`.
    pub fn seek(&mut self, draw: u64) {
        // one draw is two 32-bit ChaCha words
        self.rng.set_word_pos(u128::from(draw) * 2);
    }

    /// Index of the next draw.
    pub fn position(&self) -> u64 {
        (self.rng.get_word_pos() / 2) as u64
    }
}

impl TryRng for RandomStream {
    type Error = Infallible;

    fn try_next_u32(&mut self) -> std::result::Result<u32, Infallible> {
        // keep every draw a full 64-bit word so positions stay aligned
        Ok((self.next_u64() >> 32) as u32)
    }

    fn try_next_u64(&mut self) -> std::result::Result<u64, Infallible> {
        Ok(self.next_u64())
    }

    fn try_fill_bytes(&mut self, dst: &mut [u8]) -> std::result::Result<(), Infallible> {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
        Ok(())
    }
}

/// Binary sample vector, one byte per entry holding 0 or 1.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct BinaryVector {
    bits: Vec<u8>,
}

impl BinaryVector {
    pub fn zeros(len: usize) -> Self {
        Self { bits: vec![0; len] }
    }

    /// Builds from raw bytes; any non-zero byte becomes 1.
    pub fn from_bits(bits: impl IntoIterator<Item = u8>) -> Self {
        Self {
            bits: bits.into_iter().map(|b| u8::from(b != 0)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|&b| usize::from(b)).sum()
    }

    pub fn extend_from(&mut self, other: &BinaryVector) {
        self.bits.extend_from_slice(&other.bits);
    }

    pub fn get(&self, k: usize) -> u8 {
        self.bits[k]
    }
}

/// Draws one independent Bernoulli per entry, consuming exactly one uniform
/// per entry in entry order. Entry `k` is 1 iff `u_k < params[k]`.
pub fn draw_bernoulli_vector(stream: &mut RandomStream, params: &[f64]) -> BinaryVector {
    BinaryVector {
        bits: params
            .iter()
            .map(|&p| u8::from(stream.next_uniform() < p))
            .collect(),
    }
}

/// Inverse-CDF categorical draw over unnormalized non-negative weights.
///
/// Returns the first index whose cumulative weight exceeds `u * total`, so
/// ties in the cumulative sums go to the lower index.
pub fn draw_categorical(stream: &mut RandomStream, weights: &[f64]) -> Result<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateCategorical);
    }
    let target = stream.next_uniform() * total;
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (j, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            cumulative += w;
            last_positive = j;
            if cumulative > target {
                return Ok(j);
            }
        }
    }
    // rounding left the cumulative sum a hair below `target`
    Ok(last_positive)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(seed: u64) -> StreamKey {
        StreamKey::new(seed, Party::Global, Role::UplinkCandidates)
    }

    #[test]
    fn same_key_same_draws() {
        let mut a = derive_stream(&key(7));
        let mut b = derive_stream(&key(7));
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn rounds_separate_streams() {
        let mut a = derive_stream(&key(7).with_round(1));
        let mut b = derive_stream(&key(7).with_round(2));
        let differ = (0..1000).any(|_| a.next_u64() != b.next_u64());
        assert!(differ);
    }

    #[test]
    fn client_key_shared_by_both_sides() {
        let k = StreamKey::new(3, Party::Client(3), Role::UplinkCandidates).with_round(5);
        let client_side: Vec<u64> = {
            let mut s = derive_stream(&k);
            (0..100).map(|_| s.next_u64()).collect()
        };
        let federator_side: Vec<u64> = {
            let mut s = derive_stream(&k);
            (0..100).map(|_| s.next_u64()).collect()
        };
        assert_eq!(client_side, federator_side);
    }

    #[test]
    fn seek_matches_sequential() {
        let mut seq = derive_stream(&key(11));
        let draws: Vec<u64> = (0..300).map(|_| seq.next_u64()).collect();
        for start in [0u64, 1, 7, 31, 32, 33, 255, 299] {
            let mut s = derive_stream(&key(11));
            s.seek(start);
            assert_eq!(s.position(), start);
            assert_eq!(s.next_u64(), draws[start as usize]);
        }
    }

    #[test]
    fn degenerate_bernoulli_params() {
        let mut s = derive_stream(&key(1));
        let ones = draw_bernoulli_vector(&mut s, &[1.0; 64]);
        assert_eq!(ones.count_ones(), 64);
        let zeros = draw_bernoulli_vector(&mut s, &[0.0; 64]);
        assert_eq!(zeros.count_ones(), 0);
    }

    #[test]
    fn bernoulli_half_mean() {
        let mut s = derive_stream(&key(2));
        let n = 100_000;
        let v = draw_bernoulli_vector(&mut s, &vec![0.5; n]);
        let mean = v.count_ones() as f64 / n as f64;
        assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn bernoulli_consumes_one_draw_per_entry() {
        let mut s = derive_stream(&key(3));
        draw_bernoulli_vector(&mut s, &[0.3; 17]);
        assert_eq!(s.position(), 17);
    }

    #[test]
    fn categorical_edge_cases() {
        let mut s = derive_stream(&key(4));
        for _ in 0..100 {
            assert_eq!(draw_categorical(&mut s, &[0.0, 1.0, 0.0]).unwrap(), 1);
            assert_eq!(draw_categorical(&mut s, &[1.0]).unwrap(), 0);
        }
        assert!(matches!(
            draw_categorical(&mut s, &[0.0, 0.0]),
            Err(Error::DegenerateCategorical)
        ));
    }

    #[test]
    fn categorical_fair_coin() {
        let mut s = derive_stream(&key(5));
        let n = 100_000;
        let zeros = (0..n)
            .filter(|_| draw_categorical(&mut s, &[0.5, 0.5]).unwrap() == 0)
            .count();
        let freq = zeros as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.005, "freq {freq}");
    }
}
