//! Mini-batch sampling over multilingual training data.
//!
//! `Concat` treats all members as one pool and walks it epoch by epoch.
//! `Balanced` first draws the batch's origin (low-resource vs. the rest)
//! with fixed odds, then takes the next batch from that origin's own pool.
//! Within a pool, sentences are shuffled, sorted by source length inside
//! windows, cut into batches, and the batch order is shuffled again.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch::PaddedBatch;
use crate::corpus::{LangId, Origin};

pub const DEFAULT_BUCKET_WINDOW: usize = 1024;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SamplerError {
    #[error("training data is empty")]
    EmptyDataset,
    #[error("balanced sampling needs both low-resource and other data; {0} side is empty")]
    MissingOrigin(&'static str),
    #[error("invalid sampling strategy `{0}`; expected `concat` or `balanced:R-S`")]
    InvalidStrategy(String),
    #[error("batch size and bucket window must be positive")]
    ZeroSize,
    #[error("sampler state does not match this dataset")]
    StateMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum SamplingStrategy {
    Concat,
    /// Odds `lrl : other` for the origin of each batch.
    Balanced { lrl: u32, other: u32 },
}

impl fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplingStrategy::Concat => f.write_str("concat"),
            SamplingStrategy::Balanced { lrl, other } => write!(f, "balanced:{lrl}-{other}"),
        }
    }
}

impl FromStr for SamplingStrategy {
    type Err = SamplerError;
    fn from_str(s: &str) -> Result<Self, SamplerError> {
        let bad = || SamplerError::InvalidStrategy(s.to_string());
        if s == "concat" {
            return Ok(Self::Concat);
        }
        let ratio = s.strip_prefix("balanced:").ok_or_else(bad)?;
        let (r, o) = ratio.split_once('-').ok_or_else(bad)?;
        let lrl: u32 = r.parse().map_err(|_| bad())?;
        let other: u32 = o.parse().map_err(|_| bad())?;
        if lrl == 0 || other == 0 {
            return Err(bad());
        }
        Ok(Self::Balanced { lrl, other })
    }
}

impl From<SamplingStrategy> for String {
    fn from(s: SamplingStrategy) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for SamplingStrategy {
    type Error = SamplerError;
    fn try_from(s: String) -> Result<Self, SamplerError> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedMember {
    pub lang: LangId,
    pub origin: Origin,
    pub pairs: Vec<EncodedPair>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EncodedDataset {
    pub members: Vec<EncodedMember>,
}

impl EncodedDataset {
    pub fn num_pairs(&self) -> usize {
        self.members.iter().map(|m| m.pairs.len()).sum()
    }

    fn fingerprint(&self) -> Vec<usize> {
        self.members.iter().map(|m| m.pairs.len()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchOrigin {
    Lrl,
    Hrl,
    Mixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    pub batch: PaddedBatch,
    /// `(member, pair)` index of every row.
    pub refs: Vec<(usize, usize)>,
    pub origin: BatchOrigin,
    /// Epoch of the pool the batch came from, starting at 0.
    pub epoch: u64,
    /// Set on the last batch of that pool's epoch.
    pub epoch_end: bool,
}

type Ref = (u32, u32);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Pool {
    members: Vec<usize>,
    queue: VecDeque<Vec<Ref>>,
    refills: u64,
}

/// Serializable sampler position; resuming from it continues the exact
/// batch sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerState {
    strategy: SamplingStrategy,
    batch_size: usize,
    window: usize,
    rng: ChaCha8Rng,
    pools: Vec<Pool>,
    fingerprint: Vec<usize>,
    drawn: u64,
}

impl SamplerState {
    pub fn batches_drawn(&self) -> u64 {
        self.drawn
    }

    pub fn strategy(&self) -> SamplingStrategy {
        self.strategy
    }
}

pub struct Sampler<'a> {
    data: &'a EncodedDataset,
    state: SamplerState,
}

impl<'a> Sampler<'a> {
    pub fn new(
        data: &'a EncodedDataset,
        strategy: SamplingStrategy,
        batch_size: usize,
        window: usize,
        seed: u64,
    ) -> Result<Self, SamplerError> {
        if batch_size == 0 || window == 0 {
            return Err(SamplerError::ZeroSize);
        }
        let nonempty = |m: &&EncodedMember| !m.pairs.is_empty();
        let (lrl, rest): (Vec<usize>, Vec<usize>) = data
            .members
            .iter()
            .enumerate()
            .filter(|(_, m)| nonempty(m))
            .map(|(i, _)| i)
            .partition(|&i| data.members[i].origin == Origin::Lrl);
        let pools = match strategy {
            SamplingStrategy::Concat => {
                let mut all: Vec<usize> = lrl.into_iter().chain(rest).collect();
                all.sort_unstable();
                if all.is_empty() {
                    return Err(SamplerError::EmptyDataset);
                }
                vec![all]
            }
            SamplingStrategy::Balanced { .. } => {
                if lrl.is_empty() {
                    return Err(SamplerError::MissingOrigin("low-resource"));
                }
                if rest.is_empty() {
                    return Err(SamplerError::MissingOrigin("high-resource"));
                }
                vec![lrl, rest]
            }
        };
        let state = SamplerState {
            strategy,
            batch_size,
            window,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pools: pools.into_iter().map(|members| Pool { members, queue: VecDeque::new(), refills: 0 }).collect(),
            fingerprint: data.fingerprint(),
            drawn: 0,
        };
        Ok(Self { data, state })
    }

    pub fn resume(data: &'a EncodedDataset, state: SamplerState) -> Result<Self, SamplerError> {
        if state.fingerprint != data.fingerprint() {
            return Err(SamplerError::StateMismatch);
        }
        Ok(Self { data, state })
    }

    pub fn state(&self) -> &SamplerState {
        &self.state
    }

    /// Batches in one pass over the data (for progress logging).
    pub fn batches_per_epoch(&self) -> usize {
        let b = self.state.batch_size;
        match self.state.strategy {
            SamplingStrategy::Concat => {
                let n: usize = self.state.pools[0].members.iter().map(|&m| self.data.members[m].pairs.len()).sum();
                let full = n / self.state.window;
                let tail = n % self.state.window;
                full * self.state.window.div_ceil(b) + tail.div_ceil(b)
            }
            SamplingStrategy::Balanced { .. } => self.data.num_pairs().div_ceil(b),
        }
    }

    fn refill(&mut self, pool: usize) {
        let data = self.data;
        let st = &mut self.state;
        let mut refs: Vec<Ref> = st.pools[pool]
            .members
            .iter()
            .flat_map(|&m| (0..data.members[m].pairs.len()).map(move |i| (m as u32, i as u32)))
            .collect();
        refs.shuffle(&mut st.rng);
        let mut batches = Vec::new();
        for window in refs.chunks_mut(st.window) {
            window.sort_by_key(|&(m, i)| data.members[m as usize].pairs[i as usize].src.len());
            batches.extend(window.chunks(st.batch_size).map(<[Ref]>::to_vec));
        }
        batches.shuffle(&mut st.rng);
        let p = &mut st.pools[pool];
        p.queue = batches.into();
        p.refills += 1;
    }

    pub fn next_batch(&mut self) -> MiniBatch {
        let pool = match self.state.strategy {
            SamplingStrategy::Concat => 0,
            SamplingStrategy::Balanced { lrl, other } => usize::from(self.state.rng.random_range(0..lrl + other) >= lrl),
        };
        if self.state.pools[pool].queue.is_empty() {
            self.refill(pool);
        }
        let p = &mut self.state.pools[pool];
        let refs = p.queue.pop_front().expect("refilled pool is non-empty");
        let epoch_end = p.queue.is_empty();
        let epoch = p.refills - 1;
        self.state.drawn += 1;

        let pairs: Vec<(&[u32], &[u32])> = refs
            .iter()
            .map(|&(m, i)| {
                let p = &self.data.members[m as usize].pairs[i as usize];
                (p.src.as_slice(), p.tgt.as_slice())
            })
            .collect();
        let origins = refs.iter().map(|&(m, _)| self.data.members[m as usize].origin);
        let origin = if origins.clone().all(|o| o == Origin::Lrl) {
            BatchOrigin::Lrl
        } else if origins.clone().all(|o| o == Origin::Hrl) {
            BatchOrigin::Hrl
        } else {
            BatchOrigin::Mixed
        };
        MiniBatch {
            batch: PaddedBatch::new(&pairs),
            refs: refs.iter().map(|&(m, i)| (m as usize, i as usize)).collect(),
            origin,
            epoch,
            epoch_end,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_strings_roundtrip() {
        for s in ["concat", "balanced:1-4", "balanced:1-1"] {
            assert_eq!(s.parse::<SamplingStrategy>().unwrap().to_string(), s);
        }
        for bad in ["", "balanced", "balanced:1", "balanced:0-3", "balanced:a-b", "mixed"] {
            assert!(bad.parse::<SamplingStrategy>().is_err(), "{bad}");
        }
    }
}
