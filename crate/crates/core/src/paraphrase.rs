//! Paraphrase mining: style-free round trips through a pivot language at a
//! pool of sampling temperatures, followed by a similarity-band filter.

use std::collections::HashSet;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::decode::{decode_batch, DecodeStrategy};
use crate::error::{Error, Result};
use crate::model::RewriteModel;
use crate::scalar::Scalar;
use crate::style::StyleVector;
use crate::vocab::TokenSequence;

pub const DEFAULT_TEMPERATURES: [f64; 4] = [0.4, 0.6, 0.8, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    pub temperatures: Vec<f64>,
    pub seed: u64,
    pub batch_size: usize,
    /// Language id of the sources (the target of the return trip).
    pub source_lang: u32,
    pub pivot_lang: u32,
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperatures.is_empty() || self.temperatures.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::Config("temperatures must be a non-empty list of positive values".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParaphraseCandidate {
    pub source_index: usize,
    pub source: TokenSequence,
    pub paraphrase: TokenSequence,
    /// Forward and backward sampling temperatures.
    pub temperature_pair: (f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterBand {
    pub low: f64,
    pub high: f64,
}

impl Default for FilterBand {
    fn default() -> Self {
        Self { low: 0.7, high: 0.98 }
    }
}

impl FilterBand {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(0.0 <= low && low < high && high <= 1.0) {
            return Err(Error::Config(format!("band must satisfy 0 <= low < high <= 1, got [{low}, {high}]")));
        }
        Ok(Self { low, high })
    }

    /// Closed on both ends.
    pub fn contains(&self, sim: f64) -> bool {
        self.low <= sim && sim <= self.high
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub total: usize,
    pub kept: usize,
    /// Below the band: treated as translation errors.
    pub below: usize,
    /// Above the band: treated as copies.
    pub above: usize,
    /// The scorer failed or returned a value outside [0, 1].
    pub errors: usize,
}

/// Everything the miner reports, written next to the mined pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiningStats {
    pub sources: usize,
    pub decode_failures: usize,
    pub filter: FilterStats,
    pub duplicates: usize,
    pub persisted: usize,
}

/// Round-trip generation with a caller-supplied decoder. `decode` receives
/// language-prefixed sources, the style vector for the pass, and the
/// sampling strategy. Candidates come back sorted by source index, then by
/// position in the temperature pool. Sources whose pivot or return decode
/// is empty, too long, or fails are dropped and counted.
pub fn generate_paraphrases_with<T, F>(
    sources: &[Vec<u32>],
    cfg: &MiningConfig,
    max_seq_len: usize,
    dim: usize,
    mut decode: F,
) -> Result<(Vec<ParaphraseCandidate>, usize)>
where
    T: Scalar,
    F: FnMut(&[&[u32]], &StyleVector<T>, &DecodeStrategy) -> Result<Vec<TokenSequence>>,
{
    cfg.validate()?;
    let zero = StyleVector::zeros(dim);
    let mut out: Vec<(usize, usize, ParaphraseCandidate)> = Vec::new();
    let mut failures = 0;
    for (ti, &t) in cfg.temperatures.iter().enumerate() {
        for (bi, chunk) in sources.chunks(cfg.batch_size).enumerate() {
            let base = bi * cfg.batch_size;
            let seed = cfg.seed ^ ((ti as u64) << 48) ^ ((bi as u64) << 1);
            let fwd_in: Vec<Vec<u32>> = chunk.iter().map(|s| prepend(cfg.pivot_lang, s)).collect();
            let fwd_refs: Vec<&[u32]> = fwd_in.iter().map(Vec::as_slice).collect();
            let pivots = match decode(&fwd_refs, &zero, &DecodeStrategy::sample(t, seed)) {
                Ok(p) if p.len() == chunk.len() => p,
                _ => {
                    failures += chunk.len();
                    continue;
                }
            };
            let mut back_idx = Vec::new();
            let mut back_in = Vec::new();
            for (i, p) in pivots.iter().enumerate() {
                if p.is_empty() || p.len() + 1 > max_seq_len {
                    failures += 1;
                } else {
                    back_idx.push(i);
                    back_in.push(prepend(cfg.source_lang, p.ids()));
                }
            }
            if back_in.is_empty() {
                continue;
            }
            let back_refs: Vec<&[u32]> = back_in.iter().map(Vec::as_slice).collect();
            let returned = match decode(&back_refs, &zero, &DecodeStrategy::sample(t, seed.wrapping_add(1))) {
                Ok(r) if r.len() == back_in.len() => r,
                _ => {
                    failures += back_in.len();
                    continue;
                }
            };
            for (&i, para) in back_idx.iter().zip(returned) {
                if para.is_empty() {
                    failures += 1;
                    continue;
                }
                let cand = ParaphraseCandidate {
                    source_index: base + i,
                    source: TokenSequence::new(chunk[i].clone()),
                    paraphrase: para,
                    temperature_pair: (t, t),
                };
                out.push((base + i, ti, cand));
            }
        }
    }
    out.sort_by_key(|(s, t, _)| (*s, *t));
    Ok((out.into_iter().map(|(_, _, c)| c).collect(), failures))
}

fn prepend(lang: u32, s: &[u32]) -> Vec<u32> {
    let mut v = Vec::with_capacity(s.len() + 1);
    v.push(lang);
    v.extend_from_slice(s);
    v
}

/// [`generate_paraphrases_with`] driven by the model's own batched decoder,
/// with the zero vector as style in both passes.
pub fn generate_paraphrases<T: Scalar>(model: &RewriteModel<T>, sources: &[Vec<u32>], cfg: &MiningConfig) -> Result<(Vec<ParaphraseCandidate>, usize)> {
    let budget = model.config().max_seq_len - 1;
    let usable: Vec<Vec<u32>> = sources.iter().map(|s| s[..s.len().min(budget)].to_vec()).collect();
    generate_paraphrases_with(&usable, cfg, model.config().max_seq_len, model.d_model(), |srcs, zero, strategy| {
        let styles = vec![Some(zero); srcs.len()];
        decode_batch(model, srcs, &styles, strategy)
    })
}

/// Scores every candidate and keeps those inside the band, in input order.
pub fn filter_pairs<C>(candidates: Vec<C>, mut sim: impl FnMut(&C) -> Result<f64>, band: FilterBand) -> (Vec<(C, f64)>, FilterStats) {
    let mut stats = FilterStats { total: candidates.len(), ..FilterStats::default() };
    let mut kept = Vec::new();
    for c in candidates {
        match sim(&c) {
            Ok(s) if (0.0..=1.0).contains(&s) => {
                if s < band.low {
                    stats.below += 1;
                } else if s > band.high {
                    stats.above += 1;
                } else {
                    stats.kept += 1;
                    kept.push((c, s));
                }
            }
            _ => stats.errors += 1,
        }
    }
    (kept, stats)
}

/// Drops later occurrences of an already-seen key, preserving order.
pub fn dedupe<C, K: Hash + Eq>(items: Vec<C>, key: impl Fn(&C) -> K) -> (Vec<C>, usize) {
    let mut seen = HashSet::new();
    let before = items.len();
    let out: Vec<C> = items.into_iter().filter(|c| seen.insert(key(c))).collect();
    let removed = before - out.len();
    (out, removed)
}
