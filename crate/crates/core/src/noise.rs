//! Token-level corruption for the denoising objective.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub min_rate: f64,
    pub max_rate: f64,
    /// Share of selected positions that are dropped.
    pub drop_fraction: f64,
    /// Share of selected positions replaced by a random token.
    pub replace_fraction: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { min_rate: 0.2, max_rate: 0.6, drop_fraction: 0.5, replace_fraction: 0.5 }
    }
}

impl NoiseConfig {
    pub fn none() -> Self {
        Self { min_rate: 0.0, max_rate: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.min_rate && self.min_rate <= self.max_rate && self.max_rate <= 1.0) {
            return Err(Error::Config(format!(
                "noise rates must satisfy 0 <= min <= max <= 1, got [{}, {}]",
                self.min_rate, self.max_rate
            )));
        }
        if self.drop_fraction < 0.0 || self.replace_fraction < 0.0 || (self.drop_fraction + self.replace_fraction - 1.0).abs() > 1e-9 {
            return Err(Error::Config("noise drop and replace fractions must be non-negative and sum to 1".into()));
        }
        Ok(())
    }
}

/// Result of one corruption, with the number of positions touched.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Noised {
    pub tokens: Vec<u32>,
    pub dropped: usize,
    pub replaced: usize,
}

impl Noised {
    pub fn affected(&self) -> usize {
        self.dropped + self.replaced
    }
}

/// Drops or replaces `ceil(r * len)` distinct positions of `x`, with
/// `r ~ U[min_rate, max_rate]`. Replacements are uniform over ids in
/// `0..vocab_size` that are not listed in `reserved`. At least one token
/// always survives.
pub fn token_noise<R: Rng + ?Sized>(x: &[u32], cfg: &NoiseConfig, vocab_size: usize, reserved: &[u32], rng: &mut R) -> Noised {
    assert!(!x.is_empty(), "token_noise needs a non-empty sequence");
    let rate = if cfg.max_rate > cfg.min_rate { rng.random_range(cfg.min_rate..=cfg.max_rate) } else { cfg.min_rate };
    let k = ((rate * x.len() as f64).ceil() as usize).min(x.len());
    let mut picked = index::sample(rng, x.len(), k).into_vec();
    picked.sort_unstable();
    let pool: Vec<u32> = (0..vocab_size as u32).filter(|t| !reserved.contains(t)).collect();
    let mut action = vec![0u8; x.len()]; // 0 keep, 1 drop, 2 replace
    for &p in &picked {
        let drop = rng.random::<f64>() < cfg.drop_fraction;
        action[p] = if drop || pool.is_empty() { 1 } else { 2 };
    }
    if action.iter().all(|&a| a == 1) {
        // Keep the last dropped position alive as a replacement instead.
        let last = *picked.last().unwrap();
        action[last] = if pool.is_empty() { 0 } else { 2 };
    }
    let mut out = Noised { tokens: Vec::with_capacity(x.len()), dropped: 0, replaced: 0 };
    for (i, &t) in x.iter().enumerate() {
        match action[i] {
            1 => out.dropped += 1,
            2 => {
                out.tokens.push(pool[rng.random_range(0..pool.len())]);
                out.replaced += 1;
            }
            _ => out.tokens.push(t),
        }
    }
    out
}

/// [`token_noise`] driven by a fresh seeded generator.
pub fn token_noise_seeded(x: &[u32], cfg: &NoiseConfig, vocab_size: usize, reserved: &[u32], seed: u64) -> Noised {
    token_noise(x, cfg, vocab_size, reserved, &mut ChaCha8Rng::seed_from_u64(seed))
}
