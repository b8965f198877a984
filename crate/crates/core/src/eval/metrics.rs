//! Per-pair metrics and corpus aggregates.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SIM_THRESHOLD: f64 = 0.75;

/// 1 iff the output scores strictly higher than the input.
pub fn r_acc(score_in: f64, score_out: f64) -> u8 {
    u8::from(score_out > score_in)
}

/// 1 iff the output scores strictly above 0.5.
pub fn a_acc(score_out: f64) -> u8 {
    u8::from(score_out > 0.5)
}

/// 1 iff `sim > threshold`.
pub fn sim_indicator(sim: f64, threshold: f64) -> u8 {
    u8::from(sim > threshold)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccVariant {
    #[default]
    Relative,
    Absolute,
}

impl std::str::FromStr for AccVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relative" | "r" => Ok(Self::Relative),
            "absolute" | "a" => Ok(Self::Absolute),
            _ => Err(Error::Config(format!("unknown accuracy variant `{s}` (expected relative or absolute)"))),
        }
    }
}

/// Characters removed from the end of both sides before the copy check.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PunctuationSet {
    pub extra: Vec<char>,
}

impl Default for PunctuationSet {
    /// ASCII punctuation plus the danda and double danda.
    fn default() -> Self {
        Self { extra: vec!['\u{0964}', '\u{0965}'] }
    }
}

impl PunctuationSet {
    pub fn contains(&self, c: char) -> bool {
        c.is_ascii_punctuation() || self.extra.contains(&c)
    }

    /// Removes the trailing run of punctuation, together with any
    /// whitespace interleaved with it.
    pub fn strip_trailing<'a>(&self, s: &'a str) -> &'a str {
        s.trim_end_matches(|c: char| c.is_whitespace() || self.contains(c))
    }
}

/// 1 iff `x` and `y` match after stripping trailing punctuation from both.
pub fn copy_metric_with(x: &str, y: &str, punct: &PunctuationSet) -> u8 {
    u8::from(punct.strip_trailing(x) == punct.strip_trailing(y))
}

pub fn copy_metric(x: &str, y: &str) -> u8 {
    copy_metric_with(x, y, &PunctuationSet::default())
}

/// Multiset unigram-overlap F1 over whitespace tokens.
pub fn unigram_f1(x: &str, y: &str) -> f64 {
    let xs: Vec<&str> = x.split_whitespace().collect();
    let ys: Vec<&str> = y.split_whitespace().collect();
    match (xs.is_empty(), ys.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &xs {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &ys {
        if let Some(c) = counts.get_mut(t).filter(|c| **c > 0) {
            *c -= 1;
            overlap += 1;
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / ys.len() as f64;
    let r = overlap as f64 / xs.len() as f64;
    2.0 * p * r / (p + r)
}

/// One scored (input, output) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub input: String,
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub style_score_in: f64,
    pub style_score_out: f64,
    pub sim: f64,
    pub r_acc: u8,
    pub a_acc: u8,
    pub sim_indicator: u8,
    pub lang_ok: u8,
    pub copy: u8,
    pub unigram_f1: f64,
}

impl EvalRecord {
    pub fn acc(&self, variant: AccVariant) -> u8 {
        match variant {
            AccVariant::Relative => self.r_acc,
            AccVariant::Absolute => self.a_acc,
        }
    }

    /// ACC * SIM * LANG.
    pub fn agg(&self, variant: AccVariant) -> u8 {
        self.acc(variant) * self.sim_indicator * self.lang_ok
    }
}

/// Corpus mean of the per-record ACC * SIM * LANG product.
pub fn agg(records: &[EvalRecord], variant: AccVariant) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Eval("AGG of an empty corpus is undefined".into()));
    }
    let hits: usize = records.iter().map(|r| r.agg(variant) as usize).sum();
    Ok(hits as f64 / records.len() as f64)
}

/// Mean style-score increase (may be negative).
pub fn incr(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Eval("INCR of an empty corpus is undefined".into()));
    }
    Ok(records.iter().map(|r| r.style_score_out - r.style_score_in).sum::<f64>() / records.len() as f64)
}

/// `(concordant, total)` pairs over λ-ordered scores, optionally with the
/// input as the smallest point. Concordance is strict.
pub fn calib_counts<T: PartialOrd>(scores: &[T], input: Option<&T>) -> Result<(usize, usize)> {
    if scores.len() != 3 {
        return Err(Error::Eval(format!("CALIB needs exactly 3 λ-ordered scores, got {}", scores.len())));
    }
    let seq: Vec<&T> = input.into_iter().chain(scores.iter()).collect();
    let mut concordant = 0;
    let mut total = 0;
    for a in 0..seq.len() {
        for b in a + 1..seq.len() {
            total += 1;
            if seq[b] > seq[a] {
                concordant += 1;
            }
        }
    }
    Ok((concordant, total))
}

/// Fraction of concordant pairs for one instance.
pub fn calib<T: PartialOrd>(scores: &[T], input: Option<&T>) -> Result<f64> {
    let (c, n) = calib_counts(scores, input)?;
    Ok(c as f64 / n as f64)
}

/// Mean instance-level CALIB (or C-IN when `inputs` is given).
pub fn corpus_calib(triples: &[[f64; 3]], inputs: Option<&[f64]>) -> Result<f64> {
    if triples.is_empty() {
        return Err(Error::Eval("CALIB of an empty corpus is undefined".into()));
    }
    if let Some(i) = inputs {
        if i.len() != triples.len() {
            return Err(Error::Eval("C-IN needs one input score per instance".into()));
        }
    }
    let mut sum = 0.0;
    for (k, t) in triples.iter().enumerate() {
        sum += calib(t, inputs.map(|i| &i[k]))?;
    }
    Ok(sum / triples.len() as f64)
}
