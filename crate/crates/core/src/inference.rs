//! Exemplar-driven rewriting: mean exemplar styles, the scaled difference
//! vector, direct and pivot (+BT) decoding, and exemplar-based scoring.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::decode::{decode_batch, DecodeStrategy};
use crate::error::{Error, Result};
use crate::model::RewriteModel;
use crate::scalar::Scalar;
use crate::style::StyleVector;
use crate::vocab::TokenSequence;

pub const MAX_EXEMPLARS: usize = 10;
pub const DEFAULT_LAMBDA_CEILING: f64 = 3.0;

/// 1 to 10 sentences sharing one intended style.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<TokenSequence>", into = "Vec<TokenSequence>")]
pub struct ExemplarSet(Vec<TokenSequence>);

impl ExemplarSet {
    pub fn new(sentences: Vec<TokenSequence>) -> Result<Self> {
        if sentences.is_empty() || sentences.len() > MAX_EXEMPLARS {
            return Err(Error::InvalidInput(format!("an exemplar set needs 1 to {MAX_EXEMPLARS} sentences, got {}", sentences.len())));
        }
        if sentences.iter().any(TokenSequence::is_empty) {
            return Err(Error::InvalidInput("exemplar sentences must be non-empty".into()));
        }
        Ok(Self(sentences))
    }

    pub fn sentences(&self) -> &[TokenSequence] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<TokenSequence>> for ExemplarSet {
    type Error = Error;
    fn try_from(v: Vec<TokenSequence>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ExemplarSet> for Vec<TokenSequence> {
    fn from(s: ExemplarSet) -> Self {
        s.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewriteMode {
    #[default]
    Direct,
    #[serde(alias = "backtranslate")]
    Bt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewriteRequest {
    pub input: TokenSequence,
    pub source_exemplars: ExemplarSet,
    pub target_exemplars: ExemplarSet,
    pub lambda: f64,
    pub mode: RewriteMode,
    /// Language-code token id of the input (and of the output).
    pub language: u32,
    pub strategy: DecodeStrategy,
}

/// Rejects negative, non-finite, or above-ceiling values.
pub fn check_lambda(lambda: f64, ceiling: Option<f64>) -> Result<()> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidInput(format!("lambda must be a finite non-negative number, got {lambda}")));
    }
    if let Some(c) = ceiling.filter(|c| lambda > *c) {
        return Err(Error::InvalidInput(format!("lambda {lambda} exceeds the ceiling {c}")));
    }
    Ok(())
}

/// Arithmetic mean of the exemplars' style vectors.
pub fn mean_style<T: Scalar>(model: &RewriteModel<T>, set: &ExemplarSet) -> Result<StyleVector<T>> {
    let styles = model.extract_styles(set.sentences())?;
    StyleVector::mean(&styles).ok_or_else(|| Error::InvalidInput("empty exemplar set".into()))
}

/// `lambda * (s_target - s_source)` from precomputed means.
pub fn scaled_difference<T: Scalar>(source: &StyleVector<T>, target: &StyleVector<T>, lambda: f64) -> StyleVector<T> {
    target.sub(source).scale(T::from_f64_lossy(lambda))
}

/// The style vector a request decodes with. At `lambda == 0` the exemplars
/// are not consulted and the result is exactly zero.
pub fn transfer_vector<T: Scalar>(model: &RewriteModel<T>, req: &RewriteRequest) -> Result<StyleVector<T>> {
    check_lambda(req.lambda, None)?;
    if req.lambda == 0.0 {
        return Ok(StyleVector::zeros(model.d_model()));
    }
    let s_a = mean_style(model, &req.source_exemplars)?;
    let s_b = mean_style(model, &req.target_exemplars)?;
    Ok(scaled_difference(&s_a, &s_b, req.lambda))
}

fn check_language<T: Scalar>(model: &RewriteModel<T>, lang: u32) -> Result<()> {
    if model.config().languages.iter().any(|l| l.id == lang) {
        Ok(())
    } else {
        Err(Error::UnknownLanguage(format!("token id {lang}")))
    }
}

/// Direct rewriting of many inputs under one style vector, each input
/// prefixed with the `language` tag.
pub fn rewrite_batch<T: Scalar>(model: &RewriteModel<T>, inputs: &[TokenSequence], style: &StyleVector<T>, strategy: &DecodeStrategy, language: u32) -> Result<Vec<TokenSequence>> {
    let srcs: Vec<TokenSequence> = inputs.iter().map(|x| x.prepend(language)).collect();
    let refs: Vec<&[u32]> = srcs.iter().map(TokenSequence::ids).collect();
    decode_batch(model, &refs, &vec![Some(style); refs.len()], strategy)
}

/// Two-pass rewriting of many inputs: a style-free translation into
/// `pivot`, then a translation back into `language` under `style`. A
/// pivot that comes back empty (or too long to re-encode) fails the whole
/// call with `stage = "pivot"`.
pub fn rewrite_bt_batch<T: Scalar>(
    model: &RewriteModel<T>,
    inputs: &[TokenSequence],
    style: &StyleVector<T>,
    strategy: &DecodeStrategy,
    language: u32,
    pivot: u32,
) -> Result<Vec<TokenSequence>> {
    let zero = StyleVector::zeros(model.d_model());
    let fwd: Vec<TokenSequence> = inputs.iter().map(|x| x.prepend(pivot)).collect();
    let fwd_refs: Vec<&[u32]> = fwd.iter().map(TokenSequence::ids).collect();
    let pivots = decode_batch(model, &fwd_refs, &vec![Some(&zero); fwd.len()], strategy).map_err(|e| Error::Decode { stage: "pivot", reason: e.to_string() })?;
    for (i, p) in pivots.iter().enumerate() {
        if p.is_empty() {
            return Err(Error::Decode { stage: "pivot", reason: format!("input {i} produced an empty pivot translation") });
        }
        if p.len() + 1 > model.config().max_seq_len {
            return Err(Error::Decode { stage: "pivot", reason: format!("input {i} produced a pivot longer than the model accepts") });
        }
    }
    let back: Vec<TokenSequence> = pivots.iter().map(|p| p.prepend(language)).collect();
    let back_refs: Vec<&[u32]> = back.iter().map(TokenSequence::ids).collect();
    decode_batch(model, &back_refs, &vec![Some(style); back.len()], strategy).map_err(|e| Error::Decode { stage: "return", reason: e.to_string() })
}

/// `y = f(x, lambda * (s_B - s_A))`; the input's own style is never added.
pub fn rewrite<T: Scalar>(model: &RewriteModel<T>, req: &RewriteRequest) -> Result<TokenSequence> {
    check_language(model, req.language)?;
    let s = transfer_vector(model, req)?;
    Ok(rewrite_batch(model, std::slice::from_ref(&req.input), &s, &req.strategy, req.language)?.remove(0))
}

/// Pivot through `pivot` with the zero vector, then return to the request
/// language under the scaled difference vector.
pub fn rewrite_bt<T: Scalar>(model: &RewriteModel<T>, req: &RewriteRequest, pivot: u32) -> Result<TokenSequence> {
    check_language(model, req.language)?;
    check_language(model, pivot)?;
    let s = transfer_vector(model, req)?;
    Ok(rewrite_bt_batch(model, std::slice::from_ref(&req.input), &s, &req.strategy, req.language, pivot)?.remove(0))
}

/// Dispatches on the request mode.
pub fn run_request<T: Scalar>(model: &RewriteModel<T>, req: &RewriteRequest, pivot: u32) -> Result<TokenSequence> {
    match req.mode {
        RewriteMode::Direct => rewrite(model, req),
        RewriteMode::Bt => rewrite_bt(model, req, pivot),
    }
}

/// Cosine similarity of `f_style(x)` to a precomputed anchor mean. A zero
/// norm on either side scores 0 and bumps `zero_norm`.
pub fn exemplar_score<T: Scalar>(model: &RewriteModel<T>, x: &TokenSequence, anchor: &StyleVector<T>, zero_norm: &AtomicUsize) -> Result<f64> {
    let s = model.extract_style(x)?;
    Ok(match s.cosine(anchor) {
        Some(c) => c.as_f64(),
        None => {
            zero_norm.fetch_add(1, Ordering::Relaxed);
            0.0
        }
    })
}

pub fn exemplar_classify<T: Scalar>(model: &RewriteModel<T>, x: &TokenSequence, anchor: &ExemplarSet, zero_norm: &AtomicUsize) -> Result<f64> {
    let a = mean_style(model, anchor)?;
    exemplar_score(model, x, &a, zero_norm)
}

/// Which of two sentences is closer to the anchor style: `true` for the
/// first. Ties go to the second, so a tie never counts as a correct call
/// for the first.
pub fn classify_pair<T: Scalar>(
    model: &RewriteModel<T>,
    first: &TokenSequence,
    second: &TokenSequence,
    anchor: &StyleVector<T>,
    zero_norm: &AtomicUsize,
) -> Result<bool> {
    Ok(exemplar_score(model, first, anchor, zero_norm)? > exemplar_score(model, second, anchor, zero_norm)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn model() -> RewriteModel<f64> {
        let cfg = ModelConfig { vocab_size: 24, d_model: 16, n_layers_enc: 1, n_layers_dec: 1, n_heads: 2, d_ff: 32, max_seq_len: 16, ..ModelConfig::default() };
        RewriteModel::new(cfg, 3).unwrap()
    }

    fn seq(v: &[u32]) -> TokenSequence {
        TokenSequence::new(v.to_vec())
    }

    fn req(lambda: f64) -> RewriteRequest {
        RewriteRequest {
            input: seq(&[9, 10, 11]),
            source_exemplars: ExemplarSet::new(vec![seq(&[12, 13])]).unwrap(),
            target_exemplars: ExemplarSet::new(vec![seq(&[14, 15, 16]), seq(&[17])]).unwrap(),
            lambda,
            mode: RewriteMode::Direct,
            language: 5,
            strategy: DecodeStrategy::beam(2),
        }
    }

    #[test]
    fn exemplar_set_bounds() {
        assert!(ExemplarSet::new(vec![]).is_err());
        assert!(ExemplarSet::new(vec![seq(&[9]); 11]).is_err());
        assert!(ExemplarSet::new(vec![seq(&[])]).is_err());
        assert!(serde_json::from_str::<ExemplarSet>("[]").is_err());
    }

    #[test]
    fn mean_of_singleton_and_swap_symmetry() {
        let m = model();
        let e = ExemplarSet::new(vec![seq(&[9, 10])]).unwrap();
        assert_eq!(mean_style(&m, &e).unwrap(), m.extract_style(&seq(&[9, 10])).unwrap());
        let r = req(1.5);
        let mut swapped = r.clone();
        std::mem::swap(&mut swapped.source_exemplars, &mut swapped.target_exemplars);
        assert_eq!(transfer_vector(&m, &swapped).unwrap(), transfer_vector(&m, &r).unwrap().neg());
    }

    #[test]
    fn zero_lambda_is_exactly_zero_and_negative_rejected() {
        let m = model();
        assert!(transfer_vector(&m, &req(0.0)).unwrap().is_zero());
        assert!(rewrite(&m, &req(-0.1)).is_err());
        assert!(check_lambda(3.5, Some(DEFAULT_LAMBDA_CEILING)).is_err());
        assert!(check_lambda(3.0, Some(DEFAULT_LAMBDA_CEILING)).is_ok());
    }

    #[test]
    fn self_cosine_is_one() {
        let m = model();
        let warn = AtomicUsize::new(0);
        let x = seq(&[9, 10, 11]);
        let anchor = ExemplarSet::new(vec![x.clone()]).unwrap();
        let c = exemplar_classify(&m, &x, &anchor, &warn).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
        assert_eq!(exemplar_score(&m, &x, &StyleVector::zeros(16), &warn).unwrap(), 0.0);
        assert_eq!(warn.load(Ordering::Relaxed), 1);
    }

    #[test]
    fn unknown_language_rejected() {
        let m = model();
        let mut r = req(1.0);
        r.language = 9;
        assert!(matches!(rewrite(&m, &r), Err(Error::UnknownLanguage(_))));
    }
}
