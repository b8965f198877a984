//! A trained model plus vocabulary and exemplar styles, packaged as a
//! text-in, text-out system for evaluation and sweeps.

use crate::decode::DecodeStrategy;
use crate::error::{Error, Result};
use crate::eval::RewriteSystem;
use crate::inference::{rewrite_batch, rewrite_bt_batch, scaled_difference, RewriteMode};
use crate::model::RewriteModel;
use crate::scalar::Scalar;
use crate::style::StyleVector;
use crate::vocab::{TokenSequence, Vocabulary};

/// Inputs per decode call.
const CHUNK: usize = 64;

pub struct ModelSystem<'a, T> {
    pub model: &'a RewriteModel<T>,
    pub vocab: &'a Vocabulary,
    pub source_style: StyleVector<T>,
    pub target_style: StyleVector<T>,
    pub mode: RewriteMode,
    pub language: u32,
    pub pivot: u32,
    pub strategy: DecodeStrategy,
}

/// Tokenizes with the vocabulary, truncating to what the encoder accepts
/// once a language prefix is added. Returns the number of unknown tokens.
pub fn tokenize<T: Scalar>(model: &RewriteModel<T>, vocab: &Vocabulary, text: &str) -> (TokenSequence, usize) {
    let (seq, unk) = vocab.encode(text);
    let budget = model.config().max_seq_len - 1;
    let mut ids = seq.into_ids();
    ids.truncate(budget);
    (TokenSequence::new(ids), unk)
}

/// Decodes ids back to text, dropping reserved tokens.
pub fn detokenize<T: Scalar>(model: &RewriteModel<T>, vocab: &Vocabulary, seq: &TokenSequence) -> String {
    vocab.decode(seq.ids(), &model.config().reserved_ids())
}

impl<T: Scalar> ModelSystem<'_, T> {
    pub fn outputs(&self, lambda: f64, inputs: &[String]) -> Result<Vec<String>> {
        crate::inference::check_lambda(lambda, None)?;
        let style = if lambda == 0.0 { StyleVector::zeros(self.model.d_model()) } else { scaled_difference(&self.source_style, &self.target_style, lambda) };
        let seqs: Vec<TokenSequence> = inputs.iter().map(|t| tokenize(self.model, self.vocab, t).0).collect();
        if let Some(i) = seqs.iter().position(TokenSequence::is_empty) {
            return Err(Error::InvalidInput(format!("input {i} has no tokens")));
        }
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(CHUNK) {
            let ys = match self.mode {
                RewriteMode::Direct => rewrite_batch(self.model, chunk, &style, &self.strategy, self.language)?,
                RewriteMode::Bt => rewrite_bt_batch(self.model, chunk, &style, &self.strategy, self.language, self.pivot)?,
            };
            out.extend(ys.iter().map(|y| detokenize(self.model, self.vocab, y)));
        }
        Ok(out)
    }
}

impl<T: Scalar> RewriteSystem for ModelSystem<'_, T> {
    fn run(&mut self, lambda: f64, inputs: &[String]) -> Result<Vec<String>> {
        self.outputs(lambda, inputs)
    }
}
