//! The encoder-decoder rewriter with a style side channel.
//!
//! One encoder serves both roles: reading `[CLS] ⊕ e` and taking the hidden
//! state at position 0 gives the style vector, and encoding an input `x`
//! gives the memory the decoder cross-attends to. A style vector is added to
//! that memory before decoding.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::AttnLayout;
use crate::scalar::Scalar;
use crate::style::StyleVector;
use crate::tensor::Tensor;
use crate::vocab::{LanguageToken, SpecialTokens, TokenSequence};

/// Where the style vector enters the encoder memory.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleInjection {
    /// Broadcast-add to every memory position.
    #[default]
    AllPositions,
    /// Add to position 0 only.
    FirstPosition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers_enc: usize,
    pub n_layers_dec: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub special: SpecialTokens,
    pub languages: Vec<LanguageToken>,
    pub tie_embeddings: bool,
    pub style_injection: StyleInjection,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 512,
            d_model: 64,
            n_layers_enc: 2,
            n_layers_dec: 2,
            n_heads: 4,
            d_ff: 256,
            max_seq_len: 64,
            special: SpecialTokens::default(),
            languages: vec![
                LanguageToken { code: "la".into(), id: 5 },
                LanguageToken { code: "lb".into(), id: 6 },
            ],
            tie_embeddings: true,
            style_injection: StyleInjection::AllPositions,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers_enc", self.n_layers_enc),
            ("n_layers_dec", self.n_layers_dec),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_seq_len < 2 {
            return Err(Error::Config("max_seq_len must be at least 2".into()));
        }
        let mut reserved: Vec<u32> = self.special.all().to_vec();
        reserved.extend(self.languages.iter().map(|l| l.id));
        for (i, &id) in reserved.iter().enumerate() {
            if id as usize >= self.vocab_size {
                return Err(Error::Config(format!("reserved id {id} is outside the vocabulary")));
            }
            if reserved[..i].contains(&id) {
                return Err(Error::Config(format!("reserved id {id} is used twice")));
            }
        }
        for (i, l) in self.languages.iter().enumerate() {
            if self.languages[..i].iter().any(|o| o.code == l.code) {
                return Err(Error::Config(format!("language code `{}` listed twice", l.code)));
            }
        }
        Ok(())
    }

    pub fn language_id(&self, code: &str) -> Result<u32> {
        self.languages
            .iter()
            .find(|l| l.code == code)
            .map(|l| l.id)
            .ok_or_else(|| Error::UnknownLanguage(code.to_string()))
    }

    /// Ids that never appear as ordinary content.
    pub fn reserved_ids(&self) -> Vec<u32> {
        let mut r = self.special.all().to_vec();
        r.extend(self.languages.iter().map(|l| l.id));
        r
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LnIds {
    pub g: usize,
    pub b: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct AttnIds {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct FfIds {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct EncLayerIds {
    pub ln1: LnIds,
    pub attn: AttnIds,
    pub ln2: LnIds,
    pub ff: FfIds,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct DecLayerIds {
    pub ln1: LnIds,
    pub self_attn: AttnIds,
    pub ln2: LnIds,
    pub cross: AttnIds,
    pub ln3: LnIds,
    pub ff: FfIds,
}

#[derive(Clone, Debug)]
pub(crate) struct ParamIds {
    pub embed: usize,
    pub enc_pos: usize,
    pub dec_pos: usize,
    pub enc: Vec<EncLayerIds>,
    pub enc_ln: LnIds,
    pub dec: Vec<DecLayerIds>,
    pub dec_ln: LnIds,
    pub out_w: Option<usize>,
    pub out_b: usize,
}

#[derive(Clone, Copy, Debug)]
enum Init {
    Normal(f64),
    Ones,
    Zeros,
}

/// Walks the canonical parameter list, calling `reg(name, rows, cols, init)`
/// for each entry in order.
fn build_ids(cfg: &ModelConfig, reg: &mut dyn FnMut(&str, usize, usize, Init) -> usize) -> ParamIds {
    let d = cfg.d_model;
    let f = cfg.d_ff;
    let w_std = 1.0 / (d as f64).sqrt();
    let ff_std = 1.0 / (f as f64).sqrt();
    let depth = (2 * (cfg.n_layers_enc + cfg.n_layers_dec)) as f64;
    let resid_std = w_std / depth.sqrt();

    let ln = |reg: &mut dyn FnMut(&str, usize, usize, Init) -> usize, p: &str| LnIds {
        g: reg(&format!("{p}.g"), 1, d, Init::Ones),
        b: reg(&format!("{p}.b"), 1, d, Init::Zeros),
    };
    let attn = |reg: &mut dyn FnMut(&str, usize, usize, Init) -> usize, p: &str| AttnIds {
        wq: reg(&format!("{p}.wq"), d, d, Init::Normal(w_std)),
        bq: reg(&format!("{p}.bq"), 1, d, Init::Zeros),
        wk: reg(&format!("{p}.wk"), d, d, Init::Normal(w_std)),
        bk: reg(&format!("{p}.bk"), 1, d, Init::Zeros),
        wv: reg(&format!("{p}.wv"), d, d, Init::Normal(w_std)),
        bv: reg(&format!("{p}.bv"), 1, d, Init::Zeros),
        wo: reg(&format!("{p}.wo"), d, d, Init::Normal(resid_std)),
        bo: reg(&format!("{p}.bo"), 1, d, Init::Zeros),
    };
    let ff = |reg: &mut dyn FnMut(&str, usize, usize, Init) -> usize, p: &str| FfIds {
        w1: reg(&format!("{p}.w1"), d, f, Init::Normal(w_std)),
        b1: reg(&format!("{p}.b1"), 1, f, Init::Zeros),
        w2: reg(&format!("{p}.w2"), f, d, Init::Normal(ff_std / depth.sqrt())),
        b2: reg(&format!("{p}.b2"), 1, d, Init::Zeros),
    };

    let embed = reg("embed", cfg.vocab_size, d, Init::Normal(w_std));
    let enc_pos = reg("enc.pos", cfg.max_seq_len, d, Init::Normal(w_std));
    let dec_pos = reg("dec.pos", cfg.max_seq_len, d, Init::Normal(w_std));
    let enc = (0..cfg.n_layers_enc)
        .map(|i| {
            let p = format!("enc.{i}");
            EncLayerIds {
                ln1: ln(reg, &format!("{p}.ln1")),
                attn: attn(reg, &format!("{p}.attn")),
                ln2: ln(reg, &format!("{p}.ln2")),
                ff: ff(reg, &format!("{p}.ff")),
            }
        })
        .collect();
    let enc_ln = ln(reg, "enc.ln_f");
    let dec = (0..cfg.n_layers_dec)
        .map(|i| {
            let p = format!("dec.{i}");
            DecLayerIds {
                ln1: ln(reg, &format!("{p}.ln1")),
                self_attn: attn(reg, &format!("{p}.self")),
                ln2: ln(reg, &format!("{p}.ln2")),
                cross: attn(reg, &format!("{p}.cross")),
                ln3: ln(reg, &format!("{p}.ln3")),
                ff: ff(reg, &format!("{p}.ff")),
            }
        })
        .collect();
    let dec_ln = ln(reg, "dec.ln_f");
    let out_w = (!cfg.tie_embeddings).then(|| reg("out.w", cfg.vocab_size, d, Init::Normal(w_std)));
    let out_b = reg("out.b", 1, cfg.vocab_size, Init::Zeros);
    ParamIds { embed, enc_pos, dec_pos, enc, enc_ln, dec, dec_ln, out_w, out_b }
}

/// A right-padded batch of token sequences.
#[derive(Clone, Debug)]
pub struct PaddedBatch {
    pub ids: Vec<u32>,
    pub width: usize,
    pub lens: Vec<usize>,
}

impl PaddedBatch {
    pub fn new(seqs: &[&[u32]], pad: u32) -> Self {
        let width = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(seqs.len() * width);
        for s in seqs {
            ids.extend_from_slice(s);
            ids.extend(std::iter::repeat_n(pad, width - s.len()));
        }
        Self { ids, width, lens: seqs.iter().map(|s| s.len()).collect() }
    }

    pub fn batch(&self) -> usize {
        self.lens.len()
    }

    fn positions(&self) -> Vec<u32> {
        (0..self.batch()).flat_map(|_| 0..self.width as u32).collect()
    }
}

/// Encoder output on a tape, with the layout needed to attend to it.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub hidden: Var,
    pub width: usize,
    pub lens: Vec<usize>,
}

/// The trainable rewriter.
#[derive(Clone, Debug)]
pub struct RewriteModel<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    ids: ParamIds,
}

impl<T: Scalar> RewriteModel<T> {
    /// Fresh model with seeded random initialization.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::default();
        let ids = build_ids(&config, &mut |name, rows, cols, init| {
            let t = match init {
                Init::Normal(std) => Tensor::randn(rows, cols, std, &mut rng),
                Init::Ones => Tensor::filled(rows, cols, T::one()),
                Init::Zeros => Tensor::zeros(rows, cols),
            };
            params.push(name, t)
        });
        Ok(Self { config, params, ids })
    }

    /// Assembles a model from loaded parameters, checking every name and
    /// shape against `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let mut problems = Vec::new();
        let mut expected = 0usize;
        let ids = build_ids(&config, &mut |name, rows, cols, _| {
            expected += 1;
            match params.id_of(name) {
                Some(id) => {
                    if params.get(id).shape() != (rows, cols) {
                        problems.push(format!(
                            "`{name}` has shape {:?}, expected ({rows}, {cols})",
                            params.get(id).shape()
                        ));
                    }
                    id
                }
                None => {
                    problems.push(format!("missing parameter `{name}`"));
                    0
                }
            }
        });
        if params.len() != expected {
            problems.push(format!("expected {expected} parameter tensors, found {}", params.len()));
        }
        if !problems.is_empty() {
            return Err(Error::Checkpoint(problems.join("; ")));
        }
        Ok(Self { config, params, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub(crate) fn ids(&self) -> &ParamIds {
        &self.ids
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Scalar>(&self) -> RewriteModel<U> {
        let mut params = ParamStore::default();
        for (name, t) in self.params.names().iter().zip(self.params.tensors()) {
            params.push(name.clone(), t.cast());
        }
        RewriteModel { config: self.config.clone(), params, ids: self.ids.clone() }
    }

    /// Rejects empty, overlong, or out-of-vocabulary sequences.
    pub fn check_sequence(&self, ids: &[u32], extra: usize) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::InvalidInput("empty token sequence".into()));
        }
        let len = ids.len() + extra;
        if len > self.config.max_seq_len {
            return Err(Error::Length { len, max: self.config.max_seq_len });
        }
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::InvalidInput(format!("token id {bad} is outside the vocabulary")));
        }
        Ok(())
    }

    fn attn_block(&self, tape: &mut Tape<'_, T>, xq: Var, xkv: Var, a: &AttnIds, layout: AttnLayout) -> Var {
        let (wq, bq) = (tape.param(a.wq), tape.param(a.bq));
        let (wk, bk) = (tape.param(a.wk), tape.param(a.bk));
        let (wv, bv) = (tape.param(a.wv), tape.param(a.bv));
        let (wo, bo) = (tape.param(a.wo), tape.param(a.bo));
        let q = tape.linear(xq, wq, bq);
        let k = tape.linear(xkv, wk, bk);
        let v = tape.linear(xkv, wv, bv);
        let o = tape.attention(q, k, v, layout);
        tape.linear(o, wo, bo)
    }

    fn ff_block(&self, tape: &mut Tape<'_, T>, x: Var, f: &FfIds) -> Var {
        let (w1, b1, w2, b2) = (tape.param(f.w1), tape.param(f.b1), tape.param(f.w2), tape.param(f.b2));
        let h = tape.linear(x, w1, b1);
        let h = tape.gelu(h);
        tape.linear(h, w2, b2)
    }

    fn ln(&self, tape: &mut Tape<'_, T>, x: Var, l: &LnIds) -> Var {
        let (g, b) = (tape.param(l.g), tape.param(l.b));
        tape.layer_norm(x, g, b)
    }

    /// Runs the encoder over a batch of already-validated sequences.
    pub fn encode(&self, tape: &mut Tape<'_, T>, seqs: &[&[u32]]) -> Encoded {
        let batch = PaddedBatch::new(seqs, self.config.special.pad);
        let e = tape.param(self.ids.embed);
        let x = tape.embed(e, &batch.ids);
        let p = tape.param(self.ids.enc_pos);
        let pe = tape.embed(p, &batch.positions());
        let mut x = tape.add(x, pe);
        let layout = AttnLayout {
            batch: batch.batch(),
            q_len: batch.width,
            k_len: batch.width,
            heads: self.config.n_heads,
            key_lens: batch.lens.clone(),
            causal: false,
        };
        for layer in &self.ids.enc {
            let h = self.ln(tape, x, &layer.ln1);
            let a = self.attn_block(tape, h, h, &layer.attn, layout.clone());
            x = tape.add(x, a);
            let h = self.ln(tape, x, &layer.ln2);
            let f = self.ff_block(tape, h, &layer.ff);
            x = tape.add(x, f);
        }
        let hidden = self.ln(tape, x, &self.ids.enc_ln);
        Encoded { hidden, width: batch.width, lens: batch.lens }
    }

    /// Style vectors `f_style(e)` for a batch, as a `[B, d]` node: the
    /// encoding of `[CLS] ⊕ e` read at position 0.
    pub fn style_rows(&self, tape: &mut Tape<'_, T>, seqs: &[&[u32]]) -> Var {
        let cls = self.config.special.cls;
        let with_cls: Vec<Vec<u32>> = seqs.iter().map(|s| std::iter::once(cls).chain(s.iter().copied()).collect()).collect();
        let refs: Vec<&[u32]> = with_cls.iter().map(Vec::as_slice).collect();
        let enc = self.encode(tape, &refs);
        let rows: Vec<usize> = (0..seqs.len()).map(|b| b * enc.width).collect();
        tape.gather_rows(enc.hidden, &rows)
    }

    /// Adds one style row per batch element to the encoder memory.
    pub fn inject(&self, tape: &mut Tape<'_, T>, enc: &Encoded, style: Var) -> Var {
        let first_only = self.config.style_injection == StyleInjection::FirstPosition;
        tape.add_grouped(enc.hidden, style, enc.width, first_only)
    }

    /// Teacher-forced decoder logits `[B * width, V]` for the padded batch
    /// of decoder inputs.
    pub fn decoder_logits(&self, tape: &mut Tape<'_, T>, memory: Var, enc: &Encoded, dec_inputs: &[&[u32]]) -> (Var, usize) {
        let batch = PaddedBatch::new(dec_inputs, self.config.special.pad);
        assert_eq!(batch.batch(), enc.lens.len(), "decoder and encoder batch sizes differ");
        let e = tape.param(self.ids.embed);
        let x = tape.embed(e, &batch.ids);
        let p = tape.param(self.ids.dec_pos);
        let pe = tape.embed(p, &batch.positions());
        let mut x = tape.add(x, pe);
        let self_layout = AttnLayout {
            batch: batch.batch(),
            q_len: batch.width,
            k_len: batch.width,
            heads: self.config.n_heads,
            key_lens: batch.lens.clone(),
            causal: true,
        };
        let cross_layout = AttnLayout {
            batch: batch.batch(),
            q_len: batch.width,
            k_len: enc.width,
            heads: self.config.n_heads,
            key_lens: enc.lens.clone(),
            causal: false,
        };
        for layer in &self.ids.dec {
            let h = self.ln(tape, x, &layer.ln1);
            let a = self.attn_block(tape, h, h, &layer.self_attn, self_layout.clone());
            x = tape.add(x, a);
            let h = self.ln(tape, x, &layer.ln2);
            let a = self.attn_block(tape, h, memory, &layer.cross, cross_layout.clone());
            x = tape.add(x, a);
            let h = self.ln(tape, x, &layer.ln3);
            let f = self.ff_block(tape, h, &layer.ff);
            x = tape.add(x, f);
        }
        let h = self.ln(tape, x, &self.ids.dec_ln);
        let w = tape.param(self.ids.out_w.unwrap_or(self.ids.embed));
        let logits = tape.matmul_t(h, w);
        let b = tape.param(self.ids.out_b);
        (tape.add_row(logits, b), batch.width)
    }

    /// Mean cross entropy of producing each `targets[b]` (followed by EOS)
    /// from `sources[b]` with memory style `style` (`[B, d]`, or none for
    /// the style-free forward pass).
    pub fn seq2seq_loss(&self, tape: &mut Tape<'_, T>, sources: &[&[u32]], style: Option<Var>, targets: &[&[u32]]) -> Var {
        let sp = self.config.special;
        let enc = self.encode(tape, sources);
        let memory = match style {
            Some(s) => self.inject(tape, &enc, s),
            None => enc.hidden,
        };
        let dec_in: Vec<Vec<u32>> = targets.iter().map(|t| std::iter::once(sp.bos).chain(t.iter().copied()).collect()).collect();
        let gold: Vec<Vec<u32>> = targets.iter().map(|t| t.iter().copied().chain(std::iter::once(sp.eos)).collect()).collect();
        let refs: Vec<&[u32]> = dec_in.iter().map(Vec::as_slice).collect();
        let (logits, width) = self.decoder_logits(tape, memory, &enc, &refs);
        let mut flat = Vec::with_capacity(gold.len() * width);
        for g in &gold {
            flat.extend_from_slice(g);
            flat.extend(std::iter::repeat_n(sp.pad, width - g.len()));
        }
        tape.cross_entropy(logits, &flat, sp.pad)
    }

    /// `f_style(e) = f_enc([CLS] ⊕ e)[0]`.
    pub fn extract_style(&self, e: &TokenSequence) -> Result<StyleVector<T>> {
        Ok(self.extract_styles(std::slice::from_ref(e))?.remove(0))
    }

    /// Batched [`extract_style`](Self::extract_style).
    pub fn extract_styles(&self, seqs: &[TokenSequence]) -> Result<Vec<StyleVector<T>>> {
        for s in seqs {
            self.check_sequence(s.ids(), 1)?;
        }
        if seqs.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new(&self.params);
        let refs: Vec<&[u32]> = seqs.iter().map(|s| s.ids()).collect();
        let rows = self.style_rows(&mut tape, &refs);
        let v = tape.value(rows);
        Ok((0..seqs.len()).map(|b| StyleVector::new(v.row(b).to_vec())).collect())
    }

    /// Encoder memory for `x` after adding `s` (or the bare encoding when
    /// `s` is `None`), shape `[len(x), d]`.
    pub fn injected_memory(&self, x: &TokenSequence, s: Option<&StyleVector<T>>) -> Result<Tensor<T>> {
        self.check_sequence(x.ids(), 0)?;
        if let Some(s) = s {
            s.check_dim(self.config.d_model)?;
        }
        let mut tape = Tape::new(&self.params);
        let enc = self.encode(&mut tape, &[x.ids()]);
        let mem = match s {
            Some(s) => {
                let sv = tape.constant(Tensor::from_vec(1, s.len(), s.values().to_vec()));
                self.inject(&mut tape, &enc, sv)
            }
            None => enc.hidden,
        };
        Ok(tape.value(mem).clone())
    }

    /// Teacher-forced logits of `f_ur(x, s)` over `target_prefix`: row `i`
    /// is the distribution for `target_prefix[i]` given `BOS ⊕
    /// target_prefix[..i]`. Shape `(len(target_prefix), V)`.
    pub fn rewrite_logits(&self, x: &TokenSequence, s: &StyleVector<T>, target_prefix: &TokenSequence) -> Result<Tensor<T>> {
        s.check_dim(self.config.d_model)?;
        self.logits_inner(x, Some(s), target_prefix)
    }

    /// Logits of the plain encode-decode pass with no style channel.
    pub fn style_free_logits(&self, x: &TokenSequence, target_prefix: &TokenSequence) -> Result<Tensor<T>> {
        self.logits_inner(x, None, target_prefix)
    }

    fn logits_inner(&self, x: &TokenSequence, s: Option<&StyleVector<T>>, prefix: &TokenSequence) -> Result<Tensor<T>> {
        self.check_sequence(x.ids(), 0)?;
        if prefix.len() > self.config.max_seq_len {
            return Err(Error::Length { len: prefix.len(), max: self.config.max_seq_len });
        }
        if let Some(&bad) = prefix.ids().iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::InvalidInput(format!("token id {bad} is outside the vocabulary")));
        }
        let n = prefix.len();
        if n == 0 {
            return Ok(Tensor::zeros(0, self.config.vocab_size));
        }
        let mut tape = Tape::new(&self.params);
        let enc = self.encode(&mut tape, &[x.ids()]);
        let memory = match s {
            Some(s) => {
                let sv = tape.constant(Tensor::from_vec(1, s.len(), s.values().to_vec()));
                self.inject(&mut tape, &enc, sv)
            }
            None => enc.hidden,
        };
        let dec_in: Vec<u32> = std::iter::once(self.config.special.bos).chain(prefix.ids()[..n - 1].iter().copied()).collect();
        let (logits, _) = self.decoder_logits(&mut tape, memory, &enc, &[&dec_in]);
        Ok(tape.value(logits).clone())
    }
}

/// Reads the style vector out of a CLS-prepended encoding `[len, d]`.
pub fn style_readout<T: Scalar>(encoding: &Tensor<T>) -> StyleVector<T> {
    StyleVector::new(encoding.row(0).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size: 24,
            d_model: 8,
            n_layers_enc: 1,
            n_layers_dec: 1,
            n_heads: 2,
            d_ff: 12,
            max_seq_len: 10,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn default_config_validates() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn config_rejects_bad_heads_and_duplicate_ids() {
        let mut c = tiny();
        c.n_heads = 3;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.special.cls = c.special.bos;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.max_seq_len = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn from_params_checks_shapes() {
        let m = RewriteModel::<f32>::new(tiny(), 1).unwrap();
        let ok = RewriteModel::from_params(tiny(), m.params().clone());
        assert!(ok.is_ok());
        let mut wrong = tiny();
        wrong.d_ff = 16;
        assert!(RewriteModel::from_params(wrong, m.params().clone()).is_err());
    }

    #[test]
    fn extract_style_errors() {
        let m = RewriteModel::<f32>::new(tiny(), 1).unwrap();
        assert!(matches!(m.extract_style(&TokenSequence::default()), Err(Error::InvalidInput(_))));
        let long = TokenSequence::new(vec![7; 10]);
        assert!(matches!(m.extract_style(&long), Err(Error::Length { .. })));
    }

    #[test]
    fn batched_and_single_styles_agree() {
        let m = RewriteModel::<f32>::new(tiny(), 2).unwrap();
        let a = TokenSequence::new(vec![7, 8, 9]);
        let b = TokenSequence::new(vec![10, 11, 12, 13, 14]);
        let both = m.extract_styles(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(both[0], m.extract_style(&a).unwrap());
        assert_eq!(both[1], m.extract_style(&b).unwrap());
    }
}
