//! Autoregressive decoding with a key/value cache.
//!
//! The step-wise decoder runs the same kernels as the teacher-forced tape
//! pass. Batched beam search and nucleus sampling both sit on top of
//! [`DecoderState`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::kernels::{self, AttnLayout};
use crate::model::{AttnIds, LnIds, RewriteModel};
use crate::scalar::Scalar;
use crate::style::StyleVector;
use crate::tensor::Tensor;
use crate::vocab::TokenSequence;

/// Beam size used when nothing else is configured.
pub const DEFAULT_BEAM: usize = 4;

/// How to turn decoder distributions into a sequence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecodeStrategy {
    /// Beam search; finished scores are divided by `len ^ length_penalty`.
    Beam { width: usize, length_penalty: f64 },
    /// Nucleus sampling at `temperature`, seeded per sequence.
    TopP { p: f64, temperature: f64, seed: u64 },
}

impl Default for DecodeStrategy {
    fn default() -> Self {
        Self::beam(DEFAULT_BEAM)
    }
}

impl DecodeStrategy {
    pub fn beam(width: usize) -> Self {
        Self::Beam { width, length_penalty: 1.0 }
    }

    pub fn greedy() -> Self {
        Self::beam(1)
    }

    /// Plain temperature sampling (nucleus of the whole distribution).
    pub fn sample(temperature: f64, seed: u64) -> Self {
        Self::TopP { p: 1.0, temperature, seed }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Beam { width, length_penalty } => {
                if width == 0 {
                    return Err(Error::Config("beam width must be at least 1".into()));
                }
                if !length_penalty.is_finite() {
                    return Err(Error::Config("length penalty must be finite".into()));
                }
            }
            Self::TopP { p, temperature, .. } => {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(Error::Config(format!("top-p must lie in (0, 1], got {p}")));
                }
                if !(temperature > 0.0 && temperature.is_finite()) {
                    return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
                }
            }
        }
        Ok(())
    }

    /// Short human-readable description, e.g. `beam(4)`.
    pub fn describe(&self) -> String {
        match *self {
            Self::Beam { width, .. } => format!("beam({width})"),
            Self::TopP { p, temperature, .. } => format!("top_p(p={p}, t={temperature})"),
        }
    }
}

/// Number of tokens (EOS included) the decoder may emit for a source of
/// `src_len` tokens.
pub fn max_decode_len(max_seq_len: usize, src_len: usize) -> usize {
    max_seq_len.min(2 * src_len + 8)
}

fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let mut y = x.matmul(w);
    y.add_row_inplace(b.data());
    y
}

/// Step-wise decoder over `n` parallel rows, each attending to its own copy
/// of an encoder memory.
pub struct DecoderState<'m, T> {
    model: &'m RewriteModel<T>,
    rows: usize,
    capacity: usize,
    pos: usize,
    self_k: Vec<Tensor<T>>,
    self_v: Vec<Tensor<T>>,
    cross_k: Vec<Tensor<T>>,
    cross_v: Vec<Tensor<T>>,
    mem_width: usize,
    mem_lens: Vec<usize>,
}

impl<'m, T: Scalar> DecoderState<'m, T> {
    /// `memory` is `[groups * width, d]`; each group is replicated
    /// `copies` times so row `g * copies + c` reads group `g`.
    pub fn new(model: &'m RewriteModel<T>, memory: &Tensor<T>, width: usize, lens: &[usize], copies: usize, capacity: usize) -> Self {
        let d = model.d_model();
        let groups = lens.len();
        let rows = groups * copies;
        let mut rep = Tensor::zeros(rows * width, d);
        for g in 0..groups {
            let src = &memory.data()[g * width * d..(g + 1) * width * d];
            for c in 0..copies {
                let r = g * copies + c;
                rep.data_mut()[r * width * d..(r + 1) * width * d].copy_from_slice(src);
            }
        }
        let p = model.params();
        let mut cross_k = Vec::new();
        let mut cross_v = Vec::new();
        for layer in &model.ids().dec {
            let a = &layer.cross;
            cross_k.push(linear(&rep, p.get(a.wk), p.get(a.bk)));
            cross_v.push(linear(&rep, p.get(a.wv), p.get(a.bv)));
        }
        let n_layers = model.ids().dec.len();
        Self {
            model,
            rows,
            capacity,
            pos: 0,
            self_k: (0..n_layers).map(|_| Tensor::zeros(rows * capacity, d)).collect(),
            self_v: (0..n_layers).map(|_| Tensor::zeros(rows * capacity, d)).collect(),
            cross_k,
            cross_v,
            mem_width: width,
            mem_lens: lens.iter().flat_map(|&l| std::iter::repeat_n(l, copies)).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    fn ln(&self, x: &Tensor<T>, l: &LnIds) -> Tensor<T> {
        let p = self.model.params();
        let (rows, cols) = x.shape();
        let mut out = Tensor::zeros(rows, cols);
        let mut mean = vec![T::zero(); rows];
        let mut rstd = vec![T::zero(); rows];
        kernels::layer_norm(x.data(), p.get(l.g).data(), p.get(l.b).data(), cols, out.data_mut(), &mut mean, &mut rstd);
        out
    }

    fn attn_out(&self, o: &Tensor<T>, a: &AttnIds) -> Tensor<T> {
        let p = self.model.params();
        linear(o, p.get(a.wo), p.get(a.bo))
    }

    /// Feeds one token per row at the current position and returns the
    /// next-token logits `[rows, V]`.
    pub fn step(&mut self, tokens: &[u32]) -> Tensor<T> {
        assert_eq!(tokens.len(), self.rows);
        assert!(self.pos < self.capacity, "decoder cache is full");
        let model = self.model;
        let p = model.params();
        let ids = model.ids();
        let d = model.d_model();
        let heads = model.config().n_heads;
        let t = self.pos;

        let emb = p.get(ids.embed);
        let pos = p.get(ids.dec_pos).row(t);
        let mut x = Tensor::zeros(self.rows, d);
        for (r, &tok) in tokens.iter().enumerate() {
            for ((o, &e), &q) in x.row_mut(r).iter_mut().zip(emb.row(tok as usize)).zip(pos) {
                *o = e + q;
            }
        }

        let self_layout = AttnLayout {
            batch: self.rows,
            q_len: 1,
            k_len: self.capacity,
            heads,
            key_lens: vec![t + 1; self.rows],
            causal: false,
        };
        let cross_layout = AttnLayout {
            batch: self.rows,
            q_len: 1,
            k_len: self.mem_width,
            heads,
            key_lens: self.mem_lens.clone(),
            causal: false,
        };
        for (li, layer) in ids.dec.iter().enumerate() {
            let a = &layer.self_attn;
            let h = self.ln(&x, &layer.ln1);
            let q = linear(&h, p.get(a.wq), p.get(a.bq));
            let k = linear(&h, p.get(a.wk), p.get(a.bk));
            let v = linear(&h, p.get(a.wv), p.get(a.bv));
            for r in 0..self.rows {
                let slot = r * self.capacity + t;
                self.self_k[li].row_mut(slot).copy_from_slice(k.row(r));
                self.self_v[li].row_mut(slot).copy_from_slice(v.row(r));
            }
            let mut o = Tensor::zeros(self.rows, d);
            let mut probs = vec![T::zero(); self_layout.probs_len()];
            kernels::attention(q.data(), self.self_k[li].data(), self.self_v[li].data(), d, &self_layout, o.data_mut(), &mut probs);
            x.add_inplace(&self.attn_out(&o, a));

            let c = &layer.cross;
            let h = self.ln(&x, &layer.ln2);
            let q = linear(&h, p.get(c.wq), p.get(c.bq));
            let mut o = Tensor::zeros(self.rows, d);
            let mut probs = vec![T::zero(); cross_layout.probs_len()];
            kernels::attention(q.data(), self.cross_k[li].data(), self.cross_v[li].data(), d, &cross_layout, o.data_mut(), &mut probs);
            x.add_inplace(&self.attn_out(&o, c));

            let f = &layer.ff;
            let h = self.ln(&x, &layer.ln3);
            let mut h = linear(&h, p.get(f.w1), p.get(f.b1));
            h.data_mut().iter_mut().for_each(|v| *v = kernels::gelu(*v));
            x.add_inplace(&linear(&h, p.get(f.w2), p.get(f.b2)));
        }
        let h = self.ln(&x, &ids.dec_ln);
        let w = p.get(ids.out_w.unwrap_or(ids.embed));
        let mut logits = h.matmul_t(w);
        logits.add_row_inplace(p.get(ids.out_b).data());
        self.pos += 1;
        logits
    }

    /// Row `r` takes over the cache of row `src[r]`. Only self-attention
    /// caches move; callers must keep every row within its memory group.
    pub fn reorder(&mut self, src: &[usize]) {
        assert_eq!(src.len(), self.rows);
        if src.iter().enumerate().all(|(r, &s)| r == s) {
            return;
        }
        let d = self.model.d_model();
        let block = self.capacity * d;
        let used = self.pos * d;
        for cache in self.self_k.iter_mut().chain(self.self_v.iter_mut()) {
            let old = cache.data().to_vec();
            let data = cache.data_mut();
            for (r, &s) in src.iter().enumerate() {
                data[r * block..r * block + used].copy_from_slice(&old[s * block..s * block + used]);
            }
        }
    }
}

/// Encodes a batch and adds per-row styles, returning the raw memory and its
/// layout. `styles[b] == None` uses the bare encoding.
pub fn encode_memory<T: Scalar>(
    model: &RewriteModel<T>,
    sources: &[&[u32]],
    styles: &[Option<&StyleVector<T>>],
) -> (Tensor<T>, usize, Vec<usize>) {
    let mut tape = Tape::new(model.params());
    let enc = model.encode(&mut tape, sources);
    let d = model.d_model();
    let mut mem = tape.value(enc.hidden).clone();
    let first_only = model.config().style_injection == crate::model::StyleInjection::FirstPosition;
    for (b, s) in styles.iter().enumerate() {
        if let Some(s) = s {
            let span = if first_only { 1 } else { enc.width };
            for t in 0..span {
                for (o, &v) in mem.data_mut()[(b * enc.width + t) * d..(b * enc.width + t + 1) * d].iter_mut().zip(s.values()) {
                    *o += v;
                }
            }
        }
    }
    (mem, enc.width, enc.lens)
}

fn log_softmax<T: Scalar>(row: &[T]) -> Vec<f64> {
    let lse = kernels::log_sum_exp(row).as_f64();
    row.iter().map(|&z| z.as_f64() - lse).collect()
}

#[derive(Clone)]
struct Hyp {
    tokens: Vec<u32>,
    score: f64,
}

/// Decodes every source under one strategy. Sources are used as-is (any
/// language code must already be prepended). Returned sequences exclude
/// BOS and EOS.
pub fn decode_batch<T: Scalar>(
    model: &RewriteModel<T>,
    sources: &[&[u32]],
    styles: &[Option<&StyleVector<T>>],
    strategy: &DecodeStrategy,
) -> Result<Vec<TokenSequence>> {
    strategy.validate()?;
    assert_eq!(sources.len(), styles.len());
    for s in sources {
        model.check_sequence(s, 0)?;
    }
    for s in styles.iter().flatten() {
        s.check_dim(model.d_model())?;
    }
    if sources.is_empty() {
        return Ok(Vec::new());
    }
    let (mem, width, lens) = encode_memory(model, sources, styles);
    let out = match *strategy {
        DecodeStrategy::Beam { width: k, length_penalty } => beam_search(model, &mem, width, &lens, k, length_penalty),
        DecodeStrategy::TopP { p, temperature, seed } => top_p(model, &mem, width, &lens, p, temperature, seed),
    };
    if out.iter().flatten().any(|&t| t as usize >= model.config().vocab_size) {
        return Err(Error::Decode { stage: "decode", reason: "produced an out-of-range token".into() });
    }
    Ok(out.into_iter().map(TokenSequence::new).collect())
}

fn beam_search<T: Scalar>(model: &RewriteModel<T>, mem: &Tensor<T>, width: usize, lens: &[usize], k: usize, lp: f64) -> Vec<Vec<u32>> {
    let sp = model.config().special;
    let groups = lens.len();
    let max_len = lens.iter().map(|&l| max_decode_len(model.config().max_seq_len, l)).collect::<Vec<_>>();
    let cap = *max_len.iter().max().unwrap();
    let mut state = DecoderState::new(model, mem, width, lens, k, cap);

    // Only the first beam of each group is live at the start.
    let mut beams: Vec<Hyp> = (0..groups * k)
        .map(|r| Hyp { tokens: Vec::new(), score: if r % k == 0 { 0.0 } else { f64::NEG_INFINITY } })
        .collect();
    let mut finished: Vec<Vec<Hyp>> = vec![Vec::new(); groups];
    let mut done = vec![false; groups];
    let norm = |len: usize, score: f64| score / (len.max(1) as f64).powf(lp);

    for step in 0..cap {
        let inputs: Vec<u32> = beams.iter().map(|h| h.tokens.last().copied().unwrap_or(sp.bos)).collect();
        let logits = state.step(&inputs);
        let mut src = (0..groups * k).collect::<Vec<_>>();
        let mut next = beams.clone();
        for g in 0..groups {
            if done[g] {
                continue;
            }
            let mut cands: Vec<(f64, usize, u32)> = Vec::with_capacity(k * logits.cols());
            for b in 0..k {
                let r = g * k + b;
                if beams[r].score == f64::NEG_INFINITY {
                    continue;
                }
                for (tok, lp_tok) in log_softmax(logits.row(r)).into_iter().enumerate() {
                    cands.push((beams[r].score + lp_tok, b, tok as u32));
                }
            }
            // Descending score; ties broken by beam then token index.
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let last_step = step + 1 >= max_len[g];
            let mut filled = 0;
            for (rank, &(score, b, tok)) in cands.iter().take(2 * k).enumerate() {
                let parent = &beams[g * k + b];
                if tok == sp.eos {
                    if rank < k {
                        let len = parent.tokens.len() + 1;
                        finished[g].push(Hyp { tokens: parent.tokens.clone(), score: norm(len, score) });
                    }
                    continue;
                }
                if filled < k {
                    let mut tokens = parent.tokens.clone();
                    tokens.push(tok);
                    next[g * k + filled] = Hyp { tokens, score };
                    src[g * k + filled] = g * k + b;
                    filled += 1;
                }
            }
            for slot in filled..k {
                next[g * k + slot].score = f64::NEG_INFINITY;
            }
            if finished[g].len() >= k {
                done[g] = true;
            } else if last_step {
                for slot in 0..filled {
                    let h = &next[g * k + slot];
                    finished[g].push(Hyp { tokens: h.tokens.clone(), score: norm(h.tokens.len(), h.score) });
                }
                done[g] = true;
            }
        }
        beams = next;
        if done.iter().all(|&d| d) {
            break;
        }
        state.reorder(&src);
    }
    finished
        .into_iter()
        .map(|hyps| {
            // First-found wins among equal scores.
            let mut best: Option<Hyp> = None;
            for h in hyps {
                if best.as_ref().is_none_or(|b| h.score > b.score) {
                    best = Some(h);
                }
            }
            best.map(|h| h.tokens).unwrap_or_default()
        })
        .collect()
}

/// Samples one token from `logits / temperature` restricted to the
/// smallest set of top tokens whose mass reaches `p`.
pub fn sample_top_p<T: Scalar, R: Rng + ?Sized>(logits: &[T], p: f64, temperature: f64, rng: &mut R) -> u32 {
    let scaled: Vec<f64> = logits.iter().map(|&z| z.as_f64() / temperature).collect();
    let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<(usize, f64)> = scaled.iter().map(|&z| (z - m).exp()).enumerate().collect();
    let z: f64 = probs.iter().map(|x| x.1).sum();
    probs.iter_mut().for_each(|x| x.1 /= z);
    probs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut cum = 0.0;
    let mut keep = 0;
    for &(_, q) in &probs {
        cum += q;
        keep += 1;
        if cum >= p {
            break;
        }
    }
    let nucleus = &probs[..keep];
    let mass: f64 = nucleus.iter().map(|x| x.1).sum();
    let mut u = rng.random::<f64>() * mass;
    for &(tok, q) in nucleus {
        if u < q {
            return tok as u32;
        }
        u -= q;
    }
    nucleus[keep - 1].0 as u32
}

fn top_p<T: Scalar>(model: &RewriteModel<T>, mem: &Tensor<T>, width: usize, lens: &[usize], p: f64, temperature: f64, seed: u64) -> Vec<Vec<u32>> {
    let sp = model.config().special;
    let n = lens.len();
    let max_len: Vec<usize> = lens.iter().map(|&l| max_decode_len(model.config().max_seq_len, l)).collect();
    let cap = *max_len.iter().max().unwrap();
    let mut state = DecoderState::new(model, mem, width, lens, 1, cap);
    let mut rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i as u64);
            r
        })
        .collect();
    let mut out: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut done = vec![false; n];
    for step in 0..cap {
        let inputs: Vec<u32> = out.iter().map(|t| t.last().copied().unwrap_or(sp.bos)).collect();
        let logits = state.step(&inputs);
        for i in 0..n {
            if done[i] {
                continue;
            }
            let tok = sample_top_p(logits.row(i), p, temperature, &mut rngs[i]);
            if tok == sp.eos {
                done[i] = true;
            } else {
                out[i].push(tok);
                if step + 1 >= max_len[i] {
                    done[i] = true;
                }
            }
        }
        if done.iter().all(|&d| d) {
            break;
        }
    }
    out
}

impl<T: Scalar> RewriteModel<T> {
    /// Decodes `x` under style `s`, prepending `language` to the encoder
    /// input when given.
    pub fn decode(&self, x: &TokenSequence, s: &StyleVector<T>, strategy: &DecodeStrategy, language: Option<u32>) -> Result<TokenSequence> {
        let src = match language {
            Some(l) => x.prepend(l),
            None => x.clone(),
        };
        Ok(decode_batch(self, &[src.ids()], &[Some(s)], strategy)?.remove(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn model() -> RewriteModel<f64> {
        let cfg = ModelConfig {
            vocab_size: 20,
            d_model: 16,
            n_layers_enc: 1,
            n_layers_dec: 2,
            n_heads: 2,
            d_ff: 24,
            max_seq_len: 16,
            ..ModelConfig::default()
        };
        RewriteModel::new(cfg, 11).unwrap()
    }

    #[test]
    fn incremental_logits_match_teacher_forcing() {
        let m = model();
        let x = TokenSequence::new(vec![7, 9, 12, 8]);
        let s = StyleVector::new((0..16).map(|i| (i as f64 * 0.3).sin() * 0.2).collect());
        let prefix = TokenSequence::new(vec![10, 11, 13, 7, 2]);
        let tf = m.rewrite_logits(&x, &s, &prefix).unwrap();
        let (mem, w, lens) = encode_memory(&m, &[x.ids()], &[Some(&s)]);
        let mut st = DecoderState::new(&m, &mem, w, &lens, 1, 8);
        let mut prev = m.config().special.bos;
        for i in 0..prefix.len() {
            let l = st.step(&[prev]);
            for (a, b) in l.row(0).iter().zip(tf.row(i)) {
                assert!((a - b).abs() < 1e-10, "position {i}: {a} vs {b}");
            }
            prev = prefix.ids()[i];
        }
    }

    #[test]
    fn strategy_validation() {
        assert!(DecodeStrategy::beam(0).validate().is_err());
        assert!(DecodeStrategy::TopP { p: 0.0, temperature: 1.0, seed: 0 }.validate().is_err());
        assert!(DecodeStrategy::TopP { p: 0.5, temperature: 0.0, seed: 0 }.validate().is_err());
        assert!(DecodeStrategy::TopP { p: 1.0, temperature: 0.7, seed: 0 }.validate().is_ok());
    }

    #[test]
    fn top_p_sampling_is_seeded() {
        let m = model();
        let x = TokenSequence::new(vec![7, 9, 12]);
        let z = StyleVector::zeros(16);
        let strat = DecodeStrategy::TopP { p: 0.9, temperature: 1.0, seed: 5 };
        assert_eq!(m.decode(&x, &z, &strat, None).unwrap(), m.decode(&x, &z, &strat, None).unwrap());
    }

    #[test]
    fn nucleus_keeps_at_least_the_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert_eq!(sample_top_p(&[0.1f64, 3.0, 0.2], 1e-9, 1.0, &mut rng), 1);
        }
    }
}
