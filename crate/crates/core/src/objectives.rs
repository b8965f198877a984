//! Training losses: denoising, supervised translation, style-controlled
//! backtranslation, and the paraphrase-difference objective, plus the
//! equal-count multitask schedule.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::decode::{decode_batch, DecodeStrategy};
use crate::error::{Error, Result};
use crate::model::RewriteModel;
use crate::scalar::Scalar;
use crate::style::StyleVector;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Denoise,
    Translate,
    Backtranslate,
    Diffur,
}

impl Objective {
    pub const ALL: [Objective; 4] = [Objective::Denoise, Objective::Translate, Objective::Backtranslate, Objective::Diffur];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Denoise => "denoise",
            Objective::Translate => "translate",
            Objective::Backtranslate => "backtranslate",
            Objective::Diffur => "diffur",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown objective `{s}`")))
    }
}

/// What corrupts the input of the paraphrase-difference objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Mined paraphrases.
    #[default]
    Paraphrase,
    /// Random token dropping and replacement applied to `x`.
    Token,
}

/// Which style vector conditions the paraphrase-difference objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleConditioning {
    /// `f_style(x) - f_style(x_para)`.
    #[default]
    Difference,
    /// `f_style(x)` alone.
    Target,
}

impl FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paraphrase" => Ok(Self::Paraphrase),
            "token" => Ok(Self::Token),
            _ => Err(Error::Config(format!("unknown noise mode `{s}` (expected token|paraphrase)"))),
        }
    }
}

impl FromStr for StyleConditioning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "difference" => Ok(Self::Difference),
            "target" => Ok(Self::Target),
            _ => Err(Error::Config(format!("unknown style conditioning `{s}` (expected difference|target)"))),
        }
    }
}

/// One minibatch for one objective. Sequences are token ids without
/// reserved prefixes; language fields hold language-code token ids.
#[derive(Clone, Debug, PartialEq)]
pub enum TrainingBatch {
    Denoise { x1: Vec<Vec<u32>>, x2: Vec<Vec<u32>>, x2_noised: Vec<Vec<u32>>, lang: Vec<u32> },
    Translate { src: Vec<Vec<u32>>, tgt: Vec<Vec<u32>>, tgt_lang: Vec<u32> },
    Backtranslate { x1: Vec<Vec<u32>>, x2: Vec<Vec<u32>>, lang: Vec<u32>, pivot_lang: u32 },
    Diffur { x: Vec<Vec<u32>>, x_para: Vec<Vec<u32>>, lang: Vec<u32> },
}

impl TrainingBatch {
    pub fn objective(&self) -> Objective {
        match self {
            TrainingBatch::Denoise { .. } => Objective::Denoise,
            TrainingBatch::Translate { .. } => Objective::Translate,
            TrainingBatch::Backtranslate { .. } => Objective::Backtranslate,
            TrainingBatch::Diffur { .. } => Objective::Diffur,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TrainingBatch::Denoise { x1, .. } | TrainingBatch::Backtranslate { x1, .. } => x1.len(),
            TrainingBatch::Translate { src, .. } => src.len(),
            TrainingBatch::Diffur { x, .. } => x.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks that every field the objective needs is present, aligned and
    /// non-empty.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::InvalidInput(format!("empty {} batch", self.objective())));
        }
        let (lists, langs): (Vec<&Vec<Vec<u32>>>, &Vec<u32>) = match self {
            TrainingBatch::Denoise { x1, x2, x2_noised, lang } => (vec![x1, x2, x2_noised], lang),
            TrainingBatch::Translate { src, tgt, tgt_lang } => (vec![src, tgt], tgt_lang),
            TrainingBatch::Backtranslate { x1, x2, lang, .. } => (vec![x1, x2], lang),
            TrainingBatch::Diffur { x, x_para, lang } => (vec![x, x_para], lang),
        };
        if langs.len() != n {
            return Err(Error::InvalidInput(format!("{} batch language list is misaligned", self.objective())));
        }
        for l in lists {
            if l.len() != n {
                return Err(Error::InvalidInput(format!("{} batch fields have different lengths", self.objective())));
            }
            if l.iter().any(Vec::is_empty) {
                return Err(Error::InvalidInput(format!("{} batch contains an empty sequence", self.objective())));
            }
        }
        Ok(())
    }
}

fn refs(v: &[Vec<u32>]) -> Vec<&[u32]> {
    v.iter().map(Vec::as_slice).collect()
}

fn prefixed(prefix: &[u32], v: &[Vec<u32>]) -> Vec<Vec<u32>> {
    v.iter().zip(prefix).map(|(s, &p)| std::iter::once(p).chain(s.iter().copied()).collect()).collect()
}

/// `CE(f_ur(lx ⊕ noise(x2), f_style(x1)), x2)`; the style path stays live.
pub fn loss_denoise<T: Scalar>(model: &RewriteModel<T>, tape: &mut Tape<'_, T>, x1: &[Vec<u32>], x2_noised: &[Vec<u32>], x2: &[Vec<u32>], lang: &[u32]) -> Var {
    let style = model.style_rows(tape, &refs(x1));
    let inputs = prefixed(lang, x2_noised);
    model.seq2seq_loss(tape, &refs(&inputs), Some(style), &refs(x2))
}

/// `CE(f_ur(ly ⊕ x, style), y)` with `style` defaulting to the zero vector.
pub fn loss_translate_with<T: Scalar>(
    model: &RewriteModel<T>,
    tape: &mut Tape<'_, T>,
    src: &[Vec<u32>],
    tgt: &[Vec<u32>],
    tgt_lang: &[u32],
    style: Option<&StyleVector<T>>,
) -> Var {
    let d = model.d_model();
    let mut s = Tensor::zeros(src.len(), d);
    if let Some(sv) = style {
        for b in 0..src.len() {
            s.row_mut(b).copy_from_slice(sv.values());
        }
    }
    let s = tape.constant(s);
    let inputs = prefixed(tgt_lang, src);
    model.seq2seq_loss(tape, &refs(&inputs), Some(s), &refs(tgt))
}

/// Supervised translation with the mandatory zero style vector.
pub fn loss_translate<T: Scalar>(model: &RewriteModel<T>, tape: &mut Tape<'_, T>, src: &[Vec<u32>], tgt: &[Vec<u32>], tgt_lang: &[u32]) -> Var {
    loss_translate_with(model, tape, src, tgt, tgt_lang, None)
}

/// The data side of a backtranslation step: pivots decoded greedily under
/// `-f_style(x1)`, with the style arguments of both passes recorded.
#[derive(Clone, Debug)]
pub struct BacktranslationPlan<T> {
    /// Style used for the pivot decode, per pair.
    pub pivot_styles: Vec<StyleVector<T>>,
    /// Value of the style used in the second pass, per pair.
    pub return_styles: Vec<StyleVector<T>>,
    /// Decoded pivot per pair; `None` when the decode came back empty.
    pub pivots: Vec<Option<Vec<u32>>>,
}

impl<T> BacktranslationPlan<T> {
    pub fn skipped(&self) -> usize {
        self.pivots.iter().filter(|p| p.is_none()).count()
    }
}

/// Step one of backtranslation (no gradient): `x2_pivot = f_ur(pivot ⊕ x2, -f_style(x1))`.
pub fn plan_backtranslation<T: Scalar>(model: &RewriteModel<T>, x1: &[Vec<u32>], x2: &[Vec<u32>], pivot_lang: u32) -> Result<BacktranslationPlan<T>> {
    let seqs: Vec<crate::vocab::TokenSequence> = x1.iter().map(|s| s.clone().into()).collect();
    let return_styles = model.extract_styles(&seqs)?;
    let pivot_styles: Vec<StyleVector<T>> = return_styles.iter().map(StyleVector::neg).collect();
    let sources = prefixed(&vec![pivot_lang; x2.len()], x2);
    let style_refs: Vec<Option<&StyleVector<T>>> = pivot_styles.iter().map(Some).collect();
    let decoded = decode_batch(model, &refs(&sources), &style_refs, &DecodeStrategy::greedy())?;
    let max = model.config().max_seq_len - 1;
    let pivots = decoded
        .into_iter()
        .map(|p| {
            let mut ids = p.into_ids();
            ids.truncate(max);
            (!ids.is_empty()).then_some(ids)
        })
        .collect();
    Ok(BacktranslationPlan { pivot_styles, return_styles, pivots })
}

/// Step two: `CE(f_ur(lx ⊕ x2_pivot, f_style(x1)), x2)` over the pairs whose
/// pivot is non-empty. Returns `None` when every pivot was empty.
pub fn loss_backtranslate_planned<T: Scalar>(
    model: &RewriteModel<T>,
    tape: &mut Tape<'_, T>,
    plan: &BacktranslationPlan<T>,
    x1: &[Vec<u32>],
    x2: &[Vec<u32>],
    lang: &[u32],
) -> Option<Var> {
    let keep: Vec<usize> = (0..x1.len()).filter(|&i| plan.pivots[i].is_some()).collect();
    if keep.is_empty() {
        return None;
    }
    let x1k: Vec<Vec<u32>> = keep.iter().map(|&i| x1[i].clone()).collect();
    let x2k: Vec<Vec<u32>> = keep.iter().map(|&i| x2[i].clone()).collect();
    let src: Vec<Vec<u32>> = keep
        .iter()
        .map(|&i| std::iter::once(lang[i]).chain(plan.pivots[i].as_ref().unwrap().iter().copied()).collect())
        .collect();
    let style = model.style_rows(tape, &refs(&x1k));
    Some(model.seq2seq_loss(tape, &refs(&src), Some(style), &refs(&x2k)))
}

/// Style-controlled backtranslation loss; returns the loss (if any pair
/// survived) and the number of skipped pairs.
pub fn loss_backtranslate<T: Scalar>(
    model: &RewriteModel<T>,
    tape: &mut Tape<'_, T>,
    x1: &[Vec<u32>],
    x2: &[Vec<u32>],
    lang: &[u32],
    pivot_lang: u32,
) -> Result<(Option<Var>, usize)> {
    let plan = plan_backtranslation(model, x1, x2, pivot_lang)?;
    let loss = loss_backtranslate_planned(model, tape, &plan, x1, x2, lang);
    Ok((loss, plan.skipped()))
}

/// `CE(f_ur(lx ⊕ x_para, stop_grad(s)), x)` with `s = f_style(x) - f_style(x_para)`
/// (or `f_style(x)` under [`StyleConditioning::Target`]).
pub fn loss_diffur<T: Scalar>(
    model: &RewriteModel<T>,
    tape: &mut Tape<'_, T>,
    x: &[Vec<u32>],
    x_para: &[Vec<u32>],
    lang: &[u32],
    conditioning: StyleConditioning,
) -> Var {
    let n = x.len();
    let s = match conditioning {
        StyleConditioning::Difference => {
            let mut both = refs(x);
            both.extend(refs(x_para));
            let rows = model.style_rows(tape, &both);
            let a = tape.gather_rows(rows, &(0..n).collect::<Vec<_>>());
            let b = tape.gather_rows(rows, &(n..2 * n).collect::<Vec<_>>());
            tape.sub(a, b)
        }
        StyleConditioning::Target => model.style_rows(tape, &refs(x)),
    };
    let s = tape.detach(s);
    let inputs = prefixed(lang, x_para);
    model.seq2seq_loss(tape, &refs(&inputs), Some(s), &refs(x))
}

/// The same objective with the conditioning vectors supplied as plain
/// constants (`[B, d]`), bypassing the style extractor entirely.
pub fn loss_diffur_with_constant<T: Scalar>(model: &RewriteModel<T>, tape: &mut Tape<'_, T>, x: &[Vec<u32>], x_para: &[Vec<u32>], lang: &[u32], s: Tensor<T>) -> Var {
    let s = tape.constant(s);
    let inputs = prefixed(lang, x_para);
    model.seq2seq_loss(tape, &refs(&inputs), Some(s), &refs(x))
}

/// Result of one objective on one batch.
pub struct BatchLoss {
    pub loss: Option<Var>,
    pub skipped: usize,
}

/// Builds the loss for any batch.
pub fn batch_loss<T: Scalar>(model: &RewriteModel<T>, tape: &mut Tape<'_, T>, batch: &TrainingBatch, conditioning: StyleConditioning) -> Result<BatchLoss> {
    batch.validate()?;
    Ok(match batch {
        TrainingBatch::Denoise { x1, x2, x2_noised, lang } => BatchLoss { loss: Some(loss_denoise(model, tape, x1, x2_noised, x2, lang)), skipped: 0 },
        TrainingBatch::Translate { src, tgt, tgt_lang } => BatchLoss { loss: Some(loss_translate(model, tape, src, tgt, tgt_lang)), skipped: 0 },
        TrainingBatch::Backtranslate { x1, x2, lang, pivot_lang } => {
            let (loss, skipped) = loss_backtranslate(model, tape, x1, x2, lang, *pivot_lang)?;
            BatchLoss { loss, skipped }
        }
        TrainingBatch::Diffur { x, x_para, lang } => BatchLoss { loss: Some(loss_diffur(model, tape, x, x_para, lang, conditioning)), skipped: 0 },
    })
}

/// An ordered cycle of objectives, each appearing the same number of times.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultitaskSchedule {
    cycle: Vec<Objective>,
    pub seed: u64,
}

impl MultitaskSchedule {
    /// One slot per objective, in the given order; duplicates rejected.
    pub fn new(objectives: &[Objective], seed: u64) -> Result<Self> {
        if objectives.is_empty() {
            return Err(Error::Config("the schedule needs at least one objective".into()));
        }
        for (i, o) in objectives.iter().enumerate() {
            if objectives[..i].contains(o) {
                return Err(Error::Config(format!("objective `{o}` listed twice")));
            }
        }
        Ok(Self { cycle: objectives.to_vec(), seed })
    }

    pub fn cycle(&self) -> &[Objective] {
        &self.cycle
    }

    pub fn contains(&self, o: Objective) -> bool {
        self.cycle.contains(&o)
    }

    /// Objective for global step `step`.
    pub fn objective_at(&self, step: u64) -> Objective {
        self.cycle[(step % self.cycle.len() as u64) as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_cycles_in_order() {
        let s = MultitaskSchedule::new(&[Objective::Denoise, Objective::Diffur], 0).unwrap();
        let got: Vec<_> = (0..4).map(|i| s.objective_at(i)).collect();
        assert_eq!(got, vec![Objective::Denoise, Objective::Diffur, Objective::Denoise, Objective::Diffur]);
        assert!(MultitaskSchedule::new(&[Objective::Denoise, Objective::Denoise], 0).is_err());
        assert!(MultitaskSchedule::new(&[], 0).is_err());
    }

    #[test]
    fn objective_names_round_trip() {
        for o in Objective::ALL {
            assert_eq!(o.name().parse::<Objective>().unwrap(), o);
        }
        assert!("bogus".parse::<Objective>().is_err());
    }

    #[test]
    fn batch_validation() {
        let b = TrainingBatch::Diffur { x: vec![vec![7]], x_para: vec![], lang: vec![5] };
        assert!(b.validate().is_err());
        let b = TrainingBatch::Translate { src: vec![vec![7]], tgt: vec![vec![8]], tgt_lang: vec![5] };
        assert!(b.validate().is_ok());
    }
}
