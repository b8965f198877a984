//! A deterministic toy bilingual world with marker-based formality.
//!
//! Two languages share a meaning space: language `la` (the transfer
//! language, sentences end in `।`) and `lb` (the pivot, sentences end in
//! `.`). Content words are generated syllable strings; every concept has
//! one pivot word and `synonyms` interchangeable transfer-language words,
//! paired by a seeded lexicon. Every sentence carries a fixed number of
//! marker slots; each slot holds a formal or an informal marker of the
//! sentence's language, and the fraction of formal ones is the sentence's
//! gold style degree. Translation maps content through the lexicon (picking
//! any synonym on the way back) and keeps each marker slot's aligned
//! equivalent with probability `register_transfer`, resampling it otherwise.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::atomic_write;
use crate::error::{Error, Result};
use crate::records::{write_jsonl, write_lines, EvalSentence, ParallelPair, SpanPair};
use crate::vocab::{language_surface, SpecialTokens, Vocabulary};

pub const TRANSFER_LANG: &str = "la";
pub const PIVOT_LANG: &str = "lb";
pub const UNKNOWN_LANG: &str = "unknown";

const LA_PUNCT: &str = "।";
const LB_PUNCT: &str = ".";

const LA_FORMAL: [&str; 8] = ["shri", "ji", "aap", "kripya", "mahoday", "saadar", "dhanyavaad", "shriman"];
const LA_INFORMAL: [&str; 8] = ["yaar", "arre", "tu", "abe", "bhai", "oye", "chal", "haan"];
const LB_FORMAL: [&str; 8] = ["kindly", "sir", "madam", "respectfully", "please", "sincerely", "esteemed", "gracious"];
const LB_INFORMAL: [&str; 8] = ["hey", "dude", "yo", "gonna", "bro", "lol", "yeah", "buddy"];

const LA_CONSONANTS: [char; 10] = ['k', 'g', 'c', 'j', 't', 'd', 'n', 'p', 'b', 'm'];
const LB_CONSONANTS: [char; 10] = ['r', 'l', 's', 'v', 'h', 'f', 'z', 'w', 'x', 'q'];
const VOWELS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyWorldConfig {
    pub seed: u64,
    /// Concepts; each has one pivot word and `synonyms` transfer words.
    pub content_words: usize,
    pub synonyms: usize,
    /// Markers per style per language (at most 8).
    pub markers_per_style: usize,
    /// Marker slots per sentence; this fixes the marker rate.
    pub marker_slots: usize,
    pub min_content: usize,
    pub max_content: usize,
    /// Gold degrees documents are drawn from.
    pub degrees: Vec<f64>,
    /// Documents (hence span pairs) per language.
    pub span_pairs_per_language: usize,
    /// Parallel sentence pairs; each is written in both directions.
    pub parallel_pairs: usize,
    /// Probability that a marker slot of a parallel pair is rendered with
    /// the aligned marker (same style, same index) on the other side
    /// instead of being resampled.
    pub register_transfer: f64,
    /// Unlabelled transfer-language sentences for paraphrase mining.
    pub raw_sentences: usize,
    /// Held-out transfer-language inputs (informal side).
    pub eval_sentences: usize,
    pub exemplars_per_style: usize,
    /// Degrees of the informal and formal exemplar sets.
    pub exemplar_degrees: [f64; 2],
    /// Same-content pairs with different styles, for the style-vector
    /// classifier analysis.
    pub classification_pairs: usize,
    /// Model vocabulary size the generated vocabulary must fit in.
    pub vocab_size: usize,
}

impl Default for ToyWorldConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            content_words: 150,
            synonyms: 2,
            markers_per_style: 8,
            marker_slots: 4,
            min_content: 5,
            max_content: 9,
            degrees: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            span_pairs_per_language: 2500,
            parallel_pairs: 2500,
            register_transfer: 0.5,
            raw_sentences: 2000,
            eval_sentences: 200,
            exemplars_per_style: 5,
            exemplar_degrees: [0.25, 0.75],
            classification_pairs: 200,
            vocab_size: 512,
        }
    }
}

impl ToyWorldConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.to_string()));
        if self.content_words < self.max_content || self.content_words == 0 {
            return err("content_words must be positive and at least max_content");
        }
        if self.synonyms == 0 || self.synonyms > 4 {
            return err("synonyms must lie in 1..=4");
        }
        if self.content_words * self.synonyms > LA_CONSONANTS.len().pow(3) * VOWELS.len().pow(3) / 2 {
            return err("content_words is too large for the syllable inventory");
        }
        if self.markers_per_style == 0 || self.markers_per_style > LA_FORMAL.len() {
            return err("markers_per_style must lie in 1..=8");
        }
        if self.marker_slots == 0 {
            return err("marker_slots must be positive");
        }
        if self.min_content == 0 || self.min_content > self.max_content {
            return err("content length range is empty");
        }
        if self.degrees.is_empty() || self.degrees.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return err("degrees must be a non-empty list within [0, 1]");
        }
        if !self.degrees.iter().any(|&d| d < 0.5) || !self.degrees.iter().any(|&d| d > 0.5) {
            return err("degrees must include values on both sides of 0.5");
        }
        if !(0.0..=1.0).contains(&self.register_transfer) {
            return err("register_transfer must lie in [0, 1]");
        }
        if self.exemplars_per_style == 0 || self.exemplars_per_style > 10 {
            return err("exemplars_per_style must lie in 1..=10");
        }
        let [lo, hi] = self.exemplar_degrees;
        if !(0.0..0.5).contains(&lo) || !(hi > 0.5 && hi <= 1.0) {
            return err("exemplar_degrees must be [low, high] with low < 0.5 < high, within [0, 1]");
        }
        let needed = 9 + (1 + self.synonyms) * self.content_words + 4 * self.markers_per_style;
        if needed > self.vocab_size {
            return Err(Error::Config(format!("toy vocabulary needs {needed} ids but vocab_size is {}", self.vocab_size)));
        }
        if self.max_content + self.marker_slots + 2 > 64 {
            return err("sentences would exceed 62 tokens");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Lang {
    A,
    B,
}

impl Lang {
    fn code(self) -> &'static str {
        match self {
            Lang::A => TRANSFER_LANG,
            Lang::B => PIVOT_LANG,
        }
    }

    fn punct(self) -> &'static str {
        match self {
            Lang::A => LA_PUNCT,
            Lang::B => LB_PUNCT,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum TokenClass {
    /// Content word; carries its canonical (transfer-language) index.
    Content(Lang, usize),
    Marker(Lang, bool),
    Punct,
}

/// Content and marker layout of a sentence, before surface rendering.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Skeleton {
    /// Canonical content indices in order.
    pub content: Vec<usize>,
    /// Transfer-language synonym chosen for each content word.
    pub variants: Vec<usize>,
    /// Positions (in the rendered token list, before punctuation) of the
    /// marker slots.
    pub marker_positions: Vec<usize>,
}

/// The generated world: word lists, lexicon and token classes.
#[derive(Clone, Debug)]
pub struct ToyWorld {
    cfg: ToyWorldConfig,
    content: [Vec<String>; 2],
    /// `lexicon[i]` is the index in the pivot list of canonical word `i`.
    lexicon: Vec<usize>,
    markers: [[Vec<String>; 2]; 2],
    classes: HashMap<String, TokenClass>,
    vocab: Vocabulary,
}

fn gen_words(rng: &mut ChaCha8Rng, consonants: &[char], n: usize, taken: &HashSet<String>) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = if rng.random_bool(0.5) { 2 } else { 3 };
        let w: String = (0..syllables)
            .flat_map(|_| [*consonants.choose(rng).unwrap(), *VOWELS.choose(rng).unwrap()])
            .collect();
        if !taken.contains(&w) && seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn li(l: Lang) -> usize {
    match l {
        Lang::A => 0,
        Lang::B => 1,
    }
}

impl ToyWorld {
    pub fn new(cfg: ToyWorldConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let m = cfg.markers_per_style;
        let markers: [[Vec<String>; 2]; 2] = [
            [LA_INFORMAL[..m].iter().map(|s| s.to_string()).collect(), LA_FORMAL[..m].iter().map(|s| s.to_string()).collect()],
            [LB_INFORMAL[..m].iter().map(|s| s.to_string()).collect(), LB_FORMAL[..m].iter().map(|s| s.to_string()).collect()],
        ];
        let taken: HashSet<String> = markers.iter().flatten().flatten().cloned().collect();
        let la = gen_words(&mut rng, &LA_CONSONANTS, cfg.content_words * cfg.synonyms, &taken);
        let lb = gen_words(&mut rng, &LB_CONSONANTS, cfg.content_words, &taken);
        let mut lexicon: Vec<usize> = (0..cfg.content_words).collect();
        lexicon.shuffle(&mut rng);

        let mut classes = HashMap::new();
        for (i, w) in la.iter().enumerate() {
            classes.insert(w.clone(), TokenClass::Content(Lang::A, i / cfg.synonyms));
        }
        let mut inverse = vec![0; cfg.content_words];
        for (i, &j) in lexicon.iter().enumerate() {
            inverse[j] = i;
        }
        for (j, w) in lb.iter().enumerate() {
            classes.insert(w.clone(), TokenClass::Content(Lang::B, inverse[j]));
        }
        for lang in [Lang::A, Lang::B] {
            for formal in [false, true] {
                for w in &markers[li(lang)][formal as usize] {
                    classes.insert(w.clone(), TokenClass::Marker(lang, formal));
                }
            }
        }
        classes.insert(LA_PUNCT.to_string(), TokenClass::Punct);
        classes.insert(LB_PUNCT.to_string(), TokenClass::Punct);

        let mut tokens: Vec<String> = SpecialTokens::SURFACE.iter().map(|s| s.to_string()).collect();
        tokens.push(language_surface(TRANSFER_LANG));
        tokens.push(language_surface(PIVOT_LANG));
        tokens.push(LA_PUNCT.into());
        tokens.push(LB_PUNCT.into());
        tokens.extend(la.iter().cloned());
        tokens.extend(lb.iter().cloned());
        for lang in &markers {
            for set in lang.iter().rev() {
                tokens.extend(set.iter().cloned());
            }
        }
        let vocab = Vocabulary::new(tokens, SpecialTokens::default().unk)?;
        Ok(Self { cfg, content: [la, lb], lexicon, markers, classes, vocab })
    }

    pub fn config(&self) -> &ToyWorldConfig {
        &self.cfg
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn word(&self, lang: Lang, canon: usize, variant: usize) -> &str {
        match lang {
            Lang::A => &self.content[0][canon * self.cfg.synonyms + variant],
            Lang::B => &self.content[1][self.lexicon[canon]],
        }
    }

    /// Maps a transfer-language content word to its pivot translation.
    pub fn translate_word(&self, la_word: &str) -> Option<&str> {
        match self.classes.get(la_word) {
            Some(TokenClass::Content(Lang::A, i)) => Some(self.word(Lang::B, *i, 0)),
            _ => None,
        }
    }

    pub fn formal_markers(&self, lang: &str) -> Option<&[String]> {
        self.lang(lang).map(|l| self.markers[li(l)][1].as_slice())
    }

    pub fn informal_markers(&self, lang: &str) -> Option<&[String]> {
        self.lang(lang).map(|l| self.markers[li(l)][0].as_slice())
    }

    fn lang(&self, code: &str) -> Option<Lang> {
        match code {
            TRANSFER_LANG => Some(Lang::A),
            PIVOT_LANG => Some(Lang::B),
            _ => None,
        }
    }

    /// Random content and marker layout.
    pub fn skeleton<R: Rng + ?Sized>(&self, rng: &mut R) -> Skeleton {
        let n = rng.random_range(self.cfg.min_content..=self.cfg.max_content);
        let content = rand::seq::index::sample(rng, self.cfg.content_words, n).into_vec();
        let total = n + self.cfg.marker_slots;
        let mut marker_positions = rand::seq::index::sample(rng, total, self.cfg.marker_slots).into_vec();
        marker_positions.sort_unstable();
        let variants = (0..n).map(|_| rng.random_range(0..self.cfg.synonyms)).collect();
        Skeleton { content, variants, marker_positions }
    }

    /// `(formal, marker index)` per slot, with exactly
    /// `round(degree * slots)` formal slots.
    fn marker_layout<R: Rng + ?Sized>(&self, sk: &Skeleton, degree: f64, rng: &mut R) -> Vec<(bool, usize)> {
        let slots = sk.marker_positions.len();
        let n_formal = (degree * slots as f64).round() as usize;
        let mut formal = vec![false; slots];
        for i in rand::seq::index::sample(rng, slots, n_formal.min(slots)) {
            formal[i] = true;
        }
        formal.into_iter().map(|f| (f, rng.random_range(0..self.cfg.markers_per_style))).collect()
    }

    /// Renders a skeleton with exactly `round(degree * slots)` formal
    /// markers at random slots.
    pub fn render<R: Rng + ?Sized>(&self, lang_code: &str, sk: &Skeleton, degree: f64, rng: &mut R) -> Result<String> {
        let layout = self.marker_layout(sk, degree, rng);
        self.render_layout(lang_code, sk, &layout)
    }

    /// Renders a translation pair: each marker slot on the second side keeps
    /// the first side's aligned marker with probability `register_transfer`.
    fn render_parallel<R: Rng + ?Sized>(&self, sk: &Skeleton, da: f64, db: f64, rng: &mut R) -> Result<(String, String)> {
        let la = self.marker_layout(sk, da, rng);
        let mut lb = self.marker_layout(sk, db, rng);
        for (b, a) in lb.iter_mut().zip(&la) {
            if rng.random_bool(self.cfg.register_transfer) {
                *b = *a;
            }
        }
        Ok((self.render_layout(TRANSFER_LANG, sk, &la)?, self.render_layout(PIVOT_LANG, sk, &lb)?))
    }

    fn render_layout(&self, lang_code: &str, sk: &Skeleton, layout: &[(bool, usize)]) -> Result<String> {
        let lang = self.lang(lang_code).ok_or_else(|| Error::UnknownLanguage(lang_code.to_string()))?;
        let slots = sk.marker_positions.len();
        let total = sk.content.len() + slots;
        let mut words = Vec::with_capacity(total + 1);
        let (mut ci, mut mi) = (0, 0);
        for pos in 0..total {
            if mi < slots && sk.marker_positions[mi] == pos {
                let (formal, k) = layout[mi];
                words.push(self.markers[li(lang)][formal as usize][k].as_str());
                mi += 1;
            } else {
                words.push(self.word(lang, sk.content[ci], sk.variants[ci]));
                ci += 1;
            }
        }
        words.push(lang.punct());
        Ok(words.join(" "))
    }

    /// Fraction of marker tokens that are formal; 0.5 with no markers.
    pub fn style_score(&self, sentence: &str) -> f64 {
        let (mut formal, mut total) = (0usize, 0usize);
        for w in sentence.split_whitespace() {
            if let Some(TokenClass::Marker(_, f)) = self.classes.get(w) {
                total += 1;
                formal += *f as usize;
            }
        }
        if total == 0 {
            0.5
        } else {
            formal as f64 / total as f64
        }
    }

    fn canonical_content(&self, sentence: &str) -> HashSet<usize> {
        sentence
            .split_whitespace()
            .filter_map(|w| match self.classes.get(w) {
                Some(TokenClass::Content(_, i)) => Some(*i),
                _ => None,
            })
            .collect()
    }

    /// Jaccard overlap of canonical content sets (markers, punctuation and
    /// unknown words ignored). Two content-free sentences score 1.
    pub fn similarity(&self, a: &str, b: &str) -> f64 {
        let (sa, sb) = (self.canonical_content(a), self.canonical_content(b));
        let union = sa.union(&sb).count();
        if union == 0 {
            return 1.0;
        }
        sa.intersection(&sb).count() as f64 / union as f64
    }

    /// Majority language of the content words; `unknown` on no content or
    /// a tie.
    pub fn langid(&self, sentence: &str) -> &'static str {
        let (mut a, mut b) = (0usize, 0usize);
        for w in sentence.split_whitespace() {
            match self.classes.get(w) {
                Some(TokenClass::Content(Lang::A, _)) => a += 1,
                Some(TokenClass::Content(Lang::B, _)) => b += 1,
                _ => {}
            }
        }
        match a.cmp(&b) {
            std::cmp::Ordering::Greater => TRANSFER_LANG,
            std::cmp::Ordering::Less => PIVOT_LANG,
            std::cmp::Ordering::Equal => UNKNOWN_LANG,
        }
    }

    /// Content words of `sentence` mapped to canonical indices, in order.
    pub fn content_sequence(&self, sentence: &str) -> Vec<usize> {
        sentence
            .split_whitespace()
            .filter_map(|w| match self.classes.get(w) {
                Some(TokenClass::Content(_, i)) => Some(*i),
                _ => None,
            })
            .collect()
    }

    /// Replaces every informal marker with a formal one of the same
    /// language (chosen by position, deterministically).
    pub fn formalize(&self, sentence: &str) -> String {
        sentence
            .split_whitespace()
            .enumerate()
            .map(|(i, w)| match self.classes.get(w) {
                Some(TokenClass::Marker(l, false)) => {
                    let set = &self.markers[li(*l)][1];
                    set[i % set.len()].clone()
                }
                _ => w.to_string(),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// A labelled pair for the style-vector classifier analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StylePair {
    pub first: String,
    pub second: String,
    /// `"first"` or `"second"`: which one is more formal.
    pub gold: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExemplarFile {
    pub formal: Vec<String>,
    pub informal: Vec<String>,
}

/// A span pair together with the gold degree of its document.
#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub pair: SpanPair,
    pub degree: f64,
}

/// Everything [`generate`] produces, in memory.
#[derive(Clone, Debug)]
pub struct ToyCorpus {
    pub documents: Vec<Document>,
    pub parallel: Vec<ParallelPair>,
    pub raw: Vec<String>,
    pub eval: Vec<EvalSentence>,
    pub exemplars: ExemplarFile,
    pub pairs: Vec<StylePair>,
}

impl ToyCorpus {
    pub fn span_pairs(&self) -> Vec<SpanPair> {
        self.documents.iter().map(|d| d.pair.clone()).collect()
    }
}

fn sub_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Generates the whole corpus deterministically from the world's seed.
pub fn generate(world: &ToyWorld) -> Result<ToyCorpus> {
    let cfg = world.config();
    let seed = cfg.seed;

    let mut documents = Vec::with_capacity(2 * cfg.span_pairs_per_language);
    for (s, lang) in [(1u64, Lang::A), (2, Lang::B)] {
        let mut rng = sub_rng(seed, s);
        for _ in 0..cfg.span_pairs_per_language {
            let degree = *cfg.degrees.choose(&mut rng).unwrap();
            let a = world.skeleton(&mut rng);
            let b = world.skeleton(&mut rng);
            let x1 = world.render(lang.code(), &a, degree, &mut rng)?;
            let x2 = world.render(lang.code(), &b, degree, &mut rng)?;
            documents.push(Document { pair: SpanPair { x1, x2, lang: Some(lang.code().into()) }, degree });
        }
    }

    let mut parallel = Vec::with_capacity(2 * cfg.parallel_pairs);
    let mut rng = sub_rng(seed, 3);
    for _ in 0..cfg.parallel_pairs {
        let sk = world.skeleton(&mut rng);
        let da = *cfg.degrees.choose(&mut rng).unwrap();
        let db = *cfg.degrees.choose(&mut rng).unwrap();
        let (a, b) = world.render_parallel(&sk, da, db, &mut rng)?;
        parallel.push(ParallelPair { src: a.clone(), tgt: b.clone(), src_lang: TRANSFER_LANG.into(), tgt_lang: PIVOT_LANG.into() });
        parallel.push(ParallelPair { src: b, tgt: a, src_lang: PIVOT_LANG.into(), tgt_lang: TRANSFER_LANG.into() });
    }

    let mut rng = sub_rng(seed, 4);
    let raw = (0..cfg.raw_sentences)
        .map(|_| {
            let sk = world.skeleton(&mut rng);
            let d = *cfg.degrees.choose(&mut rng).unwrap();
            world.render(TRANSFER_LANG, &sk, d, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    let low: Vec<f64> = cfg.degrees.iter().copied().filter(|&d| d < 0.5).collect();
    let high: Vec<f64> = cfg.degrees.iter().copied().filter(|&d| d > 0.5).collect();
    let mut rng = sub_rng(seed, 5);
    let eval = (0..cfg.eval_sentences)
        .map(|_| {
            let sk = world.skeleton(&mut rng);
            let d = *low.choose(&mut rng).unwrap();
            Ok(EvalSentence { text: world.render(TRANSFER_LANG, &sk, d, &mut rng)?, lang: TRANSFER_LANG.into(), degree: d })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rng = sub_rng(seed, 6);
    let [lo, hi] = cfg.exemplar_degrees;
    let mut exemplars = ExemplarFile { formal: Vec::new(), informal: Vec::new() };
    for _ in 0..cfg.exemplars_per_style {
        let sk = world.skeleton(&mut rng);
        exemplars.formal.push(world.render(TRANSFER_LANG, &sk, hi, &mut rng)?);
        let sk = world.skeleton(&mut rng);
        exemplars.informal.push(world.render(TRANSFER_LANG, &sk, lo, &mut rng)?);
    }

    let mut rng = sub_rng(seed, 7);
    let mut pairs = Vec::with_capacity(cfg.classification_pairs);
    for _ in 0..cfg.classification_pairs {
        let sk = world.skeleton(&mut rng);
        let informal = world.render(TRANSFER_LANG, &sk, *low.choose(&mut rng).unwrap(), &mut rng)?;
        let formal = world.render(TRANSFER_LANG, &sk, *high.choose(&mut rng).unwrap(), &mut rng)?;
        if rng.random_bool(0.5) {
            pairs.push(StylePair { first: formal, second: informal, gold: "first".into() });
        } else {
            pairs.push(StylePair { first: informal, second: formal, gold: "second".into() });
        }
    }

    Ok(ToyCorpus { documents, parallel, raw, eval, exemplars, pairs })
}

/// File names written by [`write_corpus`], relative to the output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusFiles {
    pub spans: PathBuf,
    pub parallel: PathBuf,
    pub raw: PathBuf,
    pub eval: PathBuf,
    pub exemplars: PathBuf,
    pub pairs: PathBuf,
    pub vocab: PathBuf,
}

impl Default for CorpusFiles {
    fn default() -> Self {
        Self {
            spans: "spans.jsonl".into(),
            parallel: "parallel.jsonl".into(),
            raw: "raw.txt".into(),
            eval: "eval.jsonl".into(),
            exemplars: "exemplars.json".into(),
            pairs: "style_pairs.jsonl".into(),
            vocab: "vocab.txt".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ToyWorldConfig,
    pub files: CorpusFiles,
    pub counts: HashMap<String, usize>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Generates the corpus and writes every file plus `manifest.json` into
/// `dir`.
pub fn write_corpus(cfg: &ToyWorldConfig, dir: &Path) -> Result<Manifest> {
    let world = ToyWorld::new(cfg.clone())?;
    let corpus = generate(&world)?;
    std::fs::create_dir_all(dir)?;
    let files = CorpusFiles::default();
    write_jsonl(&dir.join(&files.spans), &corpus.span_pairs())?;
    write_jsonl(&dir.join(&files.parallel), &corpus.parallel)?;
    write_lines(&dir.join(&files.raw), &corpus.raw)?;
    write_jsonl(&dir.join(&files.eval), &corpus.eval)?;
    let ex = serde_json::to_vec_pretty(&corpus.exemplars)?;
    atomic_write(&dir.join(&files.exemplars), |w| std::io::Write::write_all(w, &ex))?;
    write_jsonl(&dir.join(&files.pairs), &corpus.pairs)?;
    write_lines(&dir.join(&files.vocab), world.vocabulary().tokens())?;
    let counts = HashMap::from([
        ("span_pairs".to_string(), corpus.documents.len()),
        ("parallel".to_string(), corpus.parallel.len()),
        ("raw".to_string(), corpus.raw.len()),
        ("eval".to_string(), corpus.eval.len()),
        ("style_pairs".to_string(), corpus.pairs.len()),
        ("vocab".to_string(), world.vocabulary().len()),
    ]);
    let manifest = Manifest { config: cfg.clone(), files, counts };
    let text = serde_json::to_vec_pretty(&manifest)?;
    atomic_write(&dir.join("manifest.json"), |w| std::io::Write::write_all(w, &text))?;
    Ok(manifest)
}
