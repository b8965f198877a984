//! The training loop: configuration, tokenized data sources, batch
//! sampling, optimizer steps, periodic checkpoints and resumption.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, RewriteModel};
use crate::noise::{token_noise, NoiseConfig};
use crate::objectives::{batch_loss, MultitaskSchedule, NoiseMode, Objective, StyleConditioning, TrainingBatch};
use crate::optim::{Adam, AdamConfig};
use crate::records::{read_jsonl, read_lines, ParallelPair, ParaphrasePair, SpanPair};
use crate::scalar::Scalar;
use crate::vocab::{language_surface, Vocabulary};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub vocab: Option<PathBuf>,
    pub spans: Option<PathBuf>,
    pub parallel: Option<PathBuf>,
    pub paraphrases: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    /// Number of schedule cycles; each cycle is one step per objective.
    pub cycles: u64,
    pub batch_size: usize,
    pub objectives: Vec<Objective>,
    pub noise_mode: NoiseMode,
    pub style_conditioning: StyleConditioning,
    pub pivot_language: String,
    /// Language assumed for span pairs that do not name one.
    pub default_language: String,
    pub checkpoint: PathBuf,
    /// Start from this model (for example a trained baseline) instead of a
    /// fresh initialization.
    pub init_checkpoint: Option<PathBuf>,
    /// Save every this many cycles (0: only at the end).
    pub checkpoint_every: u64,
    /// Per-cycle loss log (JSONL, appended).
    pub log: Option<PathBuf>,
    pub data: DataPaths,
    pub noise: NoiseConfig,
    pub optimizer: AdamConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            cycles: 1000,
            batch_size: 32,
            objectives: vec![Objective::Denoise],
            noise_mode: NoiseMode::Paraphrase,
            style_conditioning: StyleConditioning::Difference,
            pivot_language: "lb".into(),
            default_language: "la".into(),
            checkpoint: "model.ckpt".into(),
            init_checkpoint: None,
            checkpoint_every: 0,
            log: None,
            data: DataPaths::default(),
            noise: NoiseConfig::default(),
            optimizer: AdamConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl TrainConfig {
    /// Parses a TOML config; relative paths resolve against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: TrainConfig = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.checkpoint);
        for p in [&mut self.init_checkpoint, &mut self.log, &mut self.data.vocab, &mut self.data.spans, &mut self.data.parallel, &mut self.data.paraphrases]
            .into_iter()
            .flatten()
        {
            resolve(base, p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        MultitaskSchedule::new(&self.objectives, self.seed)?;
        self.noise.validate()?;
        self.optimizer.validate()?;
        if self.init_checkpoint.is_none() {
            self.model.validate()?;
        }
        Ok(())
    }

    /// Every input path the enabled objectives need, paired with the
    /// config key that names it.
    fn required_inputs(&self) -> Vec<(&'static str, Option<&PathBuf>)> {
        let mut req = vec![("data.vocab", self.data.vocab.as_ref())];
        let needs_spans = self.objectives.iter().any(|o| {
            matches!(o, Objective::Denoise | Objective::Backtranslate) || (*o == Objective::Diffur && self.noise_mode == NoiseMode::Token)
        });
        if needs_spans {
            req.push(("data.spans", self.data.spans.as_ref()));
        }
        if self.objectives.contains(&Objective::Translate) {
            req.push(("data.parallel", self.data.parallel.as_ref()));
        }
        if self.objectives.contains(&Objective::Diffur) && self.noise_mode == NoiseMode::Paraphrase {
            req.push(("data.paraphrases", self.data.paraphrases.as_ref()));
        }
        if let Some(p) = &self.init_checkpoint {
            req.push(("init_checkpoint", Some(p)));
        }
        req
    }

    /// Pre-flight check: validates the config and reports every missing
    /// input at once.
    pub fn preflight(&self) -> Result<()> {
        self.validate()?;
        let mut unset = Vec::new();
        let mut missing = Vec::new();
        for (key, p) in self.required_inputs() {
            match p {
                None => unset.push(key),
                Some(p) if !p.exists() => missing.push(p.clone()),
                _ => {}
            }
        }
        if !unset.is_empty() {
            return Err(Error::Config(format!("enabled objectives need these settings: {}", unset.join(", "))));
        }
        if !missing.is_empty() {
            return Err(Error::MissingFiles(missing));
        }
        Ok(())
    }
}

/// Tokenized training data.
#[derive(Clone, Debug, Default)]
pub struct TrainingData {
    /// `(x1, x2, language id)`.
    pub spans: Vec<(Vec<u32>, Vec<u32>, u32)>,
    /// `(source, target, target language id)`.
    pub parallel: Vec<(Vec<u32>, Vec<u32>, u32)>,
    /// `(x, x_para, language id)`.
    pub paraphrases: Vec<(Vec<u32>, Vec<u32>, u32)>,
    /// Records dropped for exceeding the length budget.
    pub dropped: usize,
}

/// Loads a vocabulary file (one token per line) and checks it against the
/// model's reserved ids.
pub fn load_vocab(path: &Path, model: &ModelConfig) -> Result<Vocabulary> {
    let tokens = read_lines(path)?;
    let vocab = Vocabulary::new(tokens, model.special.unk)?;
    if vocab.len() > model.vocab_size {
        return Err(Error::Config(format!("vocabulary has {} entries but the model supports {}", vocab.len(), model.vocab_size)));
    }
    for l in &model.languages {
        if vocab.token(l.id) != Some(language_surface(&l.code).as_str()) {
            return Err(Error::Config(format!("vocabulary entry {} should be {}", l.id, language_surface(&l.code))));
        }
    }
    Ok(vocab)
}

impl TrainingData {
    /// Reads and tokenizes the sources the enabled objectives use. Sequences
    /// longer than `max_seq_len - 2` are dropped (one slot for a prefix
    /// token, one for EOS).
    pub fn load(cfg: &TrainConfig, model: &ModelConfig, vocab: &Vocabulary) -> Result<Self> {
        let budget = model.max_seq_len - 2;
        let mut data = TrainingData::default();
        let tok = |s: &str| vocab.encode(s).0.into_ids();
        let fits = |v: &[u32]| !v.is_empty() && v.len() <= budget;
        let default_lang = model.language_id(&cfg.default_language)?;
        let needed: Vec<&str> = cfg.required_inputs().into_iter().map(|(k, _)| k).collect();
        let wanted = |key: &str, p: &Option<PathBuf>| if needed.contains(&key) { p.clone() } else { None };
        if let Some(p) = &wanted("data.spans", &cfg.data.spans) {
            for r in read_jsonl::<SpanPair>(p)? {
                let lang = match &r.lang {
                    Some(code) => model.language_id(code)?,
                    None => default_lang,
                };
                let (a, b) = (tok(&r.x1), tok(&r.x2));
                if fits(&a) && fits(&b) {
                    data.spans.push((a, b, lang));
                } else {
                    data.dropped += 1;
                }
            }
        }
        if let Some(p) = &wanted("data.parallel", &cfg.data.parallel) {
            for r in read_jsonl::<ParallelPair>(p)? {
                model.language_id(&r.src_lang)?;
                let lang = model.language_id(&r.tgt_lang)?;
                let (a, b) = (tok(&r.src), tok(&r.tgt));
                if fits(&a) && fits(&b) {
                    data.parallel.push((a, b, lang));
                } else {
                    data.dropped += 1;
                }
            }
        }
        if let Some(p) = &wanted("data.paraphrases", &cfg.data.paraphrases) {
            for r in read_jsonl::<ParaphrasePair>(p)? {
                let lang = match &r.lang {
                    Some(code) => model.language_id(code)?,
                    None => default_lang,
                };
                let (a, b) = (tok(&r.x), tok(&r.x_para));
                if fits(&a) && fits(&b) {
                    data.paraphrases.push((a, b, lang));
                } else {
                    data.dropped += 1;
                }
            }
        }
        Ok(data)
    }
}

/// Per-objective totals.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub steps: BTreeMap<Objective, u64>,
    pub bt_skipped: u64,
    /// Steps whose loss or gradient was not finite (no update applied).
    pub nonfinite: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub objective: Objective,
    pub loss: Option<f64>,
    pub skipped: usize,
    pub grad_norm: f64,
}

/// One line of the training log: the loss of each objective in one cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub cycle: u64,
    pub losses: BTreeMap<Objective, f64>,
    pub bt_skipped: usize,
}

/// Sampling and optimization state for a training run.
pub struct Trainer<T> {
    pub model: RewriteModel<T>,
    pub optimizer: Adam<T>,
    pub schedule: MultitaskSchedule,
    pub data: TrainingData,
    pub step: u64,
    pub stats: TrainStats,
    batch_size: usize,
    noise: NoiseConfig,
    noise_mode: NoiseMode,
    conditioning: StyleConditioning,
    pivot: u32,
    noise_vocab: usize,
    reserved: Vec<u32>,
    bt_pool: Vec<usize>,
}

impl<T: Scalar> Trainer<T> {
    /// Checks that every enabled objective has data before any step runs.
    pub fn new(model: RewriteModel<T>, optimizer: Adam<T>, data: TrainingData, cfg: &TrainConfig, vocab_len: usize) -> Result<Self> {
        let schedule = MultitaskSchedule::new(&cfg.objectives, cfg.seed)?;
        cfg.noise.validate()?;
        let pivot = model.config().language_id(&cfg.pivot_language)?;
        let bt_pool: Vec<usize> = (0..data.spans.len()).filter(|&i| data.spans[i].2 != pivot).collect();
        for &o in schedule.cycle() {
            let empty = match o {
                Objective::Denoise => data.spans.is_empty(),
                Objective::Translate => data.parallel.is_empty(),
                Objective::Backtranslate => bt_pool.is_empty(),
                Objective::Diffur => match cfg.noise_mode {
                    NoiseMode::Paraphrase => data.paraphrases.is_empty(),
                    NoiseMode::Token => bt_pool.is_empty(),
                },
            };
            if empty {
                return Err(Error::Config(format!("objective `{o}` is enabled but has no training data")));
            }
        }
        let reserved = model.config().reserved_ids();
        Ok(Self {
            model,
            optimizer,
            schedule,
            data,
            step: 0,
            stats: TrainStats::default(),
            batch_size: cfg.batch_size,
            noise: cfg.noise.clone(),
            noise_mode: cfg.noise_mode,
            conditioning: cfg.style_conditioning,
            pivot,
            noise_vocab: vocab_len,
            reserved,
            bt_pool,
        })
    }

    fn step_rng(&self, step: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.schedule.seed);
        r.set_stream(step);
        r
    }

    fn noised(&self, x: &[u32], rng: &mut ChaCha8Rng) -> Vec<u32> {
        token_noise(x, &self.noise, self.noise_vocab, &self.reserved, rng).tokens
    }

    /// The minibatch for `objective` at global step `step`; a pure function
    /// of the seed and the step, which makes runs resumable.
    pub fn sample_batch(&self, objective: Objective, step: u64) -> TrainingBatch {
        let mut rng = self.step_rng(step);
        let n = self.batch_size;
        match objective {
            Objective::Denoise => {
                let (mut x1, mut x2, mut x2_noised, mut lang) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
                for _ in 0..n {
                    let (a, b, l) = self.data.spans.choose(&mut rng).unwrap();
                    let (a, b) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
                    x2_noised.push(self.noised(b, &mut rng));
                    x1.push(a.clone());
                    x2.push(b.clone());
                    lang.push(*l);
                }
                TrainingBatch::Denoise { x1, x2, x2_noised, lang }
            }
            Objective::Translate => {
                let (mut src, mut tgt, mut tgt_lang) = (Vec::new(), Vec::new(), Vec::new());
                for _ in 0..n {
                    let (s, t, l) = self.data.parallel.choose(&mut rng).unwrap();
                    src.push(s.clone());
                    tgt.push(t.clone());
                    tgt_lang.push(*l);
                }
                TrainingBatch::Translate { src, tgt, tgt_lang }
            }
            Objective::Backtranslate => {
                let (mut x1, mut x2, mut lang) = (Vec::new(), Vec::new(), Vec::new());
                for _ in 0..n {
                    let (a, b, l) = &self.data.spans[*self.bt_pool.choose(&mut rng).unwrap()];
                    let (a, b) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
                    x1.push(a.clone());
                    x2.push(b.clone());
                    lang.push(*l);
                }
                TrainingBatch::Backtranslate { x1, x2, lang, pivot_lang: self.pivot }
            }
            Objective::Diffur => {
                let (mut x, mut x_para, mut lang) = (Vec::new(), Vec::new(), Vec::new());
                for _ in 0..n {
                    match self.noise_mode {
                        NoiseMode::Paraphrase => {
                            let (a, b, l) = self.data.paraphrases.choose(&mut rng).unwrap();
                            x.push(a.clone());
                            x_para.push(b.clone());
                            lang.push(*l);
                        }
                        NoiseMode::Token => {
                            let (_, b, l) = &self.data.spans[*self.bt_pool.choose(&mut rng).unwrap()];
                            x_para.push(self.noised(b, &mut rng));
                            x.push(b.clone());
                            lang.push(*l);
                        }
                    }
                }
                TrainingBatch::Diffur { x, x_para, lang }
            }
        }
    }

    /// One optimizer step on `batch`.
    pub fn train_step(&mut self, batch: &TrainingBatch) -> Result<StepReport> {
        let objective = batch.objective();
        let (loss, skipped, grads) = {
            let mut tape = Tape::new(self.model.params());
            let out = batch_loss(&self.model, &mut tape, batch, self.conditioning)?;
            match out.loss {
                Some(l) => {
                    let value = tape.value(l).data()[0].as_f64();
                    (Some(value), out.skipped, value.is_finite().then(|| tape.backward(l)))
                }
                None => (None, out.skipped, None),
            }
        };
        let mut grad_norm = 0.0;
        match grads {
            Some(g) if g.all_finite() => grad_norm = self.optimizer.update(self.model.params_mut(), &g),
            _ if loss.is_some() => self.stats.nonfinite += 1,
            _ => {}
        }
        *self.stats.steps.entry(objective).or_default() += 1;
        self.stats.bt_skipped += skipped as u64;
        Ok(StepReport { objective, loss, skipped, grad_norm })
    }

    /// Runs one full schedule cycle: one step per objective, in order.
    pub fn run_cycle(&mut self) -> Result<CycleReport> {
        let cycle = self.step / self.schedule.cycle().len() as u64;
        let mut losses = BTreeMap::new();
        let mut bt_skipped = 0;
        for _ in 0..self.schedule.cycle().len() {
            let objective = self.schedule.objective_at(self.step);
            let batch = self.sample_batch(objective, self.step);
            let r = self.train_step(&batch)?;
            self.step += 1;
            bt_skipped += r.skipped;
            if let Some(l) = r.loss {
                losses.insert(objective, l);
            }
        }
        Ok(CycleReport { cycle, losses, bt_skipped })
    }

    pub fn checkpoint_meta(&self) -> serde_json::Value {
        serde_json::json!({
            "step": self.step,
            "objectives": self.schedule.cycle(),
            "seed": self.schedule.seed,
            "stats": self.stats,
        })
    }

    pub fn save(&self, path: &Path, vocab: &Vocabulary) -> Result<()> {
        checkpoint::save(path, &self.model, Some(vocab.tokens()), Some(&self.optimizer), self.checkpoint_meta())
    }
}

/// Summary of a finished run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub resumed_from: Option<u64>,
    pub steps: u64,
    pub stats: TrainStats,
    pub last: Option<CycleReport>,
}

/// Full run from a config: pre-flight, data loading, initialization (or
/// resumption from an existing checkpoint at the target path), the cycle
/// loop with periodic atomic checkpoints, and the loss log.
pub fn train_from_config(cfg: &TrainConfig, mut on_cycle: impl FnMut(&CycleReport)) -> Result<TrainOutcome> {
    cfg.preflight()?;
    let existing = cfg.checkpoint.exists().then(|| checkpoint::load::<f32>(&cfg.checkpoint)).transpose()?;
    let (model, optimizer, start, prior_stats) = match existing {
        Some(ck) if ck.meta.get("seed").and_then(|v| v.as_u64()) == Some(cfg.seed) && ck.optimizer.is_some() => {
            let step = ck.meta.get("step").and_then(|v| v.as_u64()).unwrap_or(0);
            let stats = serde_json::from_value(ck.meta.get("stats").cloned().unwrap_or_default()).unwrap_or_default();
            let mut opt = ck.optimizer.unwrap();
            opt.config = cfg.optimizer.clone();
            (ck.model, opt, Some(step), stats)
        }
        _ => {
            let model = match &cfg.init_checkpoint {
                Some(p) => checkpoint::load::<f32>(p)?.model,
                None => RewriteModel::new(cfg.model.clone(), cfg.seed)?,
            };
            let opt = Adam::new(cfg.optimizer.clone(), model.params());
            (model, opt, None, TrainStats::default())
        }
    };
    let vocab = load_vocab(cfg.data.vocab.as_ref().unwrap(), model.config())?;
    let data = TrainingData::load(cfg, model.config(), &vocab)?;
    if data.dropped > 0 {
        tracing::warn!(dropped = data.dropped, "training records exceed the length budget and were skipped");
    }
    let mut trainer = Trainer::new(model, optimizer, data, cfg, vocab.len())?;
    trainer.step = start.unwrap_or(0);
    trainer.stats = prior_stats;
    let per_cycle = trainer.schedule.cycle().len() as u64;
    let total_steps = cfg.cycles * per_cycle;

    let mut log = match &cfg.log {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            Some(OpenOptions::new().create(true).append(true).open(p)?)
        }
        None => None,
    };
    let mut last = None;
    while trainer.step < total_steps {
        let report = trainer.run_cycle()?;
        if let Some(f) = log.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&report)?)?;
        }
        on_cycle(&report);
        let done_cycles = trainer.step / per_cycle;
        if cfg.checkpoint_every > 0 && done_cycles % cfg.checkpoint_every == 0 && trainer.step < total_steps {
            trainer.save(&cfg.checkpoint, &vocab)?;
        }
        last = Some(report);
    }
    trainer.save(&cfg.checkpoint, &vocab)?;
    Ok(TrainOutcome { resumed_from: start, steps: trainer.step, stats: trainer.stats.clone(), last })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preflight_lists_every_missing_file() {
        let cfg = TrainConfig {
            objectives: vec![Objective::Denoise, Objective::Translate],
            data: DataPaths {
                vocab: Some("/nonexistent/v.txt".into()),
                spans: Some("/nonexistent/s.jsonl".into()),
                parallel: Some("/nonexistent/p.jsonl".into()),
                paraphrases: None,
            },
            ..TrainConfig::default()
        };
        match cfg.preflight() {
            Err(Error::MissingFiles(v)) => assert_eq!(v.len(), 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn preflight_names_unset_sources() {
        let cfg = TrainConfig { objectives: vec![Objective::Diffur], ..TrainConfig::default() };
        match cfg.preflight() {
            Err(Error::Config(m)) => assert!(m.contains("data.paraphrases") && m.contains("data.vocab")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_parses_from_toml() {
        let text = r#"
            seed = 3
            cycles = 10
            objectives = ["denoise", "diffur"]
            noise_mode = "token"
            style_conditioning = "target"
            checkpoint = "out/m.ckpt"
            [data]
            vocab = "v.txt"
            [model]
            d_model = 32
        "#;
        let mut cfg: TrainConfig = toml::from_str(text).unwrap();
        cfg.resolve_paths(Path::new("/base"));
        assert_eq!(cfg.objectives, vec![Objective::Denoise, Objective::Diffur]);
        assert_eq!(cfg.noise_mode, NoiseMode::Token);
        assert_eq!(cfg.style_conditioning, StyleConditioning::Target);
        assert_eq!(cfg.checkpoint, PathBuf::from("/base/out/m.ckpt"));
        assert_eq!(cfg.model.d_model, 32);
        assert_eq!(cfg.model.n_heads, 4);
        assert!(toml::from_str::<TrainConfig>("bogus = 1").is_err());
    }
}
