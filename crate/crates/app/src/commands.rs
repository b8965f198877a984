//! Subcommand implementations, shared by the binary and the tests.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use stylediff_core::checkpoint;
use stylediff_core::decode::DecodeStrategy;
use stylediff_core::eval::control::{summarize, ControlReport, LambdaRow};
use stylediff_core::eval::scorer::checked_similarity;
use stylediff_core::eval::{control_report, evaluate_outputs, score_pair, scorer_from_spec, AccVariant, EvalRecord, RewriteSystem, ScoreOptions, ScorerBundle};
use stylediff_core::inference::{mean_style, ExemplarSet, RewriteMode};
use stylediff_core::paraphrase::{dedupe, filter_pairs, generate_paraphrases, FilterBand, MiningConfig, MiningStats};
use stylediff_core::records::{read_jsonl, read_jsonl_lenient, read_lines, write_jsonl, EvalSentence, OutputRecord, ParaphrasePair};
use stylediff_core::synthetic::{write_corpus, ExemplarFile, Manifest, ToyWorldConfig};
use stylediff_core::system::{detokenize, tokenize, ModelSystem};
use stylediff_core::train::{train_from_config, TrainConfig, TrainOutcome};
use stylediff_core::{Model, Vocabulary};

/// A checkpoint that carries its vocabulary.
pub struct Loaded {
    pub model: Model,
    pub vocab: Vocabulary,
}

pub fn load_checkpoint(path: &Path) -> Result<Loaded> {
    let ck = checkpoint::load::<f32>(path).with_context(|| format!("loading {}", path.display()))?;
    let tokens = ck.vocab.with_context(|| format!("{} has no vocabulary", path.display()))?;
    let vocab = Vocabulary::new(tokens, ck.model.config().special.unk)?;
    Ok(Loaded { model: ck.model, vocab })
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    pub output_dir: PathBuf,
    #[serde(default)]
    pub world: ToyWorldConfig,
}

impl GenDataConfig {
    /// Parses a TOML config; a relative `output_dir` resolves against the
    /// config's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if cfg.output_dir.is_relative() {
            cfg.output_dir = path.parent().unwrap_or(Path::new("")).join(&cfg.output_dir);
        }
        Ok(cfg)
    }
}

pub fn gen_data(cfg: &GenDataConfig) -> Result<Manifest> {
    let m = write_corpus(&cfg.world, &cfg.output_dir)?;
    tracing::info!(dir = %cfg.output_dir.display(), counts = ?m.counts, "corpus written");
    Ok(m)
}

pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    let start = Instant::now();
    let every = (cfg.cycles / 20).max(1);
    let outcome = train_from_config(cfg, |r| {
        if r.cycle % every == 0 {
            tracing::info!(cycle = r.cycle, elapsed_s = start.elapsed().as_secs(), losses = ?r.losses, "training");
        }
    })?;
    if let Some(step) = outcome.resumed_from {
        tracing::info!(step, "resumed from checkpoint");
    }
    tracing::info!(steps = outcome.steps, stats = ?outcome.stats, checkpoint = %cfg.checkpoint.display(), "training finished");
    Ok(outcome)
}

/// `oracle:<manifest>` when the directory holds a corpus manifest, else the
/// default oracle.
pub fn default_scorer_spec(dir: Option<&Path>) -> String {
    match dir.map(|d| d.join("manifest.json")).filter(|p| p.exists()) {
        Some(p) => format!("oracle:{}", p.display()),
        None => "oracle".into(),
    }
}

#[derive(Clone, Debug)]
pub struct MineArgs {
    pub checkpoint: PathBuf,
    pub corpus: PathBuf,
    pub temps: Vec<f64>,
    pub band: FilterBand,
    pub scorer: String,
    pub output: PathBuf,
    pub seed: u64,
    pub language: String,
    pub pivot: String,
    pub batch_size: usize,
}

/// Round-trip mining, band filtering and deduplication. Writes the pairs
/// to `output` and the statistics to `<output>.stats.json`.
pub fn mine(args: &MineArgs) -> Result<MiningStats> {
    let band = FilterBand::new(args.band.low, args.band.high)?;
    let Loaded { model, vocab } = load_checkpoint(&args.checkpoint)?;
    let scorer = scorer_from_spec(&args.scorer)?;
    let source_lang = model.config().language_id(&args.language)?;
    let pivot_lang = model.config().language_id(&args.pivot)?;
    let texts = read_lines(&args.corpus)?;
    let mut sources = Vec::with_capacity(texts.len());
    for t in &texts {
        let ids = tokenize(&model, &vocab, t).0.into_ids();
        if !ids.is_empty() {
            sources.push(ids);
        }
    }
    if sources.is_empty() {
        bail!("{} has no usable sentences", args.corpus.display());
    }
    let cfg = MiningConfig { temperatures: args.temps.clone(), seed: args.seed, batch_size: args.batch_size, source_lang, pivot_lang };
    let (candidates, decode_failures) = generate_paraphrases(&model, &sources, &cfg)?;
    let texts: Vec<(String, String)> =
        candidates.iter().map(|c| (detokenize(&model, &vocab, &c.source), detokenize(&model, &vocab, &c.paraphrase))).collect();
    let (kept, filter) = filter_pairs(texts, |(x, p)| Ok(checked_similarity(scorer.as_ref(), x, p)?), band);
    let pairs: Vec<ParaphrasePair> =
        kept.into_iter().map(|((x, x_para), sim)| ParaphrasePair { x, x_para, sim, lang: Some(args.language.clone()) }).collect();
    let (pairs, duplicates) = dedupe(pairs, |p| (p.x.clone(), p.x_para.clone()));
    write_jsonl(&args.output, &pairs)?;
    let stats = MiningStats { sources: sources.len(), decode_failures, filter, duplicates, persisted: pairs.len() };
    let text = serde_json::to_string_pretty(&stats)?;
    std::fs::write(stats_path(&args.output), text)?;
    tracing::info!(?stats, output = %args.output.display(), "mining finished");
    Ok(stats)
}

pub fn stats_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".stats.json");
    PathBuf::from(s)
}

/// Held-out inputs: `.jsonl` files hold sentence records, anything else is
/// one sentence per line.
pub fn read_eval_file(path: &Path) -> Result<Vec<String>> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        Ok(read_jsonl::<EvalSentence>(path)?.into_iter().map(|e| e.text).collect())
    } else {
        Ok(read_lines(path)?)
    }
}

#[derive(Clone, Debug)]
pub struct SweepArgs {
    pub checkpoint: PathBuf,
    pub eval_file: PathBuf,
    pub candidates: Vec<f64>,
    pub exemplars: Option<PathBuf>,
    pub mode: RewriteMode,
    pub scorer: Option<String>,
    /// Leading inputs used only to pick λmax.
    pub validation: usize,
    pub sim_floor: f64,
    pub sim_threshold: f64,
    pub language: String,
    pub pivot: String,
    pub beam_width: usize,
    pub output: Option<PathBuf>,
    /// Where to write the outputs at the three grid points.
    pub outputs: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub checkpoint: PathBuf,
    pub mode: RewriteMode,
    pub validation: usize,
    pub test: usize,
    pub control: ControlReport,
}

/// Everything a sweep needs besides the λ values.
struct SweepSetup {
    model: Model,
    vocab: Vocabulary,
    exemplars: ExemplarFile,
    scorer: Box<dyn ScorerBundle>,
    inputs: Vec<String>,
}

impl SweepSetup {
    fn load(args: &SweepArgs) -> Result<Self> {
        let Loaded { model, vocab } = load_checkpoint(&args.checkpoint)?;
        let dir = args.eval_file.parent();
        let ex_path = args.exemplars.clone().unwrap_or_else(|| dir.unwrap_or(Path::new("")).join("exemplars.json"));
        let text = std::fs::read_to_string(&ex_path).with_context(|| format!("reading {}", ex_path.display()))?;
        let exemplars: ExemplarFile = serde_json::from_str(&text)?;
        let spec = args.scorer.clone().unwrap_or_else(|| default_scorer_spec(dir));
        let scorer = scorer_from_spec(&spec)?;
        let inputs = read_eval_file(&args.eval_file)?;
        if args.validation == 0 || inputs.len() <= args.validation {
            bail!(
                "{} has {} inputs; need at least one validation input and more inputs than that ({})",
                args.eval_file.display(),
                inputs.len(),
                args.validation
            );
        }
        Ok(Self { model, vocab, exemplars, scorer, inputs })
    }

    fn system(&self, args: &SweepArgs) -> Result<ModelSystem<'_, f32>> {
        let set = |v: &[String]| ExemplarSet::new(v.iter().map(|t| tokenize(&self.model, &self.vocab, t).0).collect());
        Ok(ModelSystem {
            model: &self.model,
            vocab: &self.vocab,
            source_style: mean_style(&self.model, &set(&self.exemplars.informal)?)?,
            target_style: mean_style(&self.model, &set(&self.exemplars.formal)?)?,
            mode: args.mode,
            language: self.model.config().language_id(&args.language)?,
            pivot: self.model.config().language_id(&args.pivot)?,
            strategy: DecodeStrategy::beam(args.beam_width),
        })
    }
}

/// λmax selection on the validation prefix, then the three-point grid on
/// the remaining inputs.
pub fn sweep(args: &SweepArgs) -> Result<SweepReport> {
    let setup = SweepSetup::load(args)?;
    let system = setup.system(args)?;
    let (validation, test) = setup.inputs.split_at(args.validation);
    let mut seen: Vec<OutputRecord> = Vec::new();
    let system_name = format!("{:?}", args.mode).to_lowercase();
    let mut run = |l: f64, xs: &[String]| {
        let ys = system.outputs(l, xs)?;
        if xs == test {
            seen.extend(xs.iter().zip(&ys).map(|(x, y)| OutputRecord { input: x.clone(), output: y.clone(), lambda: Some(l), system: Some(system_name.clone()) }));
        }
        Ok(ys)
    };
    let opts = ScoreOptions { sim_threshold: args.sim_threshold, ..ScoreOptions::default() };
    let control = control_report(&mut run as &mut dyn RewriteSystem, validation, test, setup.scorer.as_ref(), &args.candidates, args.sim_floor, &opts)?;
    if control.lambda_max_fallback {
        tracing::warn!(lambda = control.lambda_max, "no candidate met the similarity floor; using the smallest");
    }
    if let Some(p) = &args.outputs {
        write_jsonl(p, &seen)?;
    }
    let report = SweepReport { checkpoint: args.checkpoint.clone(), mode: args.mode, validation: validation.len(), test: test.len(), control };
    if let Some(p) = &args.output {
        std::fs::write(p, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}

/// Scores the held-out part of a sweep at fixed λ values, skipping λmax
/// selection. Records the scorer rejects are counted, not scored.
pub fn evaluate_lambdas(args: &SweepArgs, lambdas: &[f64]) -> Result<Vec<LambdaRow>> {
    let setup = SweepSetup::load(args)?;
    let system = setup.system(args)?;
    let test = &setup.inputs[args.validation..];
    let opts = ScoreOptions { sim_threshold: args.sim_threshold, ..ScoreOptions::default() };
    let mut rows = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        let outs = system.outputs(l, test)?;
        let scored: Vec<EvalRecord> = test.iter().zip(&outs).filter_map(|(x, y)| score_pair(setup.scorer.as_ref(), x, y, &opts).ok()).collect();
        let invalid = test.len() - scored.len();
        rows.push(LambdaRow { lambda: l, summary: summarize(&scored)?, invalid });
    }
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct EvaluateArgs {
    pub inputs: PathBuf,
    pub scorer: String,
    pub sim_threshold: f64,
    pub acc_variant: AccVariant,
    pub lambda_candidates: Vec<f64>,
    pub sim_floor: f64,
    pub skip_invalid: bool,
}

/// Scores a file of outputs. Unparseable lines and records the scorer
/// rejects are errors unless `skip_invalid` is set. The returned JSON is the
/// full report plus `acc_variant` and each system's `agg` under it.
pub fn evaluate(args: &EvaluateArgs) -> Result<serde_json::Value> {
    let (records, bad) = read_jsonl_lenient::<OutputRecord>(&args.inputs)?;
    let scorer: Box<dyn ScorerBundle> = scorer_from_spec(&args.scorer)?;
    let opts = ScoreOptions { sim_threshold: args.sim_threshold, ..ScoreOptions::default() };
    if !args.skip_invalid && !bad.is_empty() {
        let lines: Vec<String> = bad.iter().map(ToString::to_string).collect();
        bail!("{} invalid record(s):\n{}", bad.len(), lines.join("\n"));
    }
    let report = evaluate_outputs(&records, scorer.as_ref(), &opts, &args.lambda_candidates, args.sim_floor)?;
    if !args.skip_invalid && report.invalid > 0 {
        let lines: Vec<String> = report.invalid_details.iter().map(|(i, e)| format!("record {i}: {e}")).collect();
        bail!("{} invalid record(s):\n{}", report.invalid, lines.join("\n"));
    }
    let mut v = serde_json::to_value(&report)?;
    v["acc_variant"] = serde_json::to_value(args.acc_variant)?;
    v["unparseable"] = bad.len().into();
    if let Some(systems) = v["systems"].as_array_mut() {
        for s in systems {
            let key = match args.acc_variant {
                AccVariant::Relative => "r_agg",
                AccVariant::Absolute => "a_agg",
            };
            s["agg"] = s["overall"][key].clone();
        }
    }
    Ok(v)
}
