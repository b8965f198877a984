//! Record scoring, corpus summaries, λmax selection and the control report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{self, AccVariant, EvalRecord, PunctuationSet};
use super::scorer::{checked_similarity, checked_style, ScorerBundle};
use crate::error::{Error, Result};
use crate::records::OutputRecord;

pub const DEFAULT_LAMBDA_CANDIDATES: [f64; 6] = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0];
pub const DEFAULT_SIM_FLOOR: f64 = 0.75;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreOptions {
    pub sim_threshold: f64,
    pub punctuation: PunctuationSet,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self { sim_threshold: metrics::DEFAULT_SIM_THRESHOLD, punctuation: PunctuationSet::default() }
    }
}

impl ScoreOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.sim_threshold > 0.0 && self.sim_threshold < 1.0) {
            return Err(Error::Config(format!("similarity threshold must lie in (0, 1), got {}", self.sim_threshold)));
        }
        Ok(())
    }
}

/// Scores one (input, output) pair; any scorer failure is returned as an
/// error so the caller can exclude the record.
pub fn score_pair(scorer: &dyn ScorerBundle, input: &str, output: &str, opts: &ScoreOptions) -> Result<EvalRecord> {
    let style_in = checked_style(scorer, input)?;
    let style_out = checked_style(scorer, output)?;
    let sim = checked_similarity(scorer, input, output)?;
    let lang_ok = u8::from(scorer.langid(output)? == scorer.langid(input)?);
    Ok(EvalRecord {
        input: input.to_string(),
        output: output.to_string(),
        lambda: None,
        system: None,
        style_score_in: style_in,
        style_score_out: style_out,
        sim,
        r_acc: metrics::r_acc(style_in, style_out),
        a_acc: metrics::a_acc(style_out),
        sim_indicator: metrics::sim_indicator(sim, opts.sim_threshold),
        lang_ok,
        copy: metrics::copy_metric_with(input, output, &opts.punctuation),
        unigram_f1: metrics::unigram_f1(input, output),
    })
}

/// Scored records plus the indices and reasons of excluded ones.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub records: Vec<EvalRecord>,
    pub invalid: Vec<(usize, String)>,
}

pub fn score_records(scorer: &dyn ScorerBundle, outputs: &[OutputRecord], opts: &ScoreOptions) -> Scored {
    let mut s = Scored::default();
    for (i, o) in outputs.iter().enumerate() {
        match score_pair(scorer, &o.input, &o.output, opts) {
            Ok(mut r) => {
                r.lambda = o.lambda;
                r.system = o.system.clone();
                s.records.push(r);
            }
            Err(e) => s.invalid.push((i, e.to_string())),
        }
    }
    s
}

/// Every individual metric averaged over a corpus, plus both AGG variants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub n: usize,
    pub r_agg: f64,
    pub a_agg: f64,
    pub r_acc: f64,
    pub a_acc: f64,
    pub sim: f64,
    pub sim_rate: f64,
    pub lang: f64,
    pub copy: f64,
    pub unigram_f1: f64,
    pub incr: f64,
}

pub fn summarize(records: &[EvalRecord]) -> Result<CorpusSummary> {
    let n = records.len();
    let mean = |f: &dyn Fn(&EvalRecord) -> f64| records.iter().map(f).sum::<f64>() / n as f64;
    Ok(CorpusSummary {
        n,
        r_agg: metrics::agg(records, AccVariant::Relative)?,
        a_agg: metrics::agg(records, AccVariant::Absolute)?,
        r_acc: mean(&|r| r.r_acc as f64),
        a_acc: mean(&|r| r.a_acc as f64),
        sim: mean(&|r| r.sim),
        sim_rate: mean(&|r| r.sim_indicator as f64),
        lang: mean(&|r| r.lang_ok as f64),
        copy: mean(&|r| r.copy as f64),
        unigram_f1: mean(&|r| r.unigram_f1),
        incr: metrics::incr(records)?,
    })
}

/// A system under evaluation: produces one output per input at a given λ.
pub trait RewriteSystem {
    fn run(&mut self, lambda: f64, inputs: &[String]) -> Result<Vec<String>>;
}

impl<F: FnMut(f64, &[String]) -> Result<Vec<String>>> RewriteSystem for F {
    fn run(&mut self, lambda: f64, inputs: &[String]) -> Result<Vec<String>> {
        self(lambda, inputs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaMax {
    pub lambda: f64,
    /// No candidate met the floor; `lambda` is the smallest candidate.
    pub fallback: bool,
    /// `(candidate, mean raw similarity)` for every candidate tried.
    pub mean_sims: Vec<(f64, f64)>,
}

/// The largest candidate whose mean similarity is at least `floor`, with a
/// fallback to the smallest candidate.
pub fn select_lambda_max_by(candidates: &[f64], floor: f64, mut mean_sim: impl FnMut(f64) -> Result<f64>) -> Result<LambdaMax> {
    if candidates.is_empty() {
        return Err(Error::Config("λ candidate list is empty".into()));
    }
    if candidates.windows(2).any(|w| w[0] >= w[1]) || candidates.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::Config("λ candidates must be non-negative and strictly ascending".into()));
    }
    let mut mean_sims = Vec::with_capacity(candidates.len());
    for &c in candidates {
        let m = mean_sim(c).map_err(|e| Error::Eval(format!("system failed at λ = {c}: {e}")))?;
        mean_sims.push((c, m));
    }
    let best = mean_sims.iter().rev().find(|(_, m)| *m >= floor).map(|(c, _)| *c);
    Ok(match best {
        Some(lambda) => LambdaMax { lambda, fallback: false, mean_sims },
        None => {
            tracing::warn!(floor, "no λ candidate keeps mean similarity above the floor; using the smallest");
            LambdaMax { lambda: candidates[0], fallback: true, mean_sims }
        }
    })
}

fn mean_similarity(scorer: &dyn ScorerBundle, inputs: &[String], outputs: &[String]) -> Result<f64> {
    let sims: Vec<f64> = inputs.iter().zip(outputs).filter_map(|(x, y)| checked_similarity(scorer, x, y).ok()).collect();
    if sims.is_empty() {
        return Err(Error::Eval("no output could be scored for similarity".into()));
    }
    Ok(sims.iter().sum::<f64>() / sims.len() as f64)
}

fn run_checked(system: &mut dyn RewriteSystem, lambda: f64, inputs: &[String]) -> Result<Vec<String>> {
    let out = system.run(lambda, inputs)?;
    if out.len() != inputs.len() {
        return Err(Error::Eval(format!("system returned {} outputs for {} inputs", out.len(), inputs.len())));
    }
    Ok(out)
}

pub fn select_lambda_max(system: &mut dyn RewriteSystem, inputs: &[String], scorer: &dyn ScorerBundle, candidates: &[f64], floor: f64) -> Result<LambdaMax> {
    select_lambda_max_by(candidates, floor, |c| mean_similarity(scorer, inputs, &run_checked(system, c, inputs)?))
}

/// `[λmax/3, 2λmax/3, λmax]`.
pub fn lambda_grid(lambda_max: f64) -> [f64; 3] {
    [lambda_max / 3.0, 2.0 * lambda_max / 3.0, lambda_max]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub summary: CorpusSummary,
    pub invalid: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlReport {
    pub lambda_max: f64,
    pub lambda_max_fallback: bool,
    pub mean_sims: Vec<(f64, f64)>,
    pub lambda_grid: [f64; 3],
    pub per_lambda: Vec<LambdaRow>,
    pub calib: f64,
    pub c_in: f64,
    /// Instances with valid style scores at the input and all three grid points.
    pub calib_instances: usize,
}

/// Per-instance style scores at the grid and the input, for CALIB/C-IN.
fn calib_from(rows: &[Vec<Option<EvalRecord>>]) -> Result<(f64, f64, usize)> {
    let n = rows.first().map_or(0, Vec::len);
    let mut triples = Vec::new();
    let mut ins = Vec::new();
    for i in 0..n {
        let recs: Option<Vec<&EvalRecord>> = rows.iter().map(|r| r[i].as_ref()).collect();
        if let Some(recs) = recs {
            triples.push([recs[0].style_score_out, recs[1].style_score_out, recs[2].style_score_out]);
            ins.push(recs[0].style_score_in);
        }
    }
    let calib = metrics::corpus_calib(&triples, None)?;
    let c_in = metrics::corpus_calib(&triples, Some(&ins))?;
    Ok((calib, c_in, triples.len()))
}

/// λmax selection on `validation`, then the grid evaluation on `inputs`.
pub fn control_report(
    system: &mut dyn RewriteSystem,
    validation: &[String],
    inputs: &[String],
    scorer: &dyn ScorerBundle,
    candidates: &[f64],
    floor: f64,
    opts: &ScoreOptions,
) -> Result<ControlReport> {
    opts.validate()?;
    if inputs.is_empty() {
        return Err(Error::Eval("control report needs at least one input".into()));
    }
    let lm = select_lambda_max(system, validation, scorer, candidates, floor)?;
    let grid = lambda_grid(lm.lambda);
    let mut per_lambda = Vec::new();
    let mut rows = Vec::new();
    for &l in &grid {
        let outs = run_checked(system, l, inputs).map_err(|e| Error::Eval(format!("system failed at λ = {l}: {e}")))?;
        let scored: Vec<Option<EvalRecord>> = inputs
            .iter()
            .zip(&outs)
            .map(|(x, y)| {
                score_pair(scorer, x, y, opts).ok().map(|mut r| {
                    r.lambda = Some(l);
                    r
                })
            })
            .collect();
        let valid: Vec<EvalRecord> = scored.iter().flatten().cloned().collect();
        let invalid = scored.len() - valid.len();
        per_lambda.push(LambdaRow { lambda: l, summary: summarize(&valid)?, invalid });
        rows.push(scored);
    }
    let (calib, c_in, calib_instances) = calib_from(&rows)?;
    Ok(ControlReport {
        lambda_max: lm.lambda,
        lambda_max_fallback: lm.fallback,
        mean_sims: lm.mean_sims,
        lambda_grid: grid,
        per_lambda,
        calib,
        c_in,
        calib_instances,
    })
}

fn same_lambda(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(1.0)
}

/// Report over a file of precomputed outputs, grouped by system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemReport {
    pub system: Option<String>,
    pub overall: CorpusSummary,
    pub per_lambda: Vec<LambdaRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control: Option<FileControl>,
}

/// λmax, grid and calibration recovered from outputs already on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileControl {
    pub lambda_max: f64,
    pub lambda_max_fallback: bool,
    pub lambda_grid: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calib: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_in: Option<f64>,
    pub calib_instances: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub sim_threshold: f64,
    pub records: usize,
    pub invalid: usize,
    pub invalid_details: Vec<(usize, String)>,
    pub systems: Vec<SystemReport>,
}

pub fn evaluate_outputs(outputs: &[OutputRecord], scorer: &dyn ScorerBundle, opts: &ScoreOptions, candidates: &[f64], floor: f64) -> Result<EvaluationReport> {
    opts.validate()?;
    if outputs.is_empty() {
        return Err(Error::Eval("no output records to evaluate".into()));
    }
    let scored = score_records(scorer, outputs, opts);
    let mut by_system: BTreeMap<Option<String>, Vec<EvalRecord>> = BTreeMap::new();
    for r in &scored.records {
        by_system.entry(r.system.clone()).or_default().push(r.clone());
    }
    let mut systems = Vec::new();
    for (system, recs) in by_system {
        let overall = summarize(&recs)?;
        let mut lambdas: Vec<f64> = Vec::new();
        for l in recs.iter().filter_map(|r| r.lambda) {
            if !lambdas.iter().any(|&m| same_lambda(m, l)) {
                lambdas.push(l);
            }
        }
        lambdas.sort_by(f64::total_cmp);
        let mut per_lambda = Vec::new();
        for &l in &lambdas {
            let at: Vec<EvalRecord> = recs.iter().filter(|r| r.lambda.is_some_and(|m| same_lambda(m, l))).cloned().collect();
            per_lambda.push(LambdaRow { lambda: l, summary: summarize(&at)?, invalid: 0 });
        }
        let present: Vec<f64> = candidates.iter().copied().filter(|c| lambdas.iter().any(|&l| same_lambda(l, *c))).collect();
        let control = if present.is_empty() {
            None
        } else {
            let lm = select_lambda_max_by(&present, floor, |c| {
                Ok(per_lambda.iter().find(|r| same_lambda(r.lambda, c)).map(|r| r.summary.sim).unwrap_or(0.0))
            })?;
            let grid = lambda_grid(lm.lambda);
            let mut fc = FileControl { lambda_max: lm.lambda, lambda_max_fallback: lm.fallback, lambda_grid: grid, calib: None, c_in: None, calib_instances: 0 };
            if grid.iter().all(|g| lambdas.iter().any(|&l| same_lambda(l, *g))) {
                let mut inputs: Vec<&str> = Vec::new();
                for r in &recs {
                    if !inputs.contains(&r.input.as_str()) {
                        inputs.push(&r.input);
                    }
                }
                let rows: Vec<Vec<Option<EvalRecord>>> = grid
                    .iter()
                    .map(|g| {
                        inputs
                            .iter()
                            .map(|x| recs.iter().find(|r| r.input == *x && r.lambda.is_some_and(|m| same_lambda(m, *g))).cloned())
                            .collect()
                    })
                    .collect();
                if let Ok((c, ci, k)) = calib_from(&rows) {
                    fc.calib = Some(c);
                    fc.c_in = Some(ci);
                    fc.calib_instances = k;
                }
            }
            Some(fc)
        };
        systems.push(SystemReport { system, overall, per_lambda, control });
    }
    Ok(EvaluationReport {
        sim_threshold: opts.sim_threshold,
        records: outputs.len(),
        invalid: scored.invalid.len(),
        invalid_details: scored.invalid,
        systems,
    })
}
