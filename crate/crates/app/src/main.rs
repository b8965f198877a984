use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Result;
use clap::{Parser, Subcommand};
use stylediff_app::commands::{self, EvaluateArgs, GenDataConfig, MineArgs, SweepArgs};
use stylediff_app::server::{self, ServiceConfig};
use stylediff_core::decode::DecodeStrategy;
use stylediff_core::eval::control::DEFAULT_SIM_FLOOR;
use stylediff_core::eval::metrics::DEFAULT_SIM_THRESHOLD;
use stylediff_core::eval::AccVariant;
use stylediff_core::inference::{RewriteMode, DEFAULT_LAMBDA_CEILING};
use stylediff_core::paraphrase::FilterBand;
use stylediff_core::train::TrainConfig;

#[derive(Parser)]
#[command(name = "stylediff", version, about = "Few-shot style transfer with style-vector differences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_mode(s: &str) -> Result<RewriteMode, String> {
    match s {
        "direct" => Ok(RewriteMode::Direct),
        "bt" | "backtranslate" => Ok(RewriteMode::Bt),
        _ => Err(format!("unknown mode `{s}` (expected direct|bt)")),
    }
}

fn parse_band(s: &str) -> Result<FilterBand, String> {
    let (lo, hi) = s.split_once(',').ok_or("band must be `low,high`")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("band low: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("band high: {e}"))?;
    FilterBand::new(lo, hi).map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a TOML config; resumes from the checkpoint it names.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a JSONL file of {input, output, lambda?, system?} records.
    Evaluate {
        #[arg(long)]
        inputs: PathBuf,
        /// `oracle`, `oracle:<manifest.json>` or `cmd:<path>`.
        #[arg(long, default_value = "oracle")]
        scorer: String,
        #[arg(long, default_value_t = DEFAULT_SIM_THRESHOLD)]
        sim_threshold: f64,
        /// `relative` or `absolute`.
        #[arg(long, default_value = "relative")]
        acc_variant: AccVariant,
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5,2,2.5,3")]
        lambda_candidates: Vec<f64>,
        #[arg(long, default_value_t = DEFAULT_SIM_FLOOR)]
        sim_floor: f64,
        #[arg(long)]
        skip_invalid: bool,
        /// Report path; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Pick λmax on a validation prefix and evaluate the λ grid on the rest.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        eval_file: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5,2,2.5,3")]
        candidates: Vec<f64>,
        /// Exemplar file; defaults to exemplars.json next to the eval file.
        #[arg(long)]
        exemplars: Option<PathBuf>,
        #[arg(long, default_value = "direct", value_parser = parse_mode)]
        mode: RewriteMode,
        /// Defaults to the oracle of the corpus next to the eval file.
        #[arg(long)]
        scorer: Option<String>,
        #[arg(long, default_value_t = 100)]
        validation: usize,
        #[arg(long, default_value_t = DEFAULT_SIM_FLOOR)]
        sim_floor: f64,
        #[arg(long, default_value_t = DEFAULT_SIM_THRESHOLD)]
        sim_threshold: f64,
        #[arg(long, default_value = "la")]
        language: String,
        #[arg(long, default_value = "lb")]
        pivot: String,
        #[arg(long, default_value_t = 4)]
        beam_width: usize,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Write the grid outputs as JSONL for `evaluate`.
        #[arg(long)]
        outputs: Option<PathBuf>,
    },
    /// Write the synthetic two-language corpus.
    GenData {
        #[arg(long)]
        config: PathBuf,
    },
    /// Mine paraphrase pairs by round-trip translation.
    MineParaphrases {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Plain-text sentences, one per line.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.4,0.6,0.8,1.0")]
        temps: Vec<f64>,
        #[arg(long, default_value = "0.7,0.98", value_parser = parse_band)]
        band: FilterBand,
        /// Defaults to the oracle of the corpus directory.
        #[arg(long)]
        scorer: Option<String>,
        /// Defaults to paraphrases.jsonl next to the checkpoint.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "la")]
        language: String,
        #[arg(long, default_value = "lb")]
        pivot: String,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
    },
    /// Serve `POST /rewrite` and `POST /sweep`.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        #[arg(long)]
        scorer: Option<String>,
        #[arg(long, default_value_t = DEFAULT_LAMBDA_CEILING)]
        lambda_ceiling: f64,
        #[arg(long, default_value_t = 30_000)]
        deadline_ms: u64,
        #[arg(long, default_value_t = 4)]
        beam_width: usize,
        #[arg(long, default_value = "lb")]
        pivot: String,
    },
}

fn write_json(value: &impl serde::Serialize, output: Option<&PathBuf>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match output {
        Some(p) => std::fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config } => {
            let cfg = TrainConfig::from_file(&config)?;
            commands::train(&cfg)?;
        }
        Command::Evaluate { inputs, scorer, sim_threshold, acc_variant, lambda_candidates, sim_floor, skip_invalid, output } => {
            let args = EvaluateArgs { inputs, scorer, sim_threshold, acc_variant, lambda_candidates, sim_floor, skip_invalid };
            write_json(&commands::evaluate(&args)?, output.as_ref())?;
        }
        Command::Sweep {
            checkpoint,
            eval_file,
            candidates,
            exemplars,
            mode,
            scorer,
            validation,
            sim_floor,
            sim_threshold,
            language,
            pivot,
            beam_width,
            output,
            outputs,
        } => {
            let args = SweepArgs {
                checkpoint,
                eval_file,
                candidates,
                exemplars,
                mode,
                scorer,
                validation,
                sim_floor,
                sim_threshold,
                language,
                pivot,
                beam_width,
                output: None,
                outputs,
            };
            write_json(&commands::sweep(&args)?, output.as_ref())?;
        }
        Command::GenData { config } => {
            commands::gen_data(&GenDataConfig::from_file(&config)?)?;
        }
        Command::MineParaphrases { checkpoint, corpus, temps, band, scorer, output, seed, language, pivot, batch_size } => {
            let scorer = scorer.unwrap_or_else(|| commands::default_scorer_spec(corpus.parent()));
            let output = output.unwrap_or_else(|| checkpoint.parent().unwrap_or(std::path::Path::new("")).join("paraphrases.jsonl"));
            let args = MineArgs { checkpoint, corpus, temps, band, scorer, output, seed, language, pivot, batch_size };
            let stats = commands::mine(&args)?;
            write_json(&stats, None)?;
        }
        Command::Serve { checkpoint, bind, scorer, lambda_ceiling, deadline_ms, beam_width, pivot } => {
            let config = ServiceConfig {
                checkpoint,
                bind,
                lambda_ceiling,
                strategy: DecodeStrategy::beam(beam_width),
                pivot_language: pivot,
                deadline: Duration::from_millis(deadline_ms),
                scorer,
            };
            tokio::runtime::Runtime::new()?.block_on(server::serve(config))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
