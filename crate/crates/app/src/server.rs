//! HTTP service: `POST /rewrite`, `POST /sweep`, `GET /health`.

use std::hash::{DefaultHasher, Hash, Hasher};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dashmap::DashMap;
use serde::{Deserialize, Serialize};
use serde_json::json;
use stylediff_core::checkpoint;
use stylediff_core::decode::DecodeStrategy;
use stylediff_core::eval::ScorerBundle;
use stylediff_core::inference::{self, check_lambda, scaled_difference, ExemplarSet, RewriteMode, DEFAULT_LAMBDA_CEILING, MAX_EXEMPLARS};
use stylediff_core::system::{detokenize, tokenize};
use stylediff_core::{Error, Model, Style, TokenSequence, Vocabulary};

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub checkpoint: PathBuf,
    pub bind: String,
    pub lambda_ceiling: f64,
    pub strategy: DecodeStrategy,
    pub pivot_language: String,
    pub deadline: Duration,
    /// `oracle`, `oracle:<manifest>`, `cmd:<path>`, or none.
    pub scorer: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            checkpoint: "model.ckpt".into(),
            bind: "127.0.0.1:8080".into(),
            lambda_ceiling: DEFAULT_LAMBDA_CEILING,
            strategy: DecodeStrategy::default(),
            pivot_language: "lb".into(),
            deadline: Duration::from_secs(30),
            scorer: None,
        }
    }
}

/// Shared, read-only state plus the exemplar-mean cache.
pub struct AppState {
    pub model: Model,
    pub vocab: Vocabulary,
    pub config: ServiceConfig,
    pub scorer: Option<Box<dyn ScorerBundle>>,
    pivot: u32,
    cache: DashMap<u64, Style>,
}

impl AppState {
    pub fn new(model: Model, vocab: Vocabulary, config: ServiceConfig, scorer: Option<Box<dyn ScorerBundle>>) -> Result<Self, Error> {
        config.strategy.validate()?;
        let pivot = model.config().language_id(&config.pivot_language)?;
        Ok(Self { model, vocab, config, scorer, pivot, cache: DashMap::new() })
    }

    /// Loads the checkpoint (which must carry its vocabulary) and the scorer.
    pub fn load(config: ServiceConfig) -> Result<Self, Error> {
        let ck = checkpoint::load::<f32>(&config.checkpoint)?;
        let tokens = ck.vocab.ok_or_else(|| Error::Checkpoint(format!("{} has no vocabulary", config.checkpoint.display())))?;
        let vocab = Vocabulary::new(tokens, ck.model.config().special.unk)?;
        let scorer = config.scorer.as_deref().map(stylediff_core::eval::scorer_from_spec).transpose()?;
        Self::new(ck.model, vocab, config, scorer)
    }

    fn tokenize_set(&self, texts: &[String], unknown: &mut usize) -> Result<ExemplarSet, Error> {
        let seqs = texts
            .iter()
            .map(|t| {
                let (s, u) = tokenize(&self.model, &self.vocab, t);
                *unknown += u;
                s
            })
            .collect();
        ExemplarSet::new(seqs)
    }

    /// Mean style of an exemplar set, cached by its token content.
    fn mean_style(&self, set: &ExemplarSet) -> Result<Style, Error> {
        let mut h = DefaultHasher::new();
        set.sentences().hash(&mut h);
        let key = h.finish();
        if let Some(s) = self.cache.get(&key) {
            return Ok(s.clone());
        }
        let s = inference::mean_style(&self.model, set)?;
        self.cache.insert(key, s.clone());
        Ok(s)
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewriteBody {
    pub input: String,
    pub source_exemplars: Vec<String>,
    pub target_exemplars: Vec<String>,
    pub lambda: f64,
    #[serde(default)]
    pub mode: RewriteMode,
    pub language: String,
    #[serde(default)]
    pub decode: Option<DecodeStrategy>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBody {
    pub input: String,
    pub source_exemplars: Vec<String>,
    pub target_exemplars: Vec<String>,
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub mode: RewriteMode,
    pub language: String,
    #[serde(default)]
    pub decode: Option<DecodeStrategy>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Warnings {
    pub unknown_tokens: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewriteResponse {
    pub output: String,
    pub style_vector_norm: f64,
    pub decode_strategy: DecodeStrategy,
    pub warnings: Warnings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub style_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub style_vector_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiErrorBody>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResponse {
    pub results: Vec<SweepRow>,
    pub decode_strategy: DecodeStrategy,
    pub warnings: Warnings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ApiErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, msg: impl Into<String>, field: Option<&str>) -> Self {
        Self { status, body: ApiErrorBody { error: msg.into(), stage: None, field: field.map(str::to_string) } }
    }

    fn bad(msg: impl Into<String>, field: &str) -> Self {
        Self::new(StatusCode::BAD_REQUEST, msg, Some(field))
    }

    /// Maps a core error raised while serving: decode failures become 500
    /// with their stage, everything else is a client error.
    fn from_core(e: Error) -> Self {
        match e {
            Error::Decode { stage, reason } => Self {
                status: StatusCode::INTERNAL_SERVER_ERROR,
                body: ApiErrorBody { error: reason, stage: Some(stage.to_string()), field: None },
            },
            Error::UnknownLanguage(m) => Self::bad(m, "language"),
            Error::Length { .. } => Self::bad(e.to_string(), "input"),
            other => Self::new(StatusCode::BAD_REQUEST, other.to_string(), None),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn parse<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed request body: {e}"), None))
}

/// Everything a request needs before the λ-dependent part.
struct Prepared {
    input: TokenSequence,
    s_a: Option<Style>,
    s_b: Option<Style>,
    language: u32,
    mode: RewriteMode,
    strategy: DecodeStrategy,
    warnings: Warnings,
}

#[allow(clippy::too_many_arguments)]
fn prepare(
    st: &AppState,
    input: &str,
    source: &[String],
    target: &[String],
    language: &str,
    mode: RewriteMode,
    decode: Option<DecodeStrategy>,
    need_styles: bool,
) -> Result<Prepared, ApiError> {
    for (name, set) in [("source_exemplars", source), ("target_exemplars", target)] {
        if set.is_empty() || set.len() > MAX_EXEMPLARS {
            return Err(ApiError::bad(format!("{name} needs 1 to {MAX_EXEMPLARS} sentences"), name));
        }
    }
    let strategy = decode.unwrap_or_else(|| st.config.strategy.clone());
    strategy.validate().map_err(|e| ApiError::bad(e.to_string(), "decode"))?;
    let lang = st.model.config().language_id(language).map_err(|e| ApiError::bad(e.to_string(), "language"))?;
    let mut warnings = Warnings::default();
    let (x, unk) = tokenize(&st.model, &st.vocab, input);
    warnings.unknown_tokens += unk;
    if x.is_empty() {
        return Err(ApiError::bad("input has no tokens", "input"));
    }
    let sa = st.tokenize_set(source, &mut warnings.unknown_tokens).map_err(|e| ApiError::bad(e.to_string(), "source_exemplars"))?;
    let sb = st.tokenize_set(target, &mut warnings.unknown_tokens).map_err(|e| ApiError::bad(e.to_string(), "target_exemplars"))?;
    let (s_a, s_b) = if need_styles {
        (Some(st.mean_style(&sa).map_err(ApiError::from_core)?), Some(st.mean_style(&sb).map_err(ApiError::from_core)?))
    } else {
        (None, None)
    };
    Ok(Prepared { input: x, s_a, s_b, language: lang, mode, strategy, warnings })
}

/// Decodes one λ; returns the output text and the style-vector norm.
fn run_lambda(st: &AppState, p: &Prepared, lambda: f64) -> Result<(String, f64), ApiError> {
    let style = match (&p.s_a, &p.s_b) {
        (Some(a), Some(b)) if lambda != 0.0 => scaled_difference(a, b, lambda),
        _ => Style::zeros(st.model.d_model()),
    };
    let xs = std::slice::from_ref(&p.input);
    let out = match p.mode {
        RewriteMode::Direct => inference::rewrite_batch(&st.model, xs, &style, &p.strategy, p.language).map_err(|e| match e {
            Error::Decode { .. } => ApiError::from_core(e),
            other => ApiError::from_core(Error::Decode { stage: "decode", reason: other.to_string() }),
        })?,
        RewriteMode::Bt => inference::rewrite_bt_batch(&st.model, xs, &style, &p.strategy, p.language, st.pivot).map_err(ApiError::from_core)?,
    };
    Ok((detokenize(&st.model, &st.vocab, &out[0]), style.norm() as f64))
}

fn rewrite_blocking(st: &AppState, body: RewriteBody) -> Result<RewriteResponse, ApiError> {
    if !body.lambda.is_finite() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "lambda must be finite", Some("lambda")));
    }
    check_lambda(body.lambda, Some(st.config.lambda_ceiling)).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string(), Some("lambda")))?;
    let p = prepare(st, &body.input, &body.source_exemplars, &body.target_exemplars, &body.language, body.mode, body.decode, body.lambda != 0.0)?;
    let (output, norm) = run_lambda(st, &p, body.lambda)?;
    Ok(RewriteResponse { output, style_vector_norm: norm, decode_strategy: p.strategy, warnings: p.warnings })
}

pub const MAX_SWEEP: usize = 10;

fn sweep_blocking(st: &AppState, body: SweepBody) -> Result<SweepResponse, ApiError> {
    if body.lambdas.is_empty() || body.lambdas.len() > MAX_SWEEP {
        return Err(ApiError::bad(format!("lambdas needs 1 to {MAX_SWEEP} values"), "lambdas"));
    }
    let need = body.lambdas.iter().any(|&l| l != 0.0);
    let p = prepare(st, &body.input, &body.source_exemplars, &body.target_exemplars, &body.language, body.mode, body.decode, need)?;
    let results = body
        .lambdas
        .iter()
        .map(|&l| {
            let checked = check_lambda(l, Some(st.config.lambda_ceiling))
                .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string(), Some("lambdas")))
                .and_then(|_| run_lambda(st, &p, l));
            match checked {
                Ok((output, norm)) => {
                    let style_score = st.scorer.as_ref().and_then(|s| s.style_score(&output).ok());
                    SweepRow { lambda: l, output: Some(output), style_score, style_vector_norm: Some(norm), error: None }
                }
                Err(e) => SweepRow { lambda: l, output: None, style_score: None, style_vector_norm: None, error: Some(e.body) },
            }
        })
        .collect();
    Ok(SweepResponse { results, decode_strategy: p.strategy, warnings: p.warnings })
}

async fn with_deadline<T: Send + 'static>(st: Arc<AppState>, f: impl FnOnce(&AppState) -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    let deadline = st.config.deadline;
    let task = tokio::task::spawn_blocking(move || f(&st));
    match tokio::time::timeout(deadline, task).await {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}"), None)),
        Err(_) => Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, format!("request exceeded the {} ms deadline", deadline.as_millis()), None)),
    }
}

async fn rewrite_handler(State(st): State<Arc<AppState>>, body: Bytes) -> Result<Json<RewriteResponse>, ApiError> {
    let body: RewriteBody = parse(&body)?;
    with_deadline(st, move |s| rewrite_blocking(s, body)).await.map(Json)
}

async fn sweep_handler(State(st): State<Arc<AppState>>, body: Bytes) -> Result<Json<SweepResponse>, ApiError> {
    let body: SweepBody = parse(&body)?;
    with_deadline(st, move |s| sweep_blocking(s, body)).await.map(Json)
}

async fn health(State(st): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "lambda_ceiling": st.config.lambda_ceiling,
        "decode_strategy": st.config.strategy,
        "scorer": st.scorer.is_some(),
        "languages": st.model.config().languages.iter().map(|l| l.code.clone()).collect::<Vec<_>>(),
    }))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new().route("/rewrite", post(rewrite_handler)).route("/sweep", post(sweep_handler)).route("/health", get(health)).with_state(state)
}

pub async fn serve(config: ServiceConfig) -> anyhow::Result<()> {
    let bind = config.bind.clone();
    let state = Arc::new(AppState::load(config)?);
    let listener = tokio::net::TcpListener::bind(&bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
