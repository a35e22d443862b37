//! Prompt codecs, chat-completion adapters, concurrent sampling and median aggregation.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::time::{Duration, Instant};

use ndarray::{Array2, ArrayView2};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{CostFamily, ForecastError, Forecaster};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("empty input sequence")]
    EmptyInput,
    #[error("input of length {len} cannot be split into {segments} equal segments")]
    IndivisibleShots { len: usize, segments: usize },
    #[error("invalid scaling: {0}")]
    InvalidScaling(String),
    #[error("invalid decoding config: {0}")]
    InvalidDecoding(String),
    #[error("style `{0}` issues one query per step; use build_prompts")]
    MultiTurnStyle(PromptStyle),
    #[error("unknown prompt style `{0}`")]
    UnknownStyle(String),
    #[error("response holds {found} values, expected {expected}")]
    TooFewValues { found: usize, expected: usize },
    #[error("response holds no numbers")]
    NoNumbersFound,
    #[error("all {samples} samples failed after {attempts} attempts each")]
    AllSamplesFailed { samples: usize, attempts: usize },
    #[error("adapter error{}: {message}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Adapter { status: Option<u16>, message: String },
    #[error("median over an empty list")]
    EmptyList,
    #[error("forecast length {found} differs from {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Prompt templates. `LlmpMulti` issues one query per forecast step and is off by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStyle {
    LlmtimeBase,
    LlmtimeChat,
    LlmpSingle,
    TsCot,
    TsIncontext,
    LlmpMulti,
}

impl PromptStyle {
    /// Single-query styles.
    pub const ALL: [PromptStyle; 5] = [
        PromptStyle::LlmtimeBase,
        PromptStyle::LlmtimeChat,
        PromptStyle::LlmpSingle,
        PromptStyle::TsCot,
        PromptStyle::TsIncontext,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PromptStyle::LlmtimeBase => "llmtime_base",
            PromptStyle::LlmtimeChat => "llmtime_chat",
            PromptStyle::LlmpSingle => "llmp_single",
            PromptStyle::TsCot => "ts_cot",
            PromptStyle::TsIncontext => "ts_incontext",
            PromptStyle::LlmpMulti => "llmp_multi",
        }
    }
}

impl fmt::Display for PromptStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PromptStyle {
    type Err = LlmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptStyle::ALL
            .into_iter()
            .chain([PromptStyle::LlmpMulti])
            .find(|p| p.name() == s)
            .ok_or_else(|| LlmError::UnknownStyle(s.to_owned()))
    }
}

pub const SYSTEM_LLMTIME: &str = "You are a helpful assistant that performs time series predictions. The user will provide a sequence and you will predict the remaining sequence. The sequence is represented by decimal strings separated by commas.";

pub const SYSTEM_LLMP: &str = "You are a helpful assistant that performs time series predictions. The user will provide you with a sequence of ordered pairs (x, y), and you will predict y for pairs where only x is given. Each pair is separated by a newline.";

pub const INSTRUCTION: &str = "Please predict next sequence following input sequence without producing any additional text. Do not say anything like 'the next terms in the sequence are', just return the numbers.";

const LLMP_INSTRUCTION: &str = "Please predict the missing values in the y column based on the given x and y data points without producing any additional text. Do not say anything like 'the next terms in the sequence are', just return only the y values as numbers without x values.";

const COT_STEP1: &str = "Step 1) Describe the solution process to make future predictions that reflect the description in up to five sentences.";

const COT_STEP2: &str = "Step 2) Considering the answers to previous steps, please predict next sequence following input sequence without producing any additional text. Do not say anything like 'the next terms in the sequence are', just return the numbers.";

/// Affine map applied before rendering: `v -> (v - offset) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub offset: f64,
    pub scale: f64,
    pub decimals: usize,
}

impl ScalingConfig {
    pub fn identity(decimals: usize) -> Self {
        ScalingConfig {
            offset: 0.0,
            scale: 1.0,
            decimals,
        }
    }

    /// Zero offset; the 90th percentile of `|v|` (linear interpolation) maps to 10.
    pub fn fit(values: &[f64], decimals: usize) -> Self {
        let mut abs: Vec<f64> = values.iter().map(|v| v.abs()).filter(|v| v.is_finite()).collect();
        if abs.is_empty() {
            return Self::identity(decimals);
        }
        abs.sort_by(f64::total_cmp);
        let pos = 0.9 * (abs.len() - 1) as f64;
        let (lo, frac) = (pos.floor() as usize, pos.fract());
        let hi = (lo + 1).min(abs.len() - 1);
        let p90 = abs[lo] + frac * (abs[hi] - abs[lo]);
        let scale = if p90 > 0.0 { p90 / 10.0 } else { 1.0 };
        ScalingConfig {
            offset: 0.0,
            scale,
            decimals,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.scale > 0.0 && self.scale.is_finite()) || !self.offset.is_finite() {
            return Err(LlmError::InvalidScaling(format!(
                "offset {} / scale {} (scale must be positive and finite)",
                self.offset, self.scale
            )));
        }
        Ok(())
    }

    pub fn format_value(&self, v: f64) -> String {
        format!("{:.*}", self.decimals, (v - self.offset) / self.scale)
    }

    pub fn invert(&self, rendered: f64) -> f64 {
        rendered * self.scale + self.offset
    }

    /// Comma-joined with a trailing `", "`.
    pub fn render(&self, values: &[f64]) -> String {
        values.iter().map(|&v| self.format_value(v) + ", ").collect()
    }

    fn join(&self, values: &[f64]) -> String {
        values.iter().map(|&v| self.format_value(v)).collect::<Vec<_>>().join(", ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub style: PromptStyle,
    pub system_text: String,
    pub user_text: String,
    pub scaling: ScalingConfig,
    pub expected_count: usize,
}

impl PromptBundle {
    /// Decode a response to this prompt; TS-CoT responses are cut to their final answer first.
    pub fn decode(&self, text: &str) -> Result<Vec<f64>, LlmError> {
        let payload = match self.style {
            PromptStyle::TsCot => split_cot_answer(text),
            _ => text,
        };
        decode_response(payload, self.expected_count, &self.scaling)
    }
}

/// Build the single-query prompt for one channel. TS-InContext uses `input_len / horizon - 1` shots.
pub fn build_prompt(values: &[f64], horizon: usize, style: PromptStyle, scaling: &ScalingConfig) -> Result<PromptBundle, LlmError> {
    build_prompt_with_shots(values, horizon, style, scaling, None)
}

pub fn build_prompt_with_shots(
    values: &[f64],
    horizon: usize,
    style: PromptStyle,
    scaling: &ScalingConfig,
    shots: Option<usize>,
) -> Result<PromptBundle, LlmError> {
    if values.is_empty() {
        return Err(LlmError::EmptyInput);
    }
    if horizon == 0 {
        return Err(LlmError::InvalidDecoding("horizon must be at least 1".into()));
    }
    scaling.validate()?;
    let rendered = scaling.render(values);
    let (system_text, user_text) = match style {
        PromptStyle::LlmtimeBase => (String::new(), rendered),
        PromptStyle::LlmtimeChat => (SYSTEM_LLMTIME.to_owned(), format!("{INSTRUCTION} Input Sequence: {rendered}")),
        PromptStyle::LlmpSingle => {
            let n = values.len();
            let mut rows: Vec<String> = values
                .iter()
                .enumerate()
                .map(|(i, &v)| format!("{i},{}", scaling.format_value(v)))
                .collect();
            rows.extend((n..n + horizon).map(|i| format!("{i}, ")));
            (
                SYSTEM_LLMP.to_owned(),
                format!("{LLMP_INSTRUCTION} x, y\n {}\n", rows.join("\n ")),
            )
        }
        PromptStyle::TsCot => (
            SYSTEM_LLMTIME.to_owned(),
            format!(
                "Sequence during the input period:\n{rendered}\nLet's think step by step.\n\n{COT_STEP1}\n\n{COT_STEP2} Input Sequence:{rendered}"
            ),
        ),
        PromptStyle::TsIncontext => {
            let segments = match shots {
                Some(s) => s + 1,
                None => values.len() / horizon,
            };
            if segments < 2 || !values.len().is_multiple_of(segments) {
                return Err(LlmError::IndivisibleShots {
                    len: values.len(),
                    segments,
                });
            }
            let seg: Vec<&[f64]> = values.chunks(values.len() / segments).collect();
            let mut text = String::from("We give you input and output sequence samples:\n");
            for i in 1..segments {
                text += &format!(
                    "{i}. Sequence: {}<sep> {}\n",
                    scaling.render(seg[i - 1]),
                    scaling.join(seg[i])
                );
            }
            text += &format!("\n{INSTRUCTION} Input Sequence: {}<sep>", scaling.render(seg[segments - 1]));
            (SYSTEM_LLMTIME.to_owned(), text)
        }
        PromptStyle::LlmpMulti => return Err(LlmError::MultiTurnStyle(style)),
    };
    Ok(PromptBundle {
        style,
        system_text,
        user_text,
        scaling: *scaling,
        expected_count: horizon,
    })
}

/// One prompt per forecast step for `LlmpMulti`; a single bundle for every other style.
pub fn build_prompts(
    values: &[f64],
    horizon: usize,
    style: PromptStyle,
    scaling: &ScalingConfig,
    shots: Option<usize>,
) -> Result<Vec<PromptBundle>, LlmError> {
    if style != PromptStyle::LlmpMulti {
        return build_prompt_with_shots(values, horizon, style, scaling, shots).map(|b| vec![b]);
    }
    if values.is_empty() {
        return Err(LlmError::EmptyInput);
    }
    scaling.validate()?;
    let history: Vec<String> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| format!("{i},{}", scaling.format_value(v)))
        .collect();
    let history = history.join("\n ");
    Ok((0..horizon)
        .map(|k| PromptBundle {
            style,
            system_text: String::new(),
            user_text: format!("{history}\n {}, ", values.len() + k),
            scaling: *scaling,
            expected_count: 1,
        })
        .collect())
}

fn number_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?").expect("valid pattern"))
}

/// Maximal runs of numbers separated only by commas and whitespace.
fn numeric_runs(text: &str) -> Vec<Vec<f64>> {
    let text = text.replace('\u{2212}', "-");
    let mut runs: Vec<Vec<f64>> = Vec::new();
    let mut last_end: Option<usize> = None;
    for m in number_pattern().find_iter(&text) {
        let Ok(v) = m.as_str().parse::<f64>() else { continue };
        let joined = last_end.is_some_and(|e| text[e..m.start()].chars().all(|c| c == ',' || c.is_whitespace()));
        match runs.last_mut() {
            Some(run) if joined => run.push(v),
            _ => runs.push(vec![v]),
        }
        last_end = Some(m.end());
    }
    runs
}

/// Extract `expected` values: the final run of at least `expected` numbers, else all numbers in order.
pub fn decode_response(text: &str, expected: usize, scaling: &ScalingConfig) -> Result<Vec<f64>, LlmError> {
    let runs = numeric_runs(text);
    if runs.is_empty() {
        return Err(LlmError::NoNumbersFound);
    }
    let chosen: Vec<f64> = match runs.iter().rev().find(|r| r.len() >= expected) {
        Some(run) => run.clone(),
        None => runs.concat(),
    };
    if chosen.len() < expected {
        return Err(LlmError::TooFewValues {
            found: chosen.len(),
            expected,
        });
    }
    Ok(chosen[..expected].iter().map(|&v| scaling.invert(v)).collect())
}

/// Text after the last `Answer 2)` marker, logging any earlier reasoning.
pub fn split_cot_answer(text: &str) -> &str {
    match text.rfind("Answer 2)") {
        Some(at) => {
            let prose = text[..at].trim();
            if !prose.is_empty() {
                log::info!("reasoning: {prose}");
            }
            &text[at + "Answer 2)".len()..]
        }
        None => text,
    }
}

/// Elementwise median; mean of the two middle values for even counts.
pub fn aggregate_median(forecasts: &[Vec<f64>]) -> Result<Vec<f64>, LlmError> {
    let first = forecasts.first().ok_or(LlmError::EmptyList)?;
    if let Some(bad) = forecasts.iter().find(|f| f.len() != first.len()) {
        return Err(LlmError::LengthMismatch {
            expected: first.len(),
            found: bad.len(),
        });
    }
    let n = forecasts.len();
    Ok((0..first.len())
        .map(|t| {
            let mut col: Vec<f64> = forecasts.iter().map(|f| f[t]).collect();
            col.sort_by(f64::total_cmp);
            if n % 2 == 1 {
                col[n / 2]
            } else {
                (col[n / 2 - 1] + col[n / 2]) / 2.0
            }
        })
        .collect())
}

/// Sampling hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodingConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub num_samples: usize,
    pub max_attempts_per_sample: usize,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        DecodingConfig {
            temperature: 1.0,
            top_p: 0.8,
            num_samples: 5,
            max_attempts_per_sample: 3,
        }
    }
}

impl DecodingConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        let bad = |m: &str| Err(LlmError::InvalidDecoding(m.to_owned()));
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be non-negative");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must lie in (0, 1]");
        }
        if self.num_samples == 0 || self.max_attempts_per_sample == 0 {
            return bad("num_samples and max_attempts_per_sample must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub top_p: f64,
}

impl CompletionRequest {
    pub fn new(bundle: &PromptBundle, cfg: &DecodingConfig) -> Self {
        CompletionRequest {
            system_text: bundle.system_text.clone(),
            user_text: bundle.user_text.clone(),
            temperature: cfg.temperature,
            top_p: cfg.top_p,
        }
    }
}

/// Chat-completion backend. Implementations must tolerate concurrent calls and keep no
/// conversational state between them.
pub trait LlmAdapter: Send + Sync {
    fn name(&self) -> String;

    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError>;
}

/// Offline adapter behaviour, loadable from a JSON fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MockScript {
    /// Responses handed out in call order, cycling.
    Scripted { responses: Vec<String> },
    /// Repeats the last value found in the prompt `count` times.
    Persistence { count: usize },
    /// Every call fails with this status.
    Error { status: u16, message: String },
}

#[derive(Debug)]
pub struct MockAdapter {
    script: MockScript,
    calls: AtomicUsize,
}

impl MockAdapter {
    pub fn new(script: MockScript) -> Self {
        MockAdapter {
            script,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn scripted<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self::new(MockScript::Scripted {
            responses: responses.into_iter().map(Into::into).collect(),
        })
    }

    pub fn from_fixture(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::new(serde_json::from_str(&text)?))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn last_prompt_value(user_text: &str) -> Option<String> {
        static PAIR: OnceLock<Regex> = OnceLock::new();
        let pair = PAIR.get_or_init(|| Regex::new(r"(?m)^ ?\d+,(-?[0-9.eE+-]+)$").expect("valid pattern"));
        if let Some(c) = pair.captures_iter(user_text).last() {
            return Some(c[1].to_owned());
        }
        number_pattern().find_iter(user_text).last().map(|m| m.as_str().to_owned())
    }
}

impl LlmAdapter for MockAdapter {
    fn name(&self) -> String {
        "mock".into()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst);
        match &self.script {
            MockScript::Scripted { responses } if responses.is_empty() => Ok(String::new()),
            MockScript::Scripted { responses } => Ok(responses[call % responses.len()].clone()),
            MockScript::Persistence { count } => {
                let last = Self::last_prompt_value(&request.user_text).ok_or(LlmError::NoNumbersFound)?;
                Ok(vec![last; *count].join(", "))
            }
            MockScript::Error { status, message } => Err(LlmError::Adapter {
                status: Some(*status),
                message: message.clone(),
            }),
        }
    }
}

/// OpenAI-style chat-completion endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpAdapterConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_seconds: u64,
    pub retries: usize,
    pub backoff_seconds: f64,
}

impl Default for HttpAdapterConfig {
    fn default() -> Self {
        HttpAdapterConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            api_key_env: "FCBENCH_API_KEY".into(),
            timeout_seconds: 120,
            retries: 2,
            backoff_seconds: 1.0,
        }
    }
}

pub struct HttpAdapter {
    config: HttpAdapterConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpAdapter {
    /// Reads the API key from the configured environment variable, if set.
    pub fn new(config: HttpAdapterConfig) -> Self {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_seconds)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpAdapter { config, api_key, agent }
    }

    pub fn request_body(&self, request: &CompletionRequest) -> serde_json::Value {
        let mut messages = Vec::new();
        if !request.system_text.is_empty() {
            messages.push(serde_json::json!({"role": "system", "content": request.system_text}));
        }
        messages.push(serde_json::json!({"role": "user", "content": request.user_text}));
        serde_json::json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.temperature,
            "top_p": request.top_p,
        })
    }

    /// One HTTP round trip. The flag marks failures worth retrying.
    fn attempt(&self, body: &serde_json::Value) -> Result<String, (bool, LlmError)> {
        let mut call = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = call.send_json(body).map_err(|e| {
            (
                true,
                LlmError::Adapter {
                    status: None,
                    message: e.to_string(),
                },
            )
        })?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(|e| {
            (
                true,
                LlmError::Adapter {
                    status: Some(status),
                    message: e.to_string(),
                },
            )
        })?;
        if !(200..300).contains(&status) {
            let transient = status == 429 || status >= 500;
            return Err((
                transient,
                LlmError::Adapter {
                    status: Some(status),
                    message: text,
                },
            ));
        }
        parse_chat_response(&text).map_err(|e| (false, e))
    }
}

/// `choices[0].message.content` of a chat-completion response.
pub fn parse_chat_response(text: &str) -> Result<String, LlmError> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    value["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| LlmError::Adapter {
            status: None,
            message: "response lacks choices[0].message.content".into(),
        })
}

impl LlmAdapter for HttpAdapter {
    fn name(&self) -> String {
        format!("http:{}", self.config.model)
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let body = self.request_body(request);
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err((true, e)) if attempt < self.config.retries => {
                    let wait = self.config.backoff_seconds * 2f64.powi(attempt as i32);
                    log::warn!("transient adapter failure, retrying in {wait:.1}s: {e}");
                    std::thread::sleep(Duration::from_secs_f64(wait));
                    attempt += 1;
                }
                Err((_, e)) => return Err(e),
            }
        }
    }
}

#[derive(Serialize)]
struct TranscriptLine<'a> {
    seq: usize,
    adapter: String,
    request: &'a CompletionRequest,
    response: Option<&'a str>,
    error: Option<String>,
    latency_seconds: f64,
}

/// Wraps an adapter and appends every request/response pair to a JSON-lines file.
pub struct TranscriptAdapter {
    inner: Arc<dyn LlmAdapter>,
    sink: Mutex<BufWriter<File>>,
    seq: AtomicUsize,
}

impl TranscriptAdapter {
    pub fn create(inner: Arc<dyn LlmAdapter>, path: impl AsRef<Path>) -> Result<Self, LlmError> {
        Ok(TranscriptAdapter {
            inner,
            sink: Mutex::new(BufWriter::new(File::create(path)?)),
            seq: AtomicUsize::new(0),
        })
    }
}

impl LlmAdapter for TranscriptAdapter {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let clock = Instant::now();
        let result = self.inner.complete(request);
        let line = TranscriptLine {
            seq: self.seq.fetch_add(1, Ordering::SeqCst),
            adapter: self.inner.name(),
            request,
            response: result.as_ref().ok().map(String::as_str),
            error: result.as_ref().err().map(ToString::to_string),
            latency_seconds: clock.elapsed().as_secs_f64(),
        };
        let mut sink = self.sink.lock().unwrap_or_else(|p| p.into_inner());
        serde_json::to_writer(&mut *sink, &line)?;
        sink.write_all(b"\n")?;
        sink.flush()?;
        result
    }
}

/// Caps the number of completions in flight across all users of the wrapped adapter.
pub struct InFlightLimiter {
    inner: Arc<dyn LlmAdapter>,
    cap: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlightLimiter {
    pub fn new(inner: Arc<dyn LlmAdapter>, cap: usize) -> Self {
        InFlightLimiter {
            inner,
            cap: cap.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }
}

impl LlmAdapter for InFlightLimiter {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        {
            let mut active = self.active.lock().unwrap_or_else(|p| p.into_inner());
            while *active >= self.cap {
                active = self.freed.wait(active).unwrap_or_else(|p| p.into_inner());
            }
            *active += 1;
        }
        let result = self.inner.complete(request);
        *self.active.lock().unwrap_or_else(|p| p.into_inner()) -= 1;
        self.freed.notify_one();
        result
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub values: Vec<f64>,
    pub latency_seconds: f64,
    pub attempts: usize,
}

/// Issue `num_samples` completions concurrently, retrying failed decodes with fresh completions.
pub fn sample_forecasts(adapter: &dyn LlmAdapter, bundle: &PromptBundle, cfg: &DecodingConfig) -> Result<Vec<SampleOutcome>, LlmError> {
    cfg.validate()?;
    let request = CompletionRequest::new(bundle, cfg);
    let one_sample = || -> Result<SampleOutcome, LlmError> {
        let clock = Instant::now();
        let mut last_err = LlmError::NoNumbersFound;
        for attempt in 1..=cfg.max_attempts_per_sample {
            match adapter.complete(&request).and_then(|text| bundle.decode(&text)) {
                Ok(values) => {
                    return Ok(SampleOutcome {
                        values,
                        latency_seconds: clock.elapsed().as_secs_f64(),
                        attempts: attempt,
                    })
                }
                Err(e) => {
                    log::debug!("sample attempt {attempt} failed: {e}");
                    last_err = e;
                }
            }
        }
        Err(last_err)
    };
    let results: Vec<Result<SampleOutcome, LlmError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..cfg.num_samples).map(|_| scope.spawn(one_sample)).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(LlmError::Adapter { status: None, message: "sampling thread panicked".into() })))
            .collect()
    });
    let mut outcomes = Vec::new();
    let mut adapter_err = None;
    for r in results {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e @ LlmError::Adapter { .. }) => adapter_err = Some(e),
            Err(_) => {}
        }
    }
    if outcomes.is_empty() {
        return Err(adapter_err.unwrap_or(LlmError::AllSamplesFailed {
            samples: cfg.num_samples,
            attempts: cfg.max_attempts_per_sample,
        }));
    }
    Ok(outcomes)
}

/// How each channel's rendering scale is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ScalingRule {
    Identity { decimals: usize },
    Percentile { decimals: usize },
}

impl Default for ScalingRule {
    fn default() -> Self {
        ScalingRule::Percentile { decimals: 4 }
    }
}

impl ScalingRule {
    pub fn config_for(&self, values: &[f64]) -> ScalingConfig {
        match *self {
            ScalingRule::Identity { decimals } => ScalingConfig::identity(decimals),
            ScalingRule::Percentile { decimals } => ScalingConfig::fit(values, decimals),
        }
    }
}

/// Prompt-based forecaster: one prompt per channel, median over samples.
pub struct LlmForecaster {
    pub adapter: Arc<dyn LlmAdapter>,
    pub style: PromptStyle,
    pub decoding: DecodingConfig,
    pub scaling: ScalingRule,
    pub shots: Option<usize>,
    /// Scaling used for each channel of the last prediction.
    pub last_scalings: Vec<ScalingConfig>,
}

impl LlmForecaster {
    pub fn new(adapter: Arc<dyn LlmAdapter>, style: PromptStyle) -> Self {
        LlmForecaster {
            adapter,
            style,
            decoding: DecodingConfig::default(),
            scaling: ScalingRule::default(),
            shots: None,
            last_scalings: Vec::new(),
        }
    }

    pub fn forecast_channel(&self, values: &[f64], horizon: usize) -> Result<(Vec<f64>, ScalingConfig), LlmError> {
        let scaling = self.scaling.config_for(values);
        let bundles = build_prompts(values, horizon, self.style, &scaling, self.shots)?;
        let mut forecast = Vec::with_capacity(horizon);
        for bundle in &bundles {
            let samples = sample_forecasts(self.adapter.as_ref(), bundle, &self.decoding)?;
            let paths: Vec<Vec<f64>> = samples.into_iter().map(|s| s.values).collect();
            forecast.extend(aggregate_median(&paths)?);
        }
        Ok((forecast, scaling))
    }
}

impl<T: Scalar> Forecaster<T> for LlmForecaster {
    fn name(&self) -> String {
        format!("llm-{}-{}", self.adapter.name(), self.style)
    }

    fn family(&self) -> CostFamily {
        CostFamily::Llm
    }

    fn predict(&mut self, input: ArrayView2<'_, T>, horizon: usize) -> Result<Array2<T>, ForecastError> {
        let mut out = Array2::zeros((horizon, input.ncols()));
        self.last_scalings.clear();
        for c in 0..input.ncols() {
            let values: Vec<f64> = input.column(c).iter().map(|v| v.to_f64_lossy()).collect();
            let (forecast, scaling) = self.forecast_channel(&values, horizon)?;
            for (h, v) in forecast.into_iter().enumerate() {
                out[[h, c]] = T::of(v);
            }
            self.last_scalings.push(scaling);
        }
        Ok(out)
    }
}
