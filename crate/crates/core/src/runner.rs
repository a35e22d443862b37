//! Config-driven experiments: build datasets, corrupt and filter them, run every
//! dataset x noise level x forecaster cell, and write reports and plot data.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{function_suite, load_csv, CsvLayout, DataError, FunctionSpec};
use crate::eval::{
    host_descriptor, run_protocol, CostComparison, CostFamily, EvalError, EvalOptions, EvalReport, Forecaster, LastValue,
    MetricSpace, PolynomialExtrapolator, Protocol, SeasonalRepeat, SingleShotLinear,
};
use crate::linear::LinearModelConfig;
use crate::llm::{
    DecodingConfig, HttpAdapter, HttpAdapterConfig, InFlightLimiter, LlmAdapter, LlmError, LlmForecaster, MockAdapter,
    MockScript, PromptStyle, ScalingConfig, ScalingRule, TranscriptAdapter,
};
use crate::noise::{apply_filter, inject_noise, FilterSpec, NoiseError, NoiseSpec};
use crate::series::{ForecastTask, SplitSpec, TimeSeries};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Where a dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        #[serde(default)]
        layout: CsvLayout,
    },
    /// One univariate function series.
    Function(FunctionSpec),
    /// All six function families as channels of one series.
    FunctionSuite {
        #[serde(default = "default_suite_length")]
        length: usize,
        #[serde(default)]
        noise_std: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_suite_length() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub name: String,
    #[serde(flatten)]
    pub source: DatasetSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdapterConfig {
    /// Offline adapter: a fixture file or an inline script.
    Mock {
        #[serde(default)]
        fixture: Option<PathBuf>,
        #[serde(default)]
        script: Option<MockScript>,
    },
    Http(HttpAdapterConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum NaiveMethod {
    LastValue,
    SeasonalRepeat { period: usize },
    Polynomial { degree: usize, window: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForecasterConfig {
    Linear {
        #[serde(default)]
        name: Option<String>,
        #[serde(flatten)]
        model: LinearModelConfig,
    },
    Llm {
        #[serde(default)]
        name: Option<String>,
        style: PromptStyle,
        adapter: AdapterConfig,
        #[serde(default)]
        decoding: DecodingConfig,
        #[serde(default)]
        scaling: ScalingRule,
        #[serde(default)]
        shots: Option<usize>,
    },
    Naive {
        #[serde(default)]
        name: Option<String>,
        #[serde(flatten)]
        method: NaiveMethod,
    },
}

impl ForecasterConfig {
    /// Display name used in file names and result rows.
    pub fn display_name(&self) -> String {
        match self {
            ForecasterConfig::Linear { name: Some(n), .. }
            | ForecasterConfig::Llm { name: Some(n), .. }
            | ForecasterConfig::Naive { name: Some(n), .. } => n.clone(),
            ForecasterConfig::Linear { model, .. } => Forecaster::<f64>::name(&SingleShotLinear::<f64>::new(model.clone())),
            ForecasterConfig::Llm { style, .. } => format!("llm-{style}"),
            ForecasterConfig::Naive { method, .. } => match method {
                NaiveMethod::LastValue => "last_value".into(),
                NaiveMethod::SeasonalRepeat { period } => format!("seasonal_repeat_{period}"),
                NaiveMethod::Polynomial { degree, window } => format!("poly{degree}_w{window}"),
            },
        }
    }
}

/// Whether errors are measured against the uncorrupted series or the observed one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthSource {
    #[default]
    Clean,
    Observed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub datasets: Vec<DatasetConfig>,
    pub task: ForecastTask,
    pub forecasters: Vec<ForecasterConfig>,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub filter: Option<FilterSpec>,
    /// Noise levels. Function sources are regenerated with this `noise_std`; other sources
    /// get additive Gaussian noise of this std.
    #[serde(default)]
    pub sweep: Option<Vec<f64>>,
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default)]
    pub metric_space: MetricSpace,
    #[serde(default)]
    pub truth: TruthSource,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Added to every seeded component (function noise, injected noise, model init).
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Cap on concurrent completions per LLM adapter.
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Directory relative paths resolve against; set by [`ExperimentConfig::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get()).min(8)
}

fn default_in_flight() -> usize {
    8
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, RunnerError> {
        Ok(toml::from_str(text)?)
    }

    /// Parse and validate a config file; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RunnerError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        let bad = |m: String| Err(RunnerError::Config(m));
        if self.datasets.is_empty() {
            return bad("at least one dataset is required".into());
        }
        if self.forecasters.is_empty() {
            return bad("at least one forecaster is required".into());
        }
        if self.task.input_length == 0 || self.task.output_length == 0 {
            return bad("task lengths must be positive".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        self.split.validate().map_err(|e| RunnerError::Config(e.to_string()))?;
        let mut names = HashSet::new();
        for d in &self.datasets {
            if !names.insert(d.name.as_str()) {
                return bad(format!("duplicate dataset name `{}`", d.name));
            }
            if let DatasetSource::Csv { path, .. } = &d.source {
                let full = self.resolve(path);
                if !full.is_file() {
                    return bad(format!("dataset `{}`: file {} not found", d.name, full.display()));
                }
            }
        }
        let mut names = HashSet::new();
        for f in &self.forecasters {
            let name = f.display_name();
            if !names.insert(name.clone()) {
                return bad(format!("duplicate forecaster name `{name}`; set `name` to disambiguate"));
            }
            match f {
                ForecasterConfig::Linear { model, .. } => {
                    model.validate().map_err(|e| RunnerError::Config(format!("{name}: {e}")))?
                }
                ForecasterConfig::Llm { adapter, decoding, .. } => {
                    decoding.validate().map_err(|e| RunnerError::Config(format!("{name}: {e}")))?;
                    if let AdapterConfig::Mock { fixture, script } = adapter {
                        match (fixture, script) {
                            (Some(p), None) if !self.resolve(p).is_file() => {
                                return bad(format!("{name}: mock fixture {} not found", self.resolve(p).display()))
                            }
                            (Some(_), None) | (None, Some(_)) => {}
                            _ => return bad(format!("{name}: mock adapter needs exactly one of `fixture` or `script`")),
                        }
                    }
                }
                ForecasterConfig::Naive { .. } => {}
            }
        }
        if let Some(n) = &self.noise {
            n.validate()?;
        }
        if let Some(f) = &self.filter {
            f.validate()?;
        }
        if let Some(levels) = &self.sweep {
            if levels.is_empty() || levels.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                return bad("sweep levels must be a non-empty list of non-negative numbers".into());
            }
        }
        Ok(())
    }

    fn levels(&self) -> Vec<Option<f64>> {
        match &self.sweep {
            Some(levels) => levels.iter().copied().map(Some).collect(),
            None => vec![None],
        }
    }
}

/// Write a series as plain headerless CSV, one row per time step.
pub fn write_csv<T: crate::Scalar>(series: &TimeSeries<T>, path: impl AsRef<Path>) -> Result<(), RunnerError> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    for row in series.values().rows() {
        let line = row.iter().map(|v| v.to_f64_lossy().to_string()).collect::<Vec<_>>().join(",");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// The clean series for a dataset and the one the forecaster observes at a noise level.
pub fn prepare_dataset(
    cfg: &ExperimentConfig,
    dataset: &DatasetConfig,
    level: Option<f64>,
) -> Result<(TimeSeries<f64>, TimeSeries<f64>), RunnerError> {
    let seed = cfg.seed;
    let (clean, mut observed) = match &dataset.source {
        DatasetSource::Csv { path, layout } => {
            let s = load_csv(cfg.resolve(path), *layout)?;
            (s.clone(), s)
        }
        DatasetSource::Function(spec) => {
            let at = |std: f64| {
                FunctionSpec {
                    noise_std: std,
                    seed: spec.seed.wrapping_add(seed),
                    ..spec.clone()
                }
                .generate_series()
            };
            (at(0.0)?, at(level.unwrap_or(spec.noise_std))?)
        }
        DatasetSource::FunctionSuite { length, noise_std, seed: s } => (
            function_suite(*length, 0.0, s.wrapping_add(seed))?,
            function_suite(*length, level.unwrap_or(*noise_std), s.wrapping_add(seed))?,
        ),
    };
    if let (Some(sigma), DatasetSource::Csv { .. }) = (level, &dataset.source) {
        observed = inject_noise(
            &observed,
            &NoiseSpec::Gaussian {
                sigma,
                relative: false,
                seed,
            },
        )?;
    }
    if let Some(spec) = &cfg.noise {
        observed = inject_noise(&observed, &reseed(spec, seed))?;
    }
    if let Some(filter) = &cfg.filter {
        observed = apply_filter(&observed, filter)?;
    }
    Ok((clean, observed))
}

fn reseed(spec: &NoiseSpec, offset: u64) -> NoiseSpec {
    let mut spec = spec.clone();
    match &mut spec {
        NoiseSpec::Gaussian { seed, .. } | NoiseSpec::Constant { seed, .. } | NoiseSpec::Missing { seed, .. } => {
            *seed = seed.wrapping_add(offset)
        }
        NoiseSpec::FreqAdd { .. } | NoiseSpec::FreqReplace { .. } => {}
    }
    spec
}

/// One completed or failed cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub dataset: String,
    pub forecaster: String,
    pub sigma: Option<f64>,
    pub noise: Option<String>,
    pub filter: Option<String>,
    pub report: Option<EvalReport>,
    /// LLM rendering scale per channel of the last prediction.
    pub llm_scaling: Vec<ScalingConfig>,
    pub scaling_rule: Option<ScalingRule>,
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    host: String,
    cells: usize,
    succeeded: usize,
    failed: usize,
    errors: Vec<ManifestError<'a>>,
    files: Vec<String>,
}

#[derive(Debug, Serialize)]
struct ManifestError<'a> {
    run_id: &'a str,
    dataset: &'a str,
    forecaster: &'a str,
    sigma: Option<f64>,
    error: &'a str,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub records: Vec<RunRecord>,
    pub output_dir: PathBuf,
    pub cost_comparison: Option<CostComparison>,
}

impl ExperimentOutcome {
    pub fn errors(&self) -> impl Iterator<Item = &RunRecord> {
        self.records.iter().filter(|r| r.error.is_some())
    }

    pub fn success(&self) -> bool {
        self.errors().next().is_none()
    }

    /// Process exit status: 0 when every cell succeeded.
    pub fn exit_code(&self) -> i32 {
        if self.success() {
            0
        } else {
            1
        }
    }
}

struct Cell {
    index: usize,
    dataset: usize,
    level: Option<f64>,
    forecaster: usize,
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

fn run_id(dataset: &str, forecaster: &str, level: Option<f64>) -> String {
    match level {
        Some(s) => format!("{}__{}__sigma{s}", sanitize(dataset), sanitize(forecaster)),
        None => format!("{}__{}", sanitize(dataset), sanitize(forecaster)),
    }
}

fn build_adapter(cfg: &ExperimentConfig, adapter: &AdapterConfig) -> Result<Arc<dyn LlmAdapter>, RunnerError> {
    let inner: Arc<dyn LlmAdapter> = match adapter {
        AdapterConfig::Mock { fixture: Some(p), .. } => Arc::new(MockAdapter::from_fixture(cfg.resolve(p))?),
        AdapterConfig::Mock { script: Some(s), .. } => Arc::new(MockAdapter::new(s.clone())),
        AdapterConfig::Mock { .. } => return Err(RunnerError::Config("mock adapter without fixture or script".into())),
        AdapterConfig::Http(http) => Arc::new(HttpAdapter::new(http.clone())),
    };
    Ok(Arc::new(InFlightLimiter::new(inner, cfg.max_in_flight)))
}

/// Execute one cell; LLM traffic goes to `transcript`.
fn run_cell(
    cfg: &ExperimentConfig,
    cell: &Cell,
    adapters: &[Option<Arc<dyn LlmAdapter>>],
    transcript_dir: &Path,
) -> RunRecord {
    let dataset = &cfg.datasets[cell.dataset];
    let fcfg = &cfg.forecasters[cell.forecaster];
    let name = fcfg.display_name();
    let id = run_id(&dataset.name, &name, cell.level);
    let mut record = RunRecord {
        run_id: id.clone(),
        dataset: dataset.name.clone(),
        forecaster: name.clone(),
        sigma: cell.level,
        noise: cfg.noise.as_ref().map(|n| n.label().to_owned()),
        filter: cfg.filter.as_ref().map(|f| f.label().to_owned()),
        report: None,
        llm_scaling: Vec::new(),
        scaling_rule: None,
        error: None,
    };
    let result = (|| -> Result<(EvalReport, Vec<ScalingConfig>), RunnerError> {
        let (clean, observed) = prepare_dataset(cfg, dataset, cell.level)?;
        let reference = match cfg.truth {
            TruthSource::Clean => Some(&clean),
            TruthSource::Observed => None,
        };
        let opts = EvalOptions {
            dataset_name: dataset.name.clone(),
            split: cfg.split,
            metric_space: cfg.metric_space,
        };
        let eval = |f: &mut dyn Forecaster<f64>| run_protocol(cfg.protocol, &observed, reference, cfg.task, f, &opts);
        let mut report = match fcfg {
            ForecasterConfig::Linear { model, .. } => {
                let mut model = model.clone();
                model.seed = model.seed.wrapping_add(cfg.seed);
                (eval(&mut SingleShotLinear::<f64>::new(model))?, Vec::new())
            }
            ForecasterConfig::Llm {
                style,
                decoding,
                scaling,
                shots,
                ..
            } => {
                let shared = adapters[cell.forecaster].clone().expect("adapter built for llm forecaster");
                let path = transcript_dir.join(format!("{id}.jsonl"));
                let logged: Arc<dyn LlmAdapter> = Arc::new(TranscriptAdapter::create(shared, &path)?);
                let mut f = LlmForecaster::new(logged, *style);
                f.decoding = decoding.clone();
                f.scaling = *scaling;
                f.shots = *shots;
                let report = eval(&mut f)?;
                (report, f.last_scalings.clone())
            }
            ForecasterConfig::Naive { method, .. } => match method {
                NaiveMethod::LastValue => (eval(&mut LastValue)?, Vec::new()),
                NaiveMethod::SeasonalRepeat { period } => (eval(&mut SeasonalRepeat { period: *period })?, Vec::new()),
                NaiveMethod::Polynomial { degree, window } => (
                    eval(&mut PolynomialExtrapolator {
                        degree: *degree,
                        window: *window,
                    })?,
                    Vec::new(),
                ),
            },
        };
        report.0.forecaster = name.clone();
        report.0.cost.forecaster = name.clone();
        Ok(report)
    })();
    match result {
        Ok((report, scalings)) => {
            record.report = Some(report);
            record.llm_scaling = scalings;
            if let ForecasterConfig::Llm { scaling, .. } = fcfg {
                record.scaling_rule = Some(*scaling);
            }
        }
        Err(e) => {
            log::error!("{id}: {e}");
            record.error = Some(e.to_string());
        }
    }
    record
}

pub const SUMMARY_COLUMNS: [&str; 15] = [
    "dataset",
    "forecaster",
    "family",
    "protocol",
    "metric_space",
    "sigma",
    "noise",
    "filter",
    "windows",
    "mae",
    "mse",
    "status",
    "train_seconds",
    "infer_seconds",
    "total_seconds",
];

/// Summary columns holding wall-clock measurements.
pub const TIMING_COLUMNS: [&str; 3] = ["train_seconds", "infer_seconds", "total_seconds"];

fn family_label(f: CostFamily) -> &'static str {
    match f {
        CostFamily::Domain => "domain",
        CostFamily::Llm => "llm",
        CostFamily::Linear => "linear",
    }
}

fn write_summary(path: &Path, cfg: &ExperimentConfig, records: &[RunRecord]) -> Result<(), RunnerError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| RunnerError::Config(format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| RunnerError::Config(format!("{}: {e}", path.display()));
    w.write_record(SUMMARY_COLUMNS).map_err(csv_err)?;
    for r in records {
        let opt = |v: Option<String>| v.unwrap_or_default();
        let (family, windows, mae, mse, status, train, infer, total) = match &r.report {
            Some(rep) => (
                family_label(rep.family).to_owned(),
                rep.windows.to_string(),
                format!("{:.10e}", rep.mae),
                format!("{:.10e}", rep.mse),
                "ok".to_owned(),
                format!("{:.6}", rep.cost.train_seconds),
                format!("{:.6}", rep.cost.infer_seconds),
                format!("{:.6}", rep.cost.total()),
            ),
            None => Default::default(),
        };
        let status = if r.error.is_some() { "error".to_owned() } else { status };
        w.write_record([
            r.dataset.clone(),
            r.forecaster.clone(),
            family,
            cfg.protocol.to_string(),
            cfg.metric_space.to_string(),
            opt(r.sigma.map(|s| s.to_string())),
            opt(r.noise.clone()),
            opt(r.filter.clone()),
            windows,
            mae,
            mse,
            status,
            train,
            infer,
            total,
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<(), RunnerError> {
    fs::write(path, text).map_err(io_err(path))
}

fn write_plots(dir: &Path, cfg: &ExperimentConfig, records: &[RunRecord]) -> Result<Vec<PathBuf>, RunnerError> {
    let mut written = Vec::new();
    if cfg.sweep.is_some() {
        let mut curves: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
        for r in records {
            if let (Some(rep), Some(sigma)) = (&r.report, r.sigma) {
                curves.entry((r.dataset.clone(), r.forecaster.clone())).or_default().push((sigma, rep.mae));
            }
        }
        for ((dataset, forecaster), points) in curves {
            let path = dir.join(format!("noise_sweep__{}__{}.csv", sanitize(&dataset), sanitize(&forecaster)));
            let body: String = points.iter().map(|(x, y)| format!("{x},{y}\n")).collect();
            write_text(&path, &format!("x,y\n{body}"))?;
            written.push(path);
        }
    }
    let path = dir.join("time_vs_mae.csv");
    let mut body = String::from("x,y,dataset,forecaster,sigma\n");
    for r in records {
        if let Some(rep) = &r.report {
            body += &format!(
                "{},{},{},{},{}\n",
                rep.cost.total(),
                rep.mae,
                r.dataset,
                r.forecaster,
                r.sigma.map(|s| s.to_string()).unwrap_or_default()
            );
        }
    }
    write_text(&path, &body)?;
    written.push(path);
    Ok(written)
}

/// Run every cell and write `summary.csv`, `reports/`, `transcripts/`, `plots/` and `manifest.json`
/// under the output directory. Cell failures are collected, not fatal.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, RunnerError> {
    cfg.validate()?;
    let out = cfg.output_path();
    let reports_dir = out.join("reports");
    let transcript_dir = out.join("transcripts");
    let plots_dir = out.join("plots");
    for d in [&out, &reports_dir, &transcript_dir, &plots_dir] {
        fs::create_dir_all(d).map_err(io_err(d))?;
    }

    let adapters = cfg
        .forecasters
        .iter()
        .map(|f| match f {
            ForecasterConfig::Llm { adapter, .. } => build_adapter(cfg, adapter).map(Some),
            _ => Ok(None),
        })
        .collect::<Result<Vec<_>, _>>()?;

    let levels = cfg.levels();
    let mut cells = Vec::new();
    for dataset in 0..cfg.datasets.len() {
        for &level in &levels {
            for forecaster in 0..cfg.forecasters.len() {
                cells.push(Cell {
                    index: cells.len(),
                    dataset,
                    level,
                    forecaster,
                });
            }
        }
    }
    log::info!("running {} cells on {} workers", cells.len(), cfg.workers);

    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, RunRecord)>();
    let mut slots: Vec<Option<RunRecord>> = vec![None; cells.len()];
    let mut write_failures = Vec::new();
    std::thread::scope(|scope| {
        for _ in 0..cfg.workers.min(cells.len()) {
            let tx = tx.clone();
            let (cells, next, adapters, transcript_dir) = (&cells, &next, &adapters, &transcript_dir);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cell) = cells.get(i) else { break };
                let record = run_cell(cfg, cell, adapters, transcript_dir);
                if tx.send((cell.index, record)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        // Single writer: reports land as cells finish.
        for (index, record) in rx {
            let path = reports_dir.join(format!("{}.json", record.run_id));
            let written = serde_json::to_string_pretty(&record)
                .map_err(RunnerError::from)
                .and_then(|text| write_text(&path, &text));
            if let Err(e) = written {
                write_failures.push(e);
            }
            slots[index] = Some(record);
        }
    });
    if let Some(e) = write_failures.into_iter().next() {
        return Err(e);
    }
    let records: Vec<RunRecord> = slots.into_iter().map(|r| r.expect("every cell reports")).collect();

    write_summary(&out.join("summary.csv"), cfg, &records)?;
    let mut files = vec![out.join("summary.csv")];
    files.extend(write_plots(&plots_dir, cfg, &records)?);

    let costs = |family: CostFamily| -> Vec<_> {
        records
            .iter()
            .filter_map(|r| r.report.as_ref())
            .filter(|rep| rep.family == family)
            .map(|rep| rep.cost.clone())
            .collect()
    };
    let llm_costs = costs(CostFamily::Llm);
    let cost_comparison = if llm_costs.is_empty() {
        None
    } else {
        let cmp = CostComparison::new(&llm_costs, &costs(CostFamily::Domain), &costs(CostFamily::Linear))?;
        let path = out.join("cost_comparison.txt");
        write_text(&path, &format!("{cmp}\n"))?;
        files.push(path);
        Some(cmp)
    };

    let errors: Vec<ManifestError> = records
        .iter()
        .filter_map(|r| {
            r.error.as_deref().map(|error| ManifestError {
                run_id: &r.run_id,
                dataset: &r.dataset,
                forecaster: &r.forecaster,
                sigma: r.sigma,
                error,
            })
        })
        .collect();
    let manifest = Manifest {
        host: host_descriptor(),
        cells: records.len(),
        succeeded: records.len() - errors.len(),
        failed: errors.len(),
        errors,
        files: files
            .iter()
            .map(|p| p.strip_prefix(&out).unwrap_or(p).display().to_string())
            .collect(),
    };
    write_text(&out.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)?;

    Ok(ExperimentOutcome {
        records,
        output_dir: out,
        cost_comparison,
    })
}

/// Summary CSV text with timing columns removed, for reproducibility comparisons.
pub fn strip_timing_columns(summary: &str) -> String {
    let mut lines = summary.lines();
    let Some(header) = lines.next() else { return String::new() };
    let keep: Vec<bool> = header.split(',').map(|h| !TIMING_COLUMNS.contains(&h)).collect();
    let filter = |line: &str| {
        line.split(',')
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(v, _)| v)
            .collect::<Vec<_>>()
            .join(",")
    };
    std::iter::once(filter(header)).chain(lines.map(filter)).collect::<Vec<_>>().join("\n") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_csv;

    fn base_config(dir: &Path) -> String {
        format!(
            r#"
output_dir = "{}"
metric_space = "raw"
workers = 2

[task]
input_length = 48
output_length = 12

[split]
test_fraction = 0.5
val_fraction = 0.0

[[datasets]]
name = "sine"
source = "function"
kind = "sine"
length = 200

[[forecasters]]
kind = "naive"
method = "last_value"
"#,
            dir.join("out").display()
        )
    }

    #[test]
    fn write_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = TimeSeries::from_columns(&[vec![0.1, 1.0 / 3.0], vec![-2.5e-7, 4.0]]).unwrap();
        let path = dir.path().join("s.csv");
        write_csv(&s, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        let back = parse_csv(&text, CsvLayout::Plain).unwrap();
        assert_eq!(back.values(), s.values());

        let one = TimeSeries::univariate(&[1.0, 2.0, 3.0]).unwrap();
        write_csv(&one, &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "1\n2\n3\n");
        assert!(matches!(
            write_csv(&one, dir.path().join("missing/s.csv")),
            Err(RunnerError::Io { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let dir = tempfile::tempdir().unwrap();
        let ok = ExperimentConfig::from_toml(&base_config(dir.path())).unwrap();
        ok.validate().unwrap();

        let missing = base_config(dir.path()).replace(
            "source = \"function\"\nkind = \"sine\"\nlength = 200",
            "source = \"csv\"\npath = \"nope.csv\"",
        );
        let cfg = ExperimentConfig::from_toml(&missing).unwrap();
        assert!(matches!(cfg.validate(), Err(RunnerError::Config(m)) if m.contains("not found")));

        let dup = base_config(dir.path()) + "\n[[forecasters]]\nkind = \"naive\"\nmethod = \"last_value\"\n";
        let cfg = ExperimentConfig::from_toml(&dup).unwrap();
        assert!(matches!(cfg.validate(), Err(RunnerError::Config(m)) if m.contains("duplicate")));

        assert!(ExperimentConfig::from_toml("datasets = []\nbogus = 1").is_err());
    }

    #[test]
    fn sweep_runs_and_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let text = base_config(dir.path()).replace("workers = 2", "workers = 2\nsweep = [0.0, 0.01]")
            + r#"
[[forecasters]]
kind = "linear"
variant = "rlinear"

[[forecasters]]
kind = "llm"
style = "llmtime_chat"
adapter = { kind = "mock", script = { mode = "persistence", count = 12 } }
decoding = { num_samples = 3 }
"#;
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let outcome = run_experiment(&cfg).unwrap();
        assert!(outcome.success(), "{:?}", outcome.errors().collect::<Vec<_>>());
        assert_eq!(outcome.records.len(), 6);
        let out = &outcome.output_dir;
        let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 7);
        assert!(out.join("plots/noise_sweep__sine__last_value.csv").is_file());
        assert!(out.join("plots/time_vs_mae.csv").is_file());
        assert!(out.join("manifest.json").is_file());
        assert!(out.join("cost_comparison.txt").is_file());
        let transcript = fs::read_to_string(out.join("transcripts/sine__llm-llmtime_chat__sigma0.jsonl")).unwrap();
        assert_eq!(transcript.lines().count(), 3);
        // persistence forecasts equal last-value forecasts up to rendering precision
        let mae = |name: &str| {
            outcome
                .records
                .iter()
                .find(|r| r.forecaster == name && r.sigma == Some(0.0))
                .and_then(|r| r.report.as_ref())
                .unwrap()
                .mae
        };
        assert!((mae("llm-llmtime_chat") - mae("last_value")).abs() < 1e-3);
    }

    #[test]
    fn failures_are_collected() {
        let dir = tempfile::tempdir().unwrap();
        let text = base_config(dir.path())
            + r#"
[[forecasters]]
kind = "naive"
method = "seasonal_repeat"
period = 500
"#;
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let outcome = run_experiment(&cfg).unwrap();
        assert_eq!(outcome.exit_code(), 1);
        assert_eq!(outcome.errors().count(), 1);
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(outcome.output_dir.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["failed"], 1);
        assert_eq!(manifest["errors"][0]["forecaster"], "seasonal_repeat_500");
    }

    #[test]
    fn timing_columns_stripped() {
        let text = "dataset,mae,train_seconds,infer_seconds,total_seconds\na,1,0.1,0.2,0.3\n";
        assert_eq!(strip_timing_columns(text), "dataset,mae\na,1\n");
    }
}
