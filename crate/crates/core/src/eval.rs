//! Metrics, the last-sample and sliding-window protocols, and cost accounting.

use std::fmt;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linear::{fit_single_shot, FittedLinearModel, LinearError, LinearModelConfig};
use crate::llm::LlmError;
use crate::scalar::Scalar;
use crate::series::{chronological_split, destandardize_array, standardize, ChannelStats, ForecastTask, SeriesError, SplitSpec, TimeSeries};

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error(transparent)]
    Linear(#[from] LinearError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("forecaster `{0}` was asked to predict before fitting")]
    NotFitted(String),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape mismatch: prediction {pred:?} vs truth {truth:?}")]
    ShapeMismatch { pred: (usize, usize), truth: (usize, usize) },
    #[error("test segment has {len} rows, protocol needs at least {needed}")]
    SeriesTooShort { len: usize, needed: usize },
    #[error("reference series shape {reference:?} differs from observed {observed:?}")]
    ReferenceMismatch { reference: (usize, usize), observed: (usize, usize) },
    #[error("cost aggregation over an empty record list")]
    EmptyList,
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("forecaster `{name}` failed: {source}")]
    Forecaster {
        name: String,
        #[source]
        source: ForecastError,
    },
}

/// Which cost formula applies to a forecaster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostFamily {
    /// Trained per dataset: training plus inference.
    Domain,
    /// Pre-trained, prompted: inference only.
    Llm,
    /// Trained on the input sequence only: training plus inference.
    Linear,
}

/// Anything that maps an `I x d` input window to an `O x d` forecast.
pub trait Forecaster<T: Scalar>: Send {
    fn name(&self) -> String;

    fn family(&self) -> CostFamily;

    /// Per-call training hook, timed as training cost. Returns whether any fitting happened.
    fn fit(&mut self, _input: ArrayView2<'_, T>, _horizon: usize) -> Result<bool, ForecastError> {
        Ok(false)
    }

    fn predict(&mut self, input: ArrayView2<'_, T>, horizon: usize) -> Result<Array2<T>, ForecastError>;
}

/// Repeats the last observed value of each channel.
#[derive(Debug, Clone, Default)]
pub struct LastValue;

impl<T: Scalar> Forecaster<T> for LastValue {
    fn name(&self) -> String {
        "last_value".into()
    }

    fn family(&self) -> CostFamily {
        CostFamily::Domain
    }

    fn predict(&mut self, input: ArrayView2<'_, T>, horizon: usize) -> Result<Array2<T>, ForecastError> {
        let last = input.row(input.nrows() - 1);
        Ok(Array2::from_shape_fn((horizon, input.ncols()), |(_, c)| last[c]))
    }
}

/// Repeats the last full season of length `period`.
#[derive(Debug, Clone)]
pub struct SeasonalRepeat {
    pub period: usize,
}

impl<T: Scalar> Forecaster<T> for SeasonalRepeat {
    fn name(&self) -> String {
        format!("seasonal_repeat_{}", self.period)
    }

    fn family(&self) -> CostFamily {
        CostFamily::Domain
    }

    fn predict(&mut self, input: ArrayView2<'_, T>, horizon: usize) -> Result<Array2<T>, ForecastError> {
        let n = input.nrows();
        if self.period == 0 || self.period > n {
            return Err(ForecastError::Other(format!("season {} does not fit input of {n} rows", self.period)));
        }
        let start = n - self.period;
        Ok(Array2::from_shape_fn((horizon, input.ncols()), |(h, c)| {
            input[[start + h % self.period, c]]
        }))
    }
}

/// Unregularized least-squares polynomial over the most recent `window` points, extrapolated.
///
/// High degrees chase noise in the input and amplify it in the forecast; this is the
/// noise-sensitive reference the robustness checks contrast against.
#[derive(Debug, Clone)]
pub struct PolynomialExtrapolator {
    pub degree: usize,
    pub window: usize,
}

impl PolynomialExtrapolator {
    fn fit_channel(&self, y: &[f64], horizon: usize) -> Result<Vec<f64>, ForecastError> {
        let w = y.len();
        if w <= self.degree {
            return Err(ForecastError::Other(format!(
                "degree {} needs more than {w} points",
                self.degree
            )));
        }
        // Abscissae scaled to [0, 1] over the fit window for conditioning.
        let scale = (w - 1).max(1) as f64;
        let vander = DMatrix::from_fn(w, self.degree + 1, |r, k| (r as f64 / scale).powi(k as i32));
        let rhs = DVector::from_column_slice(y);
        let coef = vander
            .svd(true, true)
            .solve(&rhs, 1e-14)
            .map_err(|e| ForecastError::Other(e.to_string()))?;
        Ok((0..horizon)
            .map(|h| {
                let x = (w + h) as f64 / scale;
                coef.iter().rev().fold(0.0, |acc, &c| acc * x + c)
            })
            .collect())
    }
}

impl<T: Scalar> Forecaster<T> for PolynomialExtrapolator {
    fn name(&self) -> String {
        format!("poly{}_w{}", self.degree, self.window)
    }

    fn family(&self) -> CostFamily {
        CostFamily::Domain
    }

    fn predict(&mut self, input: ArrayView2<'_, T>, horizon: usize) -> Result<Array2<T>, ForecastError> {
        let n = input.nrows();
        let w = self.window.min(n);
        let mut out = Array2::zeros((horizon, input.ncols()));
        for c in 0..input.ncols() {
            let y: Vec<f64> = input.slice(s![n - w.., c]).iter().map(|v| v.to_f64_lossy()).collect();
            for (h, v) in self.fit_channel(&y, horizon)?.into_iter().enumerate() {
                out[[h, c]] = T::of(v);
            }
        }
        Ok(out)
    }
}

/// DLinear-S / RLinear-S: refits on every input window it is given, then forecasts autoregressively.
#[derive(Debug, Clone)]
pub struct SingleShotLinear<T> {
    pub config: LinearModelConfig,
    pub model: Option<FittedLinearModel<T>>,
}

impl<T: Scalar> SingleShotLinear<T> {
    pub fn new(config: LinearModelConfig) -> Self {
        SingleShotLinear { config, model: None }
    }
}

impl<T: Scalar> Forecaster<T> for SingleShotLinear<T> {
    fn name(&self) -> String {
        format!("{}-{:?}", self.config.variant.label(), self.config.loss).to_lowercase()
    }

    fn family(&self) -> CostFamily {
        CostFamily::Linear
    }

    fn fit(&mut self, input: ArrayView2<'_, T>, horizon: usize) -> Result<bool, ForecastError> {
        let series = TimeSeries::from_columns(
            &(0..input.ncols()).map(|c| input.column(c).to_vec()).collect::<Vec<_>>(),
        )
        .map_err(|e| ForecastError::Other(e.to_string()))?;
        let task = ForecastTask::new(input.nrows(), horizon);
        self.model = Some(fit_single_shot(&series, task, &self.config)?);
        Ok(true)
    }

    fn predict(&mut self, input: ArrayView2<'_, T>, horizon: usize) -> Result<Array2<T>, ForecastError> {
        let model = self.model.as_ref().ok_or_else(|| ForecastError::NotFitted(Forecaster::<T>::name(self)))?;
        Ok(model.predict(input, horizon)?)
    }
}

/// Per-channel error pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub mae: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub mse: f64,
    pub per_channel: Vec<ChannelMetrics>,
}

/// MAE and MSE over all `O x d` entries, plus per-channel values.
pub fn compute_metrics<T: Scalar>(pred: ArrayView2<'_, T>, truth: ArrayView2<'_, T>) -> Result<Metrics, EvalError> {
    if pred.dim() != truth.dim() || pred.is_empty() {
        return Err(EvalError::ShapeMismatch {
            pred: pred.dim(),
            truth: truth.dim(),
        });
    }
    let (o, d) = pred.dim();
    let mut per_channel = Vec::with_capacity(d);
    for c in 0..d {
        let (mut abs, mut sq) = (0.0, 0.0);
        for t in 0..o {
            let e = pred[[t, c]].to_f64_lossy() - truth[[t, c]].to_f64_lossy();
            abs += e.abs();
            sq += e * e;
        }
        per_channel.push(ChannelMetrics {
            mae: abs / o as f64,
            mse: sq / o as f64,
        });
    }
    let mae = per_channel.iter().map(|m| m.mae).sum::<f64>() / d as f64;
    let mse = per_channel.iter().map(|m| m.mse).sum::<f64>() / d as f64;
    Ok(Metrics { mae, mse, per_channel })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    #[default]
    LastSample,
    Sliding,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::LastSample => "last_sample",
            Protocol::Sliding => "sliding",
        })
    }
}

/// Whether series are standardized with train-split statistics before forecasting and scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricSpace {
    #[default]
    Standardized,
    Raw,
}

impl fmt::Display for MetricSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricSpace::Standardized => "standardized",
            MetricSpace::Raw => "raw",
        })
    }
}

/// Wall-clock cost of one (dataset, forecaster) run, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRecord {
    pub dataset: String,
    pub forecaster: String,
    pub train_seconds: f64,
    pub infer_seconds: f64,
}

impl CostRecord {
    pub fn total(&self) -> f64 {
        self.train_seconds + self.infer_seconds
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub forecaster: String,
    pub family: CostFamily,
    pub protocol: Protocol,
    pub metric_space: MetricSpace,
    pub windows: usize,
    pub mae: f64,
    pub mse: f64,
    pub per_channel: Vec<ChannelMetrics>,
    pub cost: CostRecord,
    pub host: String,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub dataset_name: String,
    pub split: SplitSpec,
    pub metric_space: MetricSpace,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            dataset_name: "dataset".into(),
            split: SplitSpec::default(),
            metric_space: MetricSpace::Standardized,
        }
    }
}

/// Short machine description attached to every report; costs are not normalized across hosts.
pub fn host_descriptor() -> String {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{}-{} ({threads} threads)", std::env::consts::OS, std::env::consts::ARCH)
}

/// Evaluate on the final `I + O` rows of the test split.
pub fn run_last_sample<T: Scalar>(
    dataset: &TimeSeries<T>,
    task: ForecastTask,
    forecaster: &mut dyn Forecaster<T>,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    run_protocol(Protocol::LastSample, dataset, None, task, forecaster, opts)
}

/// Evaluate every window start `0, O, 2O, ...` of the test split and average the metrics.
pub fn run_sliding<T: Scalar>(
    dataset: &TimeSeries<T>,
    task: ForecastTask,
    forecaster: &mut dyn Forecaster<T>,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    run_protocol(Protocol::Sliding, dataset, None, task, forecaster, opts)
}

/// Window starts within a test segment of `len` rows.
pub fn window_starts(protocol: Protocol, len: usize, task: ForecastTask) -> Result<Vec<usize>, EvalError> {
    let span = task.span();
    if len < span {
        return Err(EvalError::SeriesTooShort { len, needed: span });
    }
    Ok(match protocol {
        Protocol::LastSample => vec![len - span],
        Protocol::Sliding => {
            let count = (len - span) / task.output_length + 1;
            (0..count).map(|k| k * task.output_length).collect()
        }
    })
}

/// General protocol runner. Inputs come from `observed`; ground truth comes from `reference`
/// when given (e.g. the clean series behind a corrupted one), otherwise from `observed`.
pub fn run_protocol<T: Scalar>(
    protocol: Protocol,
    observed: &TimeSeries<T>,
    reference: Option<&TimeSeries<T>>,
    task: ForecastTask,
    forecaster: &mut dyn Forecaster<T>,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    if let Some(r) = reference {
        if r.values().dim() != observed.values().dim() {
            return Err(EvalError::ReferenceMismatch {
                reference: r.values().dim(),
                observed: observed.values().dim(),
            });
        }
    }
    let split = chronological_split(observed, &opts.split)?;
    let truth_series = reference.unwrap_or(observed);
    let (inputs, truths) = match opts.metric_space {
        MetricSpace::Standardized => {
            let stats = ChannelStats::fit(&split.train);
            (standardize(observed, &stats)?, standardize(truth_series, &stats)?)
        }
        MetricSpace::Raw => (observed.clone(), truth_series.clone()),
    };
    let test_start = observed.len() - split.test.len();
    let starts = window_starts(protocol, split.test.len(), task)?;

    let name = forecaster.name();
    let wrap = |source| EvalError::Forecaster {
        name: name.clone(),
        source,
    };
    let (i, o) = (task.input_length, task.output_length);
    let mut train_seconds = 0.0;
    let mut infer_seconds = 0.0;
    let mut windows = Vec::with_capacity(starts.len());
    for &start in &starts {
        let at = test_start + start;
        let input = inputs.values().slice_move(s![at..at + i, ..]);
        let truth = truths.values().slice_move(s![at + i..at + i + o, ..]);

        let clock = Instant::now();
        if forecaster.fit(input, o).map_err(wrap)? {
            train_seconds += clock.elapsed().as_secs_f64();
        }

        let clock = Instant::now();
        let pred = forecaster.predict(input, o).map_err(wrap)?;
        infer_seconds += clock.elapsed().as_secs_f64();

        windows.push(compute_metrics(pred.view(), truth)?);
    }

    let count = windows.len() as f64;
    let d = observed.channels();
    let per_channel = (0..d)
        .map(|c| ChannelMetrics {
            mae: windows.iter().map(|w| w.per_channel[c].mae).sum::<f64>() / count,
            mse: windows.iter().map(|w| w.per_channel[c].mse).sum::<f64>() / count,
        })
        .collect();
    Ok(EvalReport {
        dataset: opts.dataset_name.clone(),
        forecaster: name.clone(),
        family: forecaster.family(),
        protocol,
        metric_space: opts.metric_space,
        windows: windows.len(),
        mae: windows.iter().map(|w| w.mae).sum::<f64>() / count,
        mse: windows.iter().map(|w| w.mse).sum::<f64>() / count,
        per_channel,
        cost: CostRecord {
            dataset: opts.dataset_name.clone(),
            forecaster: name,
            train_seconds,
            infer_seconds,
        },
        host: host_descriptor(),
    })
}

/// Map a standardized forecast back to the raw scale.
pub fn to_raw_scale<T: Scalar>(values: ArrayView2<'_, T>, stats: &ChannelStats) -> Array2<T> {
    destandardize_array(values, stats)
}

/// Mean per-dataset cost: `C^T + C^I` for domain and linear forecasters, `C^I` alone for LLMs.
pub fn aggregate_costs(records: &[CostRecord], family: CostFamily) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyList);
    }
    let per_dataset = |r: &CostRecord| match family {
        CostFamily::Llm => r.infer_seconds,
        CostFamily::Domain | CostFamily::Linear => r.train_seconds + r.infer_seconds,
    };
    Ok(records.iter().map(per_dataset).sum::<f64>() / records.len() as f64)
}

/// The two conditions under which LLM forecasters are cost-efficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostComparison {
    pub llm: f64,
    pub domain: Option<f64>,
    pub linear: Option<f64>,
}

impl CostComparison {
    pub fn new(llm: &[CostRecord], domain: &[CostRecord], linear: &[CostRecord]) -> Result<Self, EvalError> {
        let opt = |records: &[CostRecord], family| {
            if records.is_empty() {
                Ok(None)
            } else {
                aggregate_costs(records, family).map(Some)
            }
        };
        Ok(CostComparison {
            llm: aggregate_costs(llm, CostFamily::Llm)?,
            domain: opt(domain, CostFamily::Domain)?,
            linear: opt(linear, CostFamily::Linear)?,
        })
    }

    pub fn llm_cheaper_than_domain(&self) -> Option<bool> {
        self.domain.map(|d| self.llm < d)
    }

    pub fn llm_cheaper_than_linear(&self) -> Option<bool> {
        self.linear.map(|l| self.llm < l)
    }

    /// Both inequalities hold.
    pub fn llm_cost_efficient(&self) -> Option<bool> {
        Some(self.llm_cheaper_than_domain()? && self.llm_cheaper_than_linear()?)
    }
}

impl fmt::Display for CostComparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = |v: Option<bool>| match v {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "n/a",
        };
        let show = |v: Option<f64>| v.map_or("n/a".to_owned(), |x| format!("{x:.6}s"));
        writeln!(
            f,
            "C_LLM = {:.6}s < C_Domain = {} : {}",
            self.llm,
            show(self.domain),
            verdict(self.llm_cheaper_than_domain())
        )?;
        write!(
            f,
            "C_LLM = {:.6}s < C_Linear = {} : {}",
            self.llm,
            show(self.linear),
            verdict(self.llm_cheaper_than_linear())
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn metric_examples() {
        let truth = array![[1.0, 2.0], [3.0, 4.0]];
        let m = compute_metrics(truth.view(), truth.view()).unwrap();
        assert_eq!((m.mae, m.mse), (0.0, 0.0));
        let pred = truth.mapv(|v| v + 2.0);
        let m = compute_metrics(pred.view(), truth.view()).unwrap();
        assert_eq!((m.mae, m.mse), (2.0, 4.0));
        assert!(compute_metrics(pred.view(), array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn metrics_match_direct_summation() {
        let pred = array![[0.3, -1.2], [2.5, 0.0], [-0.7, 4.1]];
        let truth = array![[1.0, -1.0], [2.0, 0.5], [0.2, 3.0]];
        let diffs = [-0.7, -0.2, 0.5, -0.5, -0.9, 1.1];
        let mae: f64 = diffs.iter().map(|d: &f64| d.abs()).sum::<f64>() / 6.0;
        let mse: f64 = diffs.iter().map(|d| d * d).sum::<f64>() / 6.0;
        let m = compute_metrics(pred.view(), truth.view()).unwrap();
        assert!((m.mae - mae).abs() < 1e-12 && (m.mse - mse).abs() < 1e-12);
        let swapped = compute_metrics(truth.view(), pred.view()).unwrap();
        assert_eq!(swapped, m);
    }

    fn raw_opts(test_fraction: f64) -> EvalOptions {
        EvalOptions {
            dataset_name: "fixture".into(),
            split: SplitSpec { test_fraction, val_fraction: 0.0 },
            metric_space: MetricSpace::Raw,
        }
    }

    #[test]
    fn last_value_on_constant_and_ramp() {
        let constant = TimeSeries::univariate(&[3.0; 50]).unwrap();
        let r = run_last_sample(&constant, ForecastTask::new(4, 2), &mut LastValue, &raw_opts(0.2)).unwrap();
        assert_eq!(r.mae, 0.0);

        let ramp = TimeSeries::univariate(&(0..50).map(|t| t as f64).collect::<Vec<_>>()).unwrap();
        let r = run_last_sample(&ramp, ForecastTask::new(4, 2), &mut LastValue, &raw_opts(0.2)).unwrap();
        assert_eq!(r.mae, 1.5);
        assert_eq!(r.windows, 1);
        assert_eq!(r.cost.train_seconds, 0.0);
    }

    #[test]
    fn sliding_window_count() {
        // 0.5 * 40 = 20 test rows = I + 3O with I = 5, O = 5
        let ramp = TimeSeries::univariate(&(0..40).map(|t| t as f64).collect::<Vec<_>>()).unwrap();
        let r = run_sliding(&ramp, ForecastTask::new(5, 5), &mut LastValue, &raw_opts(0.5)).unwrap();
        assert_eq!(r.windows, 3);
        assert_eq!(window_starts(Protocol::Sliding, 20, ForecastTask::new(5, 5)).unwrap(), vec![0, 5, 10]);
        assert_eq!(window_starts(Protocol::Sliding, 10, ForecastTask::new(5, 5)).unwrap(), vec![0]);
        assert!(matches!(
            window_starts(Protocol::Sliding, 9, ForecastTask::new(5, 5)),
            Err(EvalError::SeriesTooShort { len: 9, needed: 10 })
        ));
    }

    #[test]
    fn seasonal_beats_last_value_on_sine() {
        let period = 12;
        let sine: Vec<f64> = (0..240).map(|t| (2.0 * std::f64::consts::PI * t as f64 / period as f64).sin()).collect();
        let s = TimeSeries::univariate(&sine).unwrap();
        let task = ForecastTask::new(24, 12);
        let opts = raw_opts(0.25);
        let seasonal = run_sliding(&s, task, &mut SeasonalRepeat { period }, &opts).unwrap();
        let last = run_sliding(&s, task, &mut LastValue, &opts).unwrap();
        assert!(seasonal.mae < 1e-9);
        assert!(last.mae > 0.3);
    }

    #[test]
    fn standardized_space_uses_train_stats() {
        let values: Vec<f64> = (0..100).map(|t| 10.0 + (t % 7) as f64).collect();
        let s = TimeSeries::univariate(&values).unwrap();
        let opts = EvalOptions {
            metric_space: MetricSpace::Standardized,
            ..raw_opts(0.2)
        };
        let raw = run_last_sample(&s, ForecastTask::new(7, 3), &mut LastValue, &raw_opts(0.2)).unwrap();
        let std = run_last_sample(&s, ForecastTask::new(7, 3), &mut LastValue, &opts).unwrap();
        let stats = ChannelStats::fit(&s.slice_rows(0..80));
        assert!((std.mae * stats.std[0] - raw.mae).abs() < 1e-12);
    }

    #[test]
    fn polynomial_is_exact_on_polynomials() {
        let cubic: Vec<f64> = (0..30).map(|t| {
            let x = t as f64 / 10.0;
            0.5 - x + 0.25 * x * x * x
        }).collect();
        let input = Array2::from_shape_vec((25, 1), cubic[..25].to_vec()).unwrap();
        let mut poly = PolynomialExtrapolator { degree: 3, window: 25 };
        let pred = Forecaster::<f64>::predict(&mut poly, input.view(), 5).unwrap();
        for h in 0..5 {
            assert!((pred[[h, 0]] - cubic[25 + h]).abs() < 1e-8);
        }
    }

    #[test]
    fn cost_formulas() {
        let rec = |t, i| CostRecord {
            dataset: "d".into(),
            forecaster: "f".into(),
            train_seconds: t,
            infer_seconds: i,
        };
        assert_eq!(aggregate_costs(&[rec(2.0, 1.0)], CostFamily::Linear).unwrap(), 3.0);
        assert_eq!(aggregate_costs(&[rec(2.0, 1.0)], CostFamily::Llm).unwrap(), 1.0);
        let three = [rec(1.0, 1.0), rec(2.0, 2.0), rec(3.0, 3.0)];
        assert_eq!(aggregate_costs(&three, CostFamily::Domain).unwrap(), 4.0);
        assert!(matches!(aggregate_costs(&[], CostFamily::Llm), Err(EvalError::EmptyList)));

        let cmp = CostComparison::new(&[rec(9.0, 1.5)], &[rec(10.0, 0.1)], &[rec(0.5, 0.1)]).unwrap();
        assert_eq!(cmp.llm_cheaper_than_domain(), Some(true));
        assert_eq!(cmp.llm_cheaper_than_linear(), Some(false));
        assert_eq!(cmp.llm_cost_efficient(), Some(false));
        let text = cmp.to_string();
        assert!(text.contains("C_Domain") && text.contains("PASS") && text.contains("FAIL"));
    }
}
