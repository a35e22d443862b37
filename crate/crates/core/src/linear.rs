//! Single-shot DLinear / RLinear forecasters.
//!
//! Both models map an `I'`-long window to an `O'`-long block with a dense linear layer.
//! DLinear splits the window into a moving-average trend and a seasonal remainder and
//! gives each its own layer; RLinear normalizes each window by its own mean and standard
//! deviation, applies one layer, and maps the output back. Training uses full-batch
//! gradient steps on the windows carved from a single input sequence, with early
//! stopping on the chronologically latest windows.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::series::{ChannelStats, ForecastTask, TimeSeries};
use crate::windowing::{make_windows, plan_windows, train_val_partition, WindowError, WindowPlan};

#[derive(Debug, Error)]
pub enum LinearError {
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error("decomposition kernel {kernel} too large for window length {len} (max {max})", max = 2 * len - 1)]
    KernelTooLarge { kernel: usize, len: usize },
    #[error("invalid linear model config: {0}")]
    InvalidConfig(String),
    #[error("loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearVariant {
    Dlinear,
    Rlinear,
}

impl LinearVariant {
    pub fn label(self) -> &'static str {
        match self {
            LinearVariant::Dlinear => "DLinear-S",
            LinearVariant::Rlinear => "RLinear-S",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain full-batch gradient descent with a fixed step.
    Gd,
    /// Full-batch Adam (beta1 0.9, beta2 0.999).
    Adam,
}

/// Guard for the per-window standard deviation in RLinear.
pub const INSTANCE_NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearModelConfig {
    pub variant: LinearVariant,
    pub loss: LossKind,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Odd moving-average length; DLinear only.
    pub decomposition_kernel: usize,
    /// Share of each channel's windows held out for early stopping.
    pub val_fraction: f64,
    pub seed: u64,
    /// Standardize each channel by the input sequence's own mean and std before windowing.
    pub standardize_input: bool,
}

impl Default for LinearModelConfig {
    fn default() -> Self {
        LinearModelConfig {
            variant: LinearVariant::Dlinear,
            loss: LossKind::L2,
            optimizer: Optimizer::Adam,
            learning_rate: 1e-2,
            max_epochs: 2000,
            patience: 100,
            decomposition_kernel: 25,
            val_fraction: 0.2,
            seed: 0,
            standardize_input: true,
        }
    }
}

impl LinearModelConfig {
    pub fn dlinear() -> Self {
        LinearModelConfig::default()
    }

    pub fn rlinear() -> Self {
        LinearModelConfig {
            variant: LinearVariant::Rlinear,
            ..LinearModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), LinearError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(LinearError::InvalidConfig(format!("learning rate {}", self.learning_rate)));
        }
        if self.max_epochs == 0 {
            return Err(LinearError::InvalidConfig("max_epochs must be positive".into()));
        }
        if self.decomposition_kernel.is_multiple_of(2) {
            return Err(LinearError::InvalidConfig(format!(
                "decomposition kernel {} must be odd",
                self.decomposition_kernel
            )));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(LinearError::InvalidConfig(format!("val_fraction {}", self.val_fraction)));
        }
        Ok(())
    }
}

/// Centered moving average with replicate padding, and the remainder `x - trend`.
pub fn decompose_moving_average<T: Scalar>(x: ArrayView1<'_, T>, kernel: usize) -> Result<(Array1<T>, Array1<T>), LinearError> {
    let len = x.len();
    if len == 0 {
        return Err(LinearError::ShapeMismatch("empty window".into()));
    }
    if kernel.is_multiple_of(2) {
        return Err(LinearError::InvalidConfig(format!("decomposition kernel {kernel} must be odd")));
    }
    if kernel > 2 * len - 1 {
        return Err(LinearError::KernelTooLarge { kernel, len });
    }
    let half = (kernel / 2) as isize;
    let norm = T::of(kernel as f64);
    let last = len as isize - 1;
    let trend = Array1::from_shape_fn(len, |t| {
        let t = t as isize;
        let sum: T = (t - half..=t + half).map(|j| x[j.clamp(0, last) as usize]).sum();
        sum / norm
    });
    let seasonal = &x - &trend;
    Ok((trend, seasonal))
}

/// Layer parameters. One weight/bias pair for RLinear, two (trend, seasonal) for DLinear.
/// Weights are `I' x O'`: entry `(i, j)` carries input step `i` into output step `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams<T> {
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
}

impl<T: Scalar> LinearParams<T> {
    pub fn zeros(variant: LinearVariant, inner_input: usize, inner_output: usize) -> Self {
        let blocks = block_count(variant);
        LinearParams {
            weights: vec![Array2::zeros((inner_input, inner_output)); blocks],
            biases: vec![Array1::zeros(inner_output); blocks],
        }
    }

    /// Weights uniform in `(-1/I', 1/I')`, biases zero.
    pub fn random(variant: LinearVariant, inner_input: usize, inner_output: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / inner_input as f64;
        let mut p = Self::zeros(variant, inner_input, inner_output);
        for w in &mut p.weights {
            w.mapv_inplace(|_| T::of(rng.random_range(-bound..bound)));
        }
        p
    }

    /// Flat view of all parameters in a fixed order: weights block by block, then biases.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for w in &self.weights {
            out.extend(w.iter().copied());
        }
        for b in &self.biases {
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn unflatten(&self, flat: &[T]) -> Self {
        let mut out = self.clone();
        let mut it = flat.iter().copied();
        for w in &mut out.weights {
            w.iter_mut().for_each(|v| *v = it.next().expect("flat length"));
        }
        for b in &mut out.biases {
            b.iter_mut().for_each(|v| *v = it.next().expect("flat length"));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

fn block_count(variant: LinearVariant) -> usize {
    match variant {
        LinearVariant::Dlinear => 2,
        LinearVariant::Rlinear => 1,
    }
}

/// Per-window mean and guarded standard deviation.
fn instance_stats<T: Scalar>(window: ArrayView1<'_, T>) -> (T, T) {
    let n = T::of(window.len() as f64);
    let mean = window.sum() / n;
    let var = window.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let eps = T::of(INSTANCE_NORM_EPS);
    (mean, var.sqrt().max(eps))
}

/// Batch features for one model variant.
struct Features<T> {
    blocks: Vec<Array2<T>>,
    /// RLinear per-row `(mean, std)`.
    norm: Option<(Array1<T>, Array1<T>)>,
}

fn features<T: Scalar>(
    variant: LinearVariant,
    kernel: usize,
    inputs: ArrayView2<'_, T>,
) -> Result<Features<T>, LinearError> {
    match variant {
        LinearVariant::Dlinear => {
            let mut trend = Array2::zeros(inputs.raw_dim());
            let mut seasonal = Array2::zeros(inputs.raw_dim());
            for (r, row) in inputs.axis_iter(Axis(0)).enumerate() {
                let (t, s) = decompose_moving_average(row, kernel)?;
                trend.row_mut(r).assign(&t);
                seasonal.row_mut(r).assign(&s);
            }
            Ok(Features {
                blocks: vec![trend, seasonal],
                norm: None,
            })
        }
        LinearVariant::Rlinear => {
            let rows = inputs.nrows();
            let mut normed = Array2::zeros(inputs.raw_dim());
            let mut means = Array1::zeros(rows);
            let mut stds = Array1::zeros(rows);
            for (r, row) in inputs.axis_iter(Axis(0)).enumerate() {
                let (m, s) = instance_stats(row);
                normed.row_mut(r).assign(&row.mapv(|v| (v - m) / s));
                means[r] = m;
                stds[r] = s;
            }
            Ok(Features {
                blocks: vec![normed],
                norm: Some((means, stds)),
            })
        }
    }
}

impl<T: Scalar> Features<T> {
    fn forward(&self, params: &LinearParams<T>) -> Array2<T> {
        let mut out = self.blocks[0].dot(&params.weights[0]) + &params.biases[0];
        for b in 1..self.blocks.len() {
            out = out + self.blocks[b].dot(&params.weights[b]) + &params.biases[b];
        }
        if let Some((means, stds)) = &self.norm {
            for (r, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
                let (m, s) = (means[r], stds[r]);
                row.mapv_inplace(|v| v * s + m);
            }
        }
        out
    }
}

/// Mean loss of a batch under fixed features, with its analytic gradient.
///
/// The loss is measured in the original (de-normalized) scale for both variants.
pub struct LinearObjective<T> {
    variant: LinearVariant,
    loss: LossKind,
    features: Features<T>,
    targets: Array2<T>,
}

impl<T: Scalar> LinearObjective<T> {
    pub fn new(
        variant: LinearVariant,
        loss: LossKind,
        kernel: usize,
        inputs: ArrayView2<'_, T>,
        targets: ArrayView2<'_, T>,
    ) -> Result<Self, LinearError> {
        if inputs.nrows() != targets.nrows() || inputs.nrows() == 0 {
            return Err(LinearError::ShapeMismatch(format!(
                "{} input rows vs {} target rows",
                inputs.nrows(),
                targets.nrows()
            )));
        }
        Ok(LinearObjective {
            variant,
            loss,
            features: features(variant, kernel, inputs)?,
            targets: targets.to_owned(),
        })
    }

    fn residuals(&self, params: &LinearParams<T>) -> Array2<T> {
        self.features.forward(params) - &self.targets
    }

    fn reduce(&self, residuals: &Array2<T>) -> T {
        let n = T::of(residuals.len() as f64);
        match self.loss {
            LossKind::L1 => residuals.iter().map(|r| r.abs()).sum::<T>() / n,
            LossKind::L2 => residuals.iter().map(|&r| r * r).sum::<T>() / n,
        }
    }

    pub fn loss(&self, params: &LinearParams<T>) -> T {
        self.reduce(&self.residuals(params))
    }

    pub fn loss_and_gradient(&self, params: &LinearParams<T>) -> (T, LinearParams<T>) {
        let residuals = self.residuals(params);
        let value = self.reduce(&residuals);
        let n = T::of(residuals.len() as f64);
        let two = T::of(2.0);
        // d loss / d output
        let mut upstream = match self.loss {
            LossKind::L1 => residuals.mapv(|r| if r == T::zero() { T::zero() } else { r.signum() / n }),
            LossKind::L2 => residuals.mapv(|r| two * r / n),
        };
        if let Some((_, stds)) = &self.features.norm {
            for (r, mut row) in upstream.axis_iter_mut(Axis(0)).enumerate() {
                let s = stds[r];
                row.mapv_inplace(|g| g * s);
            }
        }
        let bias_grad = upstream.sum_axis(Axis(0));
        let weights = self
            .features
            .blocks
            .iter()
            .map(|block| block.t().dot(&upstream))
            .collect();
        let grad = LinearParams {
            weights,
            biases: vec![bias_grad; block_count(self.variant)],
        };
        (value, grad)
    }
}

struct AdamState<T> {
    m: Vec<T>,
    v: Vec<T>,
    step: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingStats {
    pub train_loss: f64,
    pub val_loss: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

/// A trained single-shot model; immutable once fitted.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedLinearModel<T> {
    pub variant: LinearVariant,
    pub inner_input: usize,
    pub inner_output: usize,
    pub kernel: usize,
    pub params: LinearParams<T>,
    pub stats: TrainingStats,
    pub config: LinearModelConfig,
    /// Per-channel statistics of the fitted input sequence, when standardized.
    pub input_stats: Option<ChannelStats>,
}

/// Input-sequence statistics with near-zero deviations replaced by 1.
fn guarded_stats<T: Scalar>(input: &TimeSeries<T>) -> ChannelStats {
    let mut stats = ChannelStats::fit(input);
    for s in &mut stats.std {
        if *s <= INSTANCE_NORM_EPS {
            *s = 1.0;
        }
    }
    stats
}

fn normalize_columns<T: Scalar>(values: ArrayView2<'_, T>, stats: &ChannelStats) -> Array2<T> {
    let mut out = values.to_owned();
    for (c, mut col) in out.columns_mut().into_iter().enumerate() {
        let (m, s) = (T::of(stats.mean[c]), T::of(stats.std[c]));
        col.mapv_inplace(|v| (v - m) / s);
    }
    out
}

/// Fit on the windows of one input sequence `s_I` of length `I`.
pub fn fit_single_shot<T: Scalar>(
    input: &TimeSeries<T>,
    task: ForecastTask,
    cfg: &LinearModelConfig,
) -> Result<FittedLinearModel<T>, LinearError> {
    cfg.validate()?;
    if input.len() != task.input_length {
        return Err(LinearError::ShapeMismatch(format!(
            "input sequence has {} rows, task expects {}",
            input.len(),
            task.input_length
        )));
    }
    let plan = plan_windows(task, input.channels())?;
    fit_with_plan(input, &plan, cfg)
}

/// Fit with an explicit window plan.
pub fn fit_with_plan<T: Scalar>(
    input: &TimeSeries<T>,
    plan: &WindowPlan,
    cfg: &LinearModelConfig,
) -> Result<FittedLinearModel<T>, LinearError> {
    cfg.validate()?;
    let (ii, oo) = (plan.inner_input, plan.inner_output);
    let kernel = match cfg.variant {
        LinearVariant::Dlinear => {
            if cfg.decomposition_kernel > 2 * ii - 1 {
                return Err(LinearError::KernelTooLarge {
                    kernel: cfg.decomposition_kernel,
                    len: ii,
                });
            }
            cfg.decomposition_kernel
        }
        LinearVariant::Rlinear => 1,
    };
    let input_stats = cfg.standardize_input.then(|| guarded_stats(input));
    let normalized;
    let source = match &input_stats {
        Some(stats) => {
            normalized = input
                .map_values(normalize_columns(input.values(), stats))
                .map_err(|e| LinearError::ShapeMismatch(e.to_string()))?;
            &normalized
        }
        None => input,
    };
    let windows = make_windows(source, plan)?;
    let (train, val) = train_val_partition(&windows, cfg.val_fraction)?;
    let train_obj = LinearObjective::new(cfg.variant, cfg.loss, kernel, train.inputs.view(), train.targets.view())?;
    let val_obj = LinearObjective::new(cfg.variant, cfg.loss, kernel, val.inputs.view(), val.targets.view())?;

    let mut params = LinearParams::random(cfg.variant, ii, oo, cfg.seed);
    let mut best = params.clone();
    let mut best_val = val_obj.loss(&params);
    let mut best_epoch = 0;
    let mut train_loss = train_obj.loss(&params);
    let mut best_train = train_loss;
    if !best_val.is_finite() || !train_loss.is_finite() {
        return Err(LinearError::DivergedLoss { epoch: 0 });
    }

    let lr = T::of(cfg.learning_rate);
    let n_params = params.flatten().len();
    let mut adam = AdamState {
        m: vec![T::zero(); n_params],
        v: vec![T::zero(); n_params],
        step: 0,
    };
    let mut stale = 0;
    let mut epochs_run = 0;
    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        let (loss, grad) = train_obj.loss_and_gradient(&params);
        if !loss.is_finite() {
            return Err(LinearError::DivergedLoss { epoch });
        }
        train_loss = loss;
        let mut flat = params.flatten();
        let g = grad.flatten();
        match cfg.optimizer {
            Optimizer::Gd => flat.iter_mut().zip(&g).for_each(|(p, &gi)| *p = *p - lr * gi),
            Optimizer::Adam => adam_step(&mut adam, &mut flat, &g, lr),
        }
        params = params.unflatten(&flat);
        let val_loss = val_obj.loss(&params);
        if !val_loss.is_finite() || !params.is_finite() {
            return Err(LinearError::DivergedLoss { epoch });
        }
        if val_loss < best_val {
            best_val = val_loss;
            best = params.clone();
            best_epoch = epoch;
            best_train = train_obj.loss(&params);
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.patience {
                break;
            }
        }
    }
    log::debug!(
        "{} fit: {epochs_run} epochs, best epoch {best_epoch}, val {}",
        cfg.variant.label(),
        best_val
    );
    let _ = train_loss;
    Ok(FittedLinearModel {
        variant: cfg.variant,
        inner_input: ii,
        inner_output: oo,
        kernel,
        params: best,
        stats: TrainingStats {
            train_loss: best_train.to_f64_lossy(),
            val_loss: best_val.to_f64_lossy(),
            epochs_run,
            best_epoch,
        },
        config: cfg.clone(),
        input_stats,
    })
}

fn adam_step<T: Scalar>(state: &mut AdamState<T>, params: &mut [T], grad: &[T], lr: T) {
    let (b1, b2, eps) = (T::of(0.9), T::of(0.999), T::of(1e-8));
    state.step += 1;
    let c1 = T::one() - b1.powi(state.step);
    let c2 = T::one() - b2.powi(state.step);
    for i in 0..params.len() {
        state.m[i] = b1 * state.m[i] + (T::one() - b1) * grad[i];
        state.v[i] = b2 * state.v[i] + (T::one() - b2) * grad[i] * grad[i];
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

impl<T: Scalar> FittedLinearModel<T> {
    /// A model whose layer copies input step `(I' - O' + j) mod I'` into output step `j`:
    /// untrained, it repeats the most recent `O'` values.
    pub fn repeat_last(variant: LinearVariant, inner_input: usize, inner_output: usize) -> Self {
        let mut params = LinearParams::zeros(variant, inner_input, inner_output);
        for j in 0..inner_output {
            let src = (inner_input as isize - inner_output as isize + j as isize).rem_euclid(inner_input as isize) as usize;
            for w in &mut params.weights {
                w[[src, j]] = T::one();
            }
        }
        FittedLinearModel {
            variant,
            inner_input,
            inner_output,
            kernel: 1,
            params,
            stats: TrainingStats {
                train_loss: f64::NAN,
                val_loss: f64::NAN,
                epochs_run: 0,
                best_epoch: 0,
            },
            config: LinearModelConfig {
                variant,
                decomposition_kernel: 1,
                standardize_input: false,
                ..LinearModelConfig::default()
            },
            input_stats: None,
        }
    }

    /// One application of the layer to a single `I'`-long window.
    pub fn apply(&self, window: ArrayView1<'_, T>) -> Result<Array1<T>, LinearError> {
        if window.len() != self.inner_input {
            return Err(LinearError::ShapeMismatch(format!(
                "window of {} values, model expects {}",
                window.len(),
                self.inner_input
            )));
        }
        let batch = window.insert_axis(Axis(0));
        let feats = features(self.variant, self.kernel, batch)?;
        Ok(feats.forward(&self.params).row(0).to_owned())
    }

    /// Autoregressive forecast of `horizon` steps for every channel.
    ///
    /// `recent` holds at least `I'` rows; only the last `I'` are used. Each step appends an
    /// `O'` block to the context; the final block is truncated to the horizon.
    pub fn predict(&self, recent: ArrayView2<'_, T>, horizon: usize) -> Result<Array2<T>, LinearError> {
        if recent.nrows() < self.inner_input {
            return Err(LinearError::ShapeMismatch(format!(
                "context has {} rows, model needs {}",
                recent.nrows(),
                self.inner_input
            )));
        }
        let d = recent.ncols();
        let normalized = match &self.input_stats {
            Some(stats) if stats.mean.len() != d => {
                return Err(LinearError::ShapeMismatch(format!(
                    "context has {d} channels, model was fitted on {}",
                    stats.mean.len()
                )))
            }
            Some(stats) => Some(normalize_columns(recent, stats)),
            None => None,
        };
        let recent = normalized.as_ref().map_or(recent, |n| n.view());
        let mut out = Array2::zeros((horizon, d));
        for c in 0..d {
            let col = recent.column(c);
            let mut context: Vec<T> = col.iter().skip(col.len() - self.inner_input).copied().collect();
            let mut produced = 0;
            while produced < horizon {
                let window = ArrayView1::from(&context[context.len() - self.inner_input..]);
                let block = self.apply(window)?;
                let take = block.len().min(horizon - produced);
                for (k, &v) in block.iter().take(take).enumerate() {
                    out[[produced + k, c]] = v;
                }
                produced += take;
                context.extend(block.iter().copied());
            }
        }
        if let Some(stats) = &self.input_stats {
            for (c, mut col) in out.columns_mut().into_iter().enumerate() {
                let (m, s) = (T::of(stats.mean[c]), T::of(stats.std[c]));
                col.mapv_inplace(|v| v * s + m);
            }
        }
        Ok(out)
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            format_version: MODEL_FORMAT_VERSION,
            variant: self.variant,
            inner_input: self.inner_input,
            inner_output: self.inner_output,
            kernel: self.kernel,
            weights: self.params.weights.iter().map(|w| w.iter().map(|v| v.to_f64_lossy()).collect()).collect(),
            biases: self.params.biases.iter().map(|b| b.iter().map(|v| v.to_f64_lossy()).collect()).collect(),
            stats: self.stats,
            config: self.config.clone(),
            input_stats: self.input_stats.clone(),
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self, LinearError> {
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(LinearError::Format(format!("unsupported format version {}", doc.format_version)));
        }
        let blocks = block_count(doc.variant);
        if doc.weights.len() != blocks || doc.biases.len() != blocks {
            return Err(LinearError::Format(format!("{:?} expects {blocks} parameter blocks", doc.variant)));
        }
        let (ii, oo) = (doc.inner_input, doc.inner_output);
        let weights = doc
            .weights
            .iter()
            .map(|w| {
                Array2::from_shape_vec((ii, oo), w.iter().map(|&v| T::of(v)).collect())
                    .map_err(|_| LinearError::Format(format!("weight block must hold {ii}x{oo} values")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let biases = doc
            .biases
            .iter()
            .map(|b| {
                if b.len() == oo {
                    Ok(b.iter().map(|&v| T::of(v)).collect())
                } else {
                    Err(LinearError::Format(format!("bias block must hold {oo} values")))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let params = LinearParams { weights, biases };
        if !params.is_finite() {
            return Err(LinearError::Format("non-finite parameter".into()));
        }
        Ok(FittedLinearModel {
            variant: doc.variant,
            inner_input: ii,
            inner_output: oo,
            kernel: doc.kernel,
            params,
            stats: doc.stats,
            config: doc.config.clone(),
            input_stats: doc.input_stats.clone(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LinearError> {
        let text = serde_json::to_string_pretty(&self.to_document())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LinearError> {
        let doc: ModelDocument = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_document(&doc)
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Versioned JSON form of a fitted model: shapes, row-major flat parameter arrays and the config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    pub variant: LinearVariant,
    pub inner_input: usize,
    pub inner_output: usize,
    pub kernel: usize,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub stats: TrainingStats,
    pub config: LinearModelConfig,
    #[serde(default)]
    pub input_stats: Option<ChannelStats>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn decomposition_identity_cases() {
        let x = array![3.0, 3.0, 3.0, 3.0, 3.0];
        let (t, s) = decompose_moving_average(x.view(), 5).unwrap();
        assert_eq!(t, x);
        assert!(s.iter().all(|&v| v == 0.0));

        let x = array![0.3, -1.0, 2.5];
        let (t, s) = decompose_moving_average(x.view(), 1).unwrap();
        assert_eq!(t, x);
        assert!(s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decomposition_by_hand() {
        // padded: [0, 0, 1, 2, 3, 3]
        let x = array![0.0f64, 1.0, 2.0, 3.0];
        let (t, s) = decompose_moving_average(x.view(), 3).unwrap();
        let expected = [1.0f64 / 3.0, 1.0, 2.0, 8.0 / 3.0];
        for (a, b) in t.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((s[0] + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn decomposition_kernel_limits() {
        let x = array![1.0, 2.0, 3.0];
        assert!(decompose_moving_average(x.view(), 5).is_ok());
        assert!(matches!(
            decompose_moving_average(x.view(), 7),
            Err(LinearError::KernelTooLarge { kernel: 7, len: 3 })
        ));
        assert!(matches!(decompose_moving_average(x.view(), 2), Err(LinearError::InvalidConfig(_))));
    }

    #[test]
    fn single_step_equals_layer() {
        let model = FittedLinearModel::<f64>::repeat_last(LinearVariant::Rlinear, 4, 2);
        let ctx = array![[1.0], [4.0], [2.0], [8.0]];
        let out = model.predict(ctx.view(), 2).unwrap();
        let direct = model.apply(ctx.column(0)).unwrap();
        assert_eq!(out.column(0).to_vec(), direct.to_vec());
        assert!((out[[0, 0]] - 2.0).abs() < 1e-12 && (out[[1, 0]] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn two_steps_compose() {
        let mut model = FittedLinearModel::<f64>::repeat_last(LinearVariant::Dlinear, 3, 2);
        model.params.weights[0][[0, 1]] = 0.25;
        model.params.biases[1][0] = -0.5;
        let ctx = array![[1.0], [2.0], [5.0]];
        let full = model.predict(ctx.view(), 4).unwrap();
        let first = model.predict(ctx.view(), 2).unwrap();
        let shifted = array![[5.0], [first[[0, 0]]], [first[[1, 0]]]];
        let second = model.predict(shifted.view(), 2).unwrap();
        assert_eq!(full.column(0).to_vec()[..2], first.column(0).to_vec()[..]);
        assert_eq!(full.column(0).to_vec()[2..], second.column(0).to_vec()[..]);
        // truncated final block
        let three = model.predict(ctx.view(), 3).unwrap();
        assert_eq!(three.column(0).to_vec()[..], full.column(0).to_vec()[..3]);
    }

    #[test]
    fn untrained_rlinear_keeps_constants() {
        let model = FittedLinearModel::<f64>::repeat_last(LinearVariant::Rlinear, 6, 3);
        let ctx = Array2::from_elem((6, 2), 4.5);
        let out = model.predict(ctx.view(), 7).unwrap();
        assert!(out.iter().all(|&v| (v - 4.5).abs() < 1e-12));
    }

    #[test]
    fn short_context_is_rejected() {
        let model = FittedLinearModel::<f64>::repeat_last(LinearVariant::Rlinear, 6, 3);
        assert!(matches!(
            model.predict(Array2::zeros((5, 1)).view(), 3),
            Err(LinearError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn document_round_trip() {
        let series = TimeSeries::univariate(&(0..32).map(|t| (t as f64 * 0.4).sin()).collect::<Vec<_>>()).unwrap();
        let cfg = LinearModelConfig {
            decomposition_kernel: 5,
            max_epochs: 20,
            ..LinearModelConfig::dlinear()
        };
        let model = fit_single_shot(&series, ForecastTask::new(32, 8), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let back = FittedLinearModel::<f64>::load(&path).unwrap();
        assert_eq!(back, model);

        let mut doc = model.to_document();
        doc.format_version = 99;
        assert!(FittedLinearModel::<f64>::from_document(&doc).is_err());
        let mut doc = model.to_document();
        doc.weights[0].pop();
        assert!(FittedLinearModel::<f64>::from_document(&doc).is_err());
    }

    #[test]
    fn rejects_bad_configs() {
        let series = TimeSeries::univariate(&[1.0; 16]).unwrap();
        let task = ForecastTask::new(16, 8);
        let even = LinearModelConfig {
            decomposition_kernel: 4,
            ..LinearModelConfig::dlinear()
        };
        assert!(matches!(fit_single_shot(&series, task, &even), Err(LinearError::InvalidConfig(_))));
        let big = LinearModelConfig {
            decomposition_kernel: 25,
            ..LinearModelConfig::dlinear()
        };
        assert!(matches!(fit_single_shot(&series, task, &big), Err(LinearError::KernelTooLarge { .. })));
        let wrong_len = ForecastTask::new(20, 8);
        assert!(matches!(
            fit_single_shot(&series, wrong_len, &LinearModelConfig::rlinear()),
            Err(LinearError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn huge_step_diverges() {
        let series = TimeSeries::univariate(&(0..40).map(|t| t as f64 * 1e3).collect::<Vec<_>>()).unwrap();
        let cfg = LinearModelConfig {
            optimizer: Optimizer::Gd,
            learning_rate: 1e6,
            decomposition_kernel: 3,
            patience: 1000,
            ..LinearModelConfig::dlinear()
        };
        assert!(matches!(
            fit_single_shot(&series, ForecastTask::new(40, 10), &cfg),
            Err(LinearError::DivergedLoss { .. })
        ));
    }

    #[test]
    fn fitting_is_deterministic() {
        let series = TimeSeries::univariate(&(0..48).map(|t| (t as f64 * 0.3).cos()).collect::<Vec<_>>()).unwrap();
        let cfg = LinearModelConfig {
            decomposition_kernel: 7,
            max_epochs: 50,
            seed: 3,
            ..LinearModelConfig::dlinear()
        };
        let a = fit_single_shot(&series, ForecastTask::new(48, 16), &cfg).unwrap();
        let b = fit_single_shot(&series, ForecastTask::new(48, 16), &cfg).unwrap();
        assert_eq!(a, b);
    }
}
