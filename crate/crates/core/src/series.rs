//! Time-series value types, chronological splitting and per-channel standardization.

use std::ops::Range;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeriesError {
    #[error("input has no rows or no channels")]
    EmptyInput,
    #[error("non-finite value at row {row}, channel {channel}")]
    NonFiniteValue { row: usize, channel: usize },
    #[error("expected {expected} channel labels, found {found}")]
    LabelCountMismatch { expected: usize, found: usize },
    #[error("split leaves segment `{segment}` with {len} rows")]
    SegmentTooShort { segment: &'static str, len: usize },
    #[error("invalid split fractions: test {test}, val {val}")]
    InvalidSplit { test: f64, val: f64 },
    #[error("channel {0} has zero standard deviation")]
    ZeroStd(usize),
    #[error("statistics cover {stats} channels, series has {series}")]
    ChannelCountMismatch { stats: usize, series: usize },
}

/// A uniformly sampled multivariate sequence of `n` observations over `d` channels.
///
/// Rows are time steps, columns are channels. Every value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries<T> {
    values: Array2<T>,
    channel_names: Option<Vec<String>>,
    frequency: Option<String>,
}

/// Validate a raw `n x d` array and wrap it as a [`TimeSeries`].
pub fn validate_series<T: Scalar>(
    raw: Array2<T>,
    names: Option<Vec<String>>,
) -> Result<TimeSeries<T>, SeriesError> {
    let (n, d) = raw.dim();
    if n == 0 || d == 0 {
        return Err(SeriesError::EmptyInput);
    }
    for ((row, channel), v) in raw.indexed_iter() {
        if !v.is_finite() {
            return Err(SeriesError::NonFiniteValue { row, channel });
        }
    }
    if let Some(names) = &names {
        if names.len() != d {
            return Err(SeriesError::LabelCountMismatch {
                expected: d,
                found: names.len(),
            });
        }
    }
    Ok(TimeSeries {
        values: raw,
        channel_names: names,
        frequency: None,
    })
}

impl<T: Scalar> TimeSeries<T> {
    /// Build a single-channel series from a slice.
    pub fn univariate(values: &[T]) -> Result<Self, SeriesError> {
        let raw = Array2::from_shape_vec((values.len(), 1), values.to_vec())
            .map_err(|_| SeriesError::EmptyInput)?;
        validate_series(raw, None)
    }

    /// Build a series from per-channel columns of equal length.
    pub fn from_columns(columns: &[Vec<T>]) -> Result<Self, SeriesError> {
        let d = columns.len();
        let n = columns.first().map_or(0, Vec::len);
        if d == 0 || n == 0 {
            return Err(SeriesError::EmptyInput);
        }
        let mut raw = Array2::zeros((n, d));
        for (c, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(SeriesError::EmptyInput);
            }
            raw.column_mut(c).assign(&ArrayView1::from(col.as_slice()));
        }
        validate_series(raw, None)
    }

    pub fn with_frequency(mut self, label: impl Into<String>) -> Self {
        self.frequency = Some(label.into());
        self
    }

    pub fn with_channel_names(self, names: Vec<String>) -> Result<Self, SeriesError> {
        let freq = self.frequency.clone();
        let mut out = validate_series(self.values, Some(names))?;
        out.frequency = freq;
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, T> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<T> {
        self.values
    }

    pub fn channel(&self, c: usize) -> ArrayView1<'_, T> {
        self.values.column(c)
    }

    pub fn channel_names(&self) -> Option<&[String]> {
        self.channel_names.as_deref()
    }

    /// Label for channel `c`, falling back to `ch{c}` when the series is unlabelled.
    pub fn channel_name(&self, c: usize) -> String {
        match &self.channel_names {
            Some(names) => names[c].clone(),
            None => format!("ch{c}"),
        }
    }

    pub fn frequency(&self) -> Option<&str> {
        self.frequency.as_deref()
    }

    /// Contiguous row range as a new series, keeping labels.
    ///
    /// Panics if the range is empty or out of bounds.
    pub fn slice_rows(&self, rows: Range<usize>) -> TimeSeries<T> {
        assert!(rows.start < rows.end && rows.end <= self.len(), "row range {rows:?} out of bounds");
        TimeSeries {
            values: self.values.slice(ndarray::s![rows, ..]).to_owned(),
            channel_names: self.channel_names.clone(),
            frequency: self.frequency.clone(),
        }
    }

    /// Replace the values while keeping labels; the new array must have the same channel count.
    pub fn map_values(&self, values: Array2<T>) -> Result<TimeSeries<T>, SeriesError> {
        if values.ncols() != self.channels() {
            return Err(SeriesError::ChannelCountMismatch {
                stats: values.ncols(),
                series: self.channels(),
            });
        }
        let mut out = validate_series(values, self.channel_names.clone())?;
        out.frequency = self.frequency.clone();
        Ok(out)
    }

    /// Convert the element type, e.g. f64 to f32.
    pub fn cast<U: Scalar>(&self) -> TimeSeries<U> {
        TimeSeries {
            values: self.values.mapv(|v| U::of(v.to_f64_lossy())),
            channel_names: self.channel_names.clone(),
            frequency: self.frequency.clone(),
        }
    }
}

/// Forecast shape: input length `I` and output length `O`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForecastTask {
    pub input_length: usize,
    pub output_length: usize,
}

impl ForecastTask {
    pub fn new(input_length: usize, output_length: usize) -> Self {
        assert!(input_length >= 1 && output_length >= 1, "task lengths must be positive");
        ForecastTask {
            input_length,
            output_length,
        }
    }

    /// Total rows one evaluation window consumes.
    pub fn span(&self) -> usize {
        self.input_length + self.output_length
    }
}

/// Fractions of the series reserved, from the tail, for test and validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub val_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_fraction: 0.2,
            val_fraction: 0.1,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), SeriesError> {
        let ok = self.test_fraction > 0.0
            && self.test_fraction < 1.0
            && (0.0..1.0).contains(&self.val_fraction)
            && self.test_fraction + self.val_fraction < 1.0;
        if ok {
            Ok(())
        } else {
            Err(SeriesError::InvalidSplit {
                test: self.test_fraction,
                val: self.val_fraction,
            })
        }
    }

    /// Row counts `(train, val, test)` for a series of length `n`.
    pub fn lengths(&self, n: usize) -> Result<(usize, usize, usize), SeriesError> {
        self.validate()?;
        let test = ceil_count(n, self.test_fraction);
        let val = ceil_count(n, self.val_fraction);
        if test == 0 {
            return Err(SeriesError::SegmentTooShort { segment: "test", len: 0 });
        }
        if self.val_fraction > 0.0 && val == 0 {
            return Err(SeriesError::SegmentTooShort { segment: "val", len: 0 });
        }
        let train = n.saturating_sub(test + val);
        if train == 0 {
            return Err(SeriesError::SegmentTooShort { segment: "train", len: 0 });
        }
        Ok((train, val, test))
    }
}

/// `ceil(n * fraction)`, ignoring floating error below 1e-9 of a row.
pub(crate) fn ceil_count(n: usize, fraction: f64) -> usize {
    let exact = n as f64 * fraction;
    let nearest = exact.round();
    if (exact - nearest).abs() < 1e-9 {
        nearest as usize
    } else {
        exact.ceil() as usize
    }
}

/// The three contiguous segments of a chronological split. `val` is absent when its fraction is zero.
#[derive(Debug, Clone)]
pub struct Split<T> {
    pub train: TimeSeries<T>,
    pub val: Option<TimeSeries<T>>,
    pub test: TimeSeries<T>,
}

/// Split a series into train, validation and test segments preserving time order.
///
/// The test segment takes the final `ceil(n * test_fraction)` rows, validation the
/// `ceil(n * val_fraction)` rows before it, and train the remainder.
pub fn chronological_split<T: Scalar>(
    series: &TimeSeries<T>,
    spec: &SplitSpec,
) -> Result<Split<T>, SeriesError> {
    let n = series.len();
    let (train, val, _test) = spec.lengths(n)?;
    Ok(Split {
        train: series.slice_rows(0..train),
        val: (val > 0).then(|| series.slice_rows(train..train + val)),
        test: series.slice_rows(train + val..n),
    })
}

/// Per-channel mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn fit<T: Scalar>(series: &TimeSeries<T>) -> ChannelStats {
        let n = series.len() as f64;
        let mut mean = Vec::with_capacity(series.channels());
        let mut std = Vec::with_capacity(series.channels());
        for col in series.values.axis_iter(Axis(1)) {
            let m = col.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n;
            let var = col
                .iter()
                .map(|v| {
                    let e = v.to_f64_lossy() - m;
                    e * e
                })
                .sum::<f64>()
                / n;
            mean.push(m);
            std.push(var.sqrt());
        }
        ChannelStats { mean, std }
    }

    /// Channels whose standard deviation is zero and cannot be standardized.
    pub fn degenerate_channels(&self) -> Vec<usize> {
        self.std
            .iter()
            .enumerate()
            .filter(|(_, s)| !(**s > 0.0))
            .map(|(c, _)| c)
            .collect()
    }

    fn check<T: Scalar>(&self, series: &TimeSeries<T>) -> Result<(), SeriesError> {
        if self.mean.len() != series.channels() || self.std.len() != series.channels() {
            return Err(SeriesError::ChannelCountMismatch {
                stats: self.mean.len(),
                series: series.channels(),
            });
        }
        match self.degenerate_channels().first() {
            Some(&c) => Err(SeriesError::ZeroStd(c)),
            None => Ok(()),
        }
    }
}

/// `(x - mean) / std` per channel.
pub fn standardize<T: Scalar>(
    series: &TimeSeries<T>,
    stats: &ChannelStats,
) -> Result<TimeSeries<T>, SeriesError> {
    stats.check(series)?;
    let mut values = series.values.clone();
    for (c, mut col) in values.axis_iter_mut(Axis(1)).enumerate() {
        let (m, s) = (T::of(stats.mean[c]), T::of(stats.std[c]));
        col.mapv_inplace(|v| (v - m) / s);
    }
    series.map_values(values)
}

/// Inverse of [`standardize`]: `x * std + mean` per channel.
pub fn destandardize<T: Scalar>(
    series: &TimeSeries<T>,
    stats: &ChannelStats,
) -> Result<TimeSeries<T>, SeriesError> {
    stats.check(series)?;
    Ok(series
        .map_values(destandardize_array(series.values(), stats))
        .expect("shape preserved"))
}

pub(crate) fn destandardize_array<T: Scalar>(values: ArrayView2<'_, T>, stats: &ChannelStats) -> Array2<T> {
    let mut out = values.to_owned();
    for (c, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let (m, s) = (T::of(stats.mean[c]), T::of(stats.std[c]));
        col.mapv_inplace(|v| v * s + m);
    }
    out
}
