//! Single-shot training corpus: stride-1 windows carved from one input sequence,
//! with channels stacked along the sample axis.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::series::{ceil_count, ForecastTask, TimeSeries};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WindowError {
    #[error("plan yields {0} windows; at least 2 are needed for training and validation")]
    TooFewWindows(usize),
    #[error("invalid window plan: {0}")]
    InvalidPlan(String),
    #[error("shape mismatch: expected {expected}, got {found}")]
    ShapeMismatch { expected: String, found: String },
}

/// Outer task `(I, O)`, inner window `(I', O')`, channel count `d` and window count `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub outer_input: usize,
    pub outer_output: usize,
    pub inner_input: usize,
    pub inner_output: usize,
    pub channels: usize,
    pub window_count: usize,
}

impl WindowPlan {
    /// Explicit inner lengths. `K = d * (I - (I' + O') + 1)`.
    pub fn with_inner(
        task: ForecastTask,
        channels: usize,
        inner_input: usize,
        inner_output: usize,
    ) -> Result<WindowPlan, WindowError> {
        if inner_input == 0 || inner_output == 0 || channels == 0 {
            return Err(WindowError::InvalidPlan(format!(
                "I'={inner_input}, O'={inner_output}, d={channels} must all be positive"
            )));
        }
        if inner_input + inner_output > task.input_length {
            return Err(WindowError::InvalidPlan(format!(
                "I'+O'={} exceeds I={}",
                inner_input + inner_output,
                task.input_length
            )));
        }
        let window_count = channels * (task.input_length - (inner_input + inner_output) + 1);
        Ok(WindowPlan {
            outer_input: task.input_length,
            outer_output: task.output_length,
            inner_input,
            inner_output,
            channels,
            window_count,
        })
    }

    /// Windows available per channel.
    pub fn offsets_per_channel(&self) -> usize {
        self.window_count / self.channels
    }

    /// Autoregressive steps needed to reach the outer horizon, `ceil(O / O')`.
    pub fn autoregressive_steps(&self) -> usize {
        self.outer_output.div_ceil(self.inner_output)
    }
}

/// Inner window lengths are half the outer horizon, `I' = O' = floor(O / 2)`, which
/// reproduces the published window counts (e.g. `I=384, O=192, d=7` gives `K=1351`).
pub fn plan_windows(task: ForecastTask, channels: usize) -> Result<WindowPlan, WindowError> {
    let half = task.output_length / 2;
    let plan = WindowPlan::with_inner(task, channels, half, half)?;
    if plan.window_count < 2 {
        return Err(WindowError::TooFewWindows(plan.window_count));
    }
    Ok(plan)
}

/// Where a window came from in the source sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowOrigin {
    pub channel: usize,
    pub start: usize,
}

/// `K` flattened samples: inputs `K x I'`, targets `K x O'`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet<T> {
    pub inputs: Array2<T>,
    pub targets: Array2<T>,
    pub origins: Vec<WindowOrigin>,
}

impl<T: Scalar> WindowSet<T> {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    fn select(&self, rows: &[usize]) -> WindowSet<T> {
        WindowSet {
            inputs: self.inputs.select(ndarray::Axis(0), rows),
            targets: self.targets.select(ndarray::Axis(0), rows),
            origins: rows.iter().map(|&r| self.origins[r]).collect(),
        }
    }
}

/// Enumerate every stride-1 window of every channel, channel-major then by start offset.
pub fn make_windows<T: Scalar>(sequence: &TimeSeries<T>, plan: &WindowPlan) -> Result<WindowSet<T>, WindowError> {
    if sequence.len() != plan.outer_input || sequence.channels() != plan.channels {
        return Err(WindowError::ShapeMismatch {
            expected: format!("{}x{}", plan.outer_input, plan.channels),
            found: format!("{}x{}", sequence.len(), sequence.channels()),
        });
    }
    let (ii, oo) = (plan.inner_input, plan.inner_output);
    let per_channel = plan.offsets_per_channel();
    let mut inputs = Array2::zeros((plan.window_count, ii));
    let mut targets = Array2::zeros((plan.window_count, oo));
    let mut origins = Vec::with_capacity(plan.window_count);
    let values = sequence.values();
    for channel in 0..plan.channels {
        let col = values.column(channel);
        for start in 0..per_channel {
            let row = origins.len();
            inputs.row_mut(row).assign(&col.slice(s![start..start + ii]));
            targets.row_mut(row).assign(&col.slice(s![start + ii..start + ii + oo]));
            origins.push(WindowOrigin { channel, start });
        }
    }
    Ok(WindowSet {
        inputs,
        targets,
        origins,
    })
}

/// Hold out the chronologically latest `ceil(m * val_fraction)` offsets of each channel for validation.
pub fn train_val_partition<T: Scalar>(
    ws: &WindowSet<T>,
    val_fraction: f64,
) -> Result<(WindowSet<T>, WindowSet<T>), WindowError> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(WindowError::InvalidPlan(format!("validation fraction {val_fraction} outside (0, 1)")));
    }
    let channels = ws.origins.iter().map(|o| o.channel).max().map_or(0, |c| c + 1);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for channel in 0..channels {
        let mut rows: Vec<usize> = (0..ws.len()).filter(|&r| ws.origins[r].channel == channel).collect();
        rows.sort_by_key(|&r| ws.origins[r].start);
        let m = rows.len();
        let n_val = ceil_count(m, val_fraction);
        if n_val == 0 || n_val >= m {
            return Err(WindowError::TooFewWindows(m));
        }
        train.extend_from_slice(&rows[..m - n_val]);
        val.extend_from_slice(&rows[m - n_val..]);
    }
    if train.is_empty() {
        return Err(WindowError::TooFewWindows(ws.len()));
    }
    Ok((ws.select(&train), ws.select(&val)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(i: usize, o: usize) -> ForecastTask {
        ForecastTask::new(i, o)
    }

    #[test]
    fn halves_task_lengths() {
        let p = plan_windows(task(384, 192), 7).unwrap();
        assert_eq!((p.inner_input, p.inner_output, p.window_count), (96, 96, 1351));
        let p = plan_windows(task(96, 48), 321).unwrap();
        assert_eq!((p.inner_input, p.inner_output, p.window_count), (24, 24, 15729));
        let p = plan_windows(task(9, 5), 1).unwrap();
        assert_eq!((p.inner_input, p.inner_output), (2, 2));
        assert_eq!(p.autoregressive_steps(), 3);
    }

    #[test]
    fn single_window_is_rejected() {
        let p = WindowPlan::with_inner(task(10, 10), 1, 5, 5).unwrap();
        assert_eq!(p.window_count, 1);
        assert_eq!(plan_windows(task(10, 10), 1).unwrap_err(), WindowError::TooFewWindows(1));
        assert!(matches!(plan_windows(task(4, 1), 1), Err(WindowError::InvalidPlan(_))));
    }

    #[test]
    fn two_channel_enumeration() {
        let s = TimeSeries::from_columns(&[vec![0.0, 1.0, 2.0, 3.0], vec![10.0, 11.0, 12.0, 13.0]]).unwrap();
        let plan = WindowPlan::with_inner(task(4, 2), 2, 1, 1).unwrap();
        assert_eq!(plan.window_count, 6);
        let ws = make_windows(&s, &plan).unwrap();
        let pairs: Vec<(f64, f64)> = (0..ws.len()).map(|r| (ws.inputs[[r, 0]], ws.targets[[r, 0]])).collect();
        assert_eq!(
            pairs,
            vec![(0.0, 1.0), (1.0, 2.0), (2.0, 3.0), (10.0, 11.0), (11.0, 12.0), (12.0, 13.0)]
        );
    }

    #[test]
    fn exact_fit_gives_one_row() {
        let s = TimeSeries::univariate(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let plan = WindowPlan::with_inner(task(5, 2), 1, 3, 2).unwrap();
        let ws = make_windows(&s, &plan).unwrap();
        assert_eq!(ws.len(), 1);
        assert_eq!(ws.inputs.row(0).to_vec(), vec![1.0, 2.0, 3.0]);
        assert_eq!(ws.targets.row(0).to_vec(), vec![4.0, 5.0]);
    }

    #[test]
    fn wrong_channel_count() {
        let s = TimeSeries::univariate(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let plan = WindowPlan::with_inner(task(4, 2), 2, 1, 1).unwrap();
        assert!(matches!(make_windows(&s, &plan), Err(WindowError::ShapeMismatch { .. })));
    }

    fn ws_with_offsets(m: usize) -> WindowSet<f64> {
        let s = TimeSeries::univariate(&(0..m + 1).map(|v| v as f64).collect::<Vec<_>>()).unwrap();
        let plan = WindowPlan::with_inner(task(m + 1, 1), 1, 1, 1).unwrap();
        make_windows(&s, &plan).unwrap()
    }

    #[test]
    fn partition_examples() {
        let (tr, va) = train_val_partition(&ws_with_offsets(10), 0.2).unwrap();
        assert_eq!(va.origins.iter().map(|o| o.start).collect::<Vec<_>>(), vec![8, 9]);
        assert_eq!(tr.len(), 8);
        let (tr, va) = train_val_partition(&ws_with_offsets(2), 0.5).unwrap();
        assert_eq!((tr.len(), va.len()), (1, 1));
        assert_eq!(train_val_partition(&ws_with_offsets(1), 0.2).unwrap_err(), WindowError::TooFewWindows(1));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rows_are_contiguous_slices(d in 1usize..4, ii in 1usize..6, oo in 1usize..6, extra in 0usize..8) {
                let i = ii + oo + extra;
                let cols: Vec<Vec<f64>> = (0..d).map(|c| (0..i).map(|t| (c * 1000 + t) as f64).collect()).collect();
                let s = TimeSeries::from_columns(&cols).unwrap();
                let plan = WindowPlan::with_inner(task(i, oo), d, ii, oo).unwrap();
                let ws = make_windows(&s, &plan).unwrap();
                prop_assert_eq!(ws.len(), plan.window_count);
                for r in 0..ws.len() {
                    let o = ws.origins[r];
                    let mut joined = ws.inputs.row(r).to_vec();
                    joined.extend(ws.targets.row(r).iter());
                    prop_assert_eq!(joined, cols[o.channel][o.start..o.start + ii + oo].to_vec());
                }
            }

            #[test]
            fn partition_is_disjoint_and_later(d in 1usize..4, m in 2usize..30, frac in 0.05f64..0.95) {
                let i = m + 1;
                let cols: Vec<Vec<f64>> = (0..d).map(|_| (0..i).map(|t| t as f64).collect()).collect();
                let s = TimeSeries::from_columns(&cols).unwrap();
                let plan = WindowPlan::with_inner(task(i, 1), d, 1, 1).unwrap();
                let ws = make_windows(&s, &plan).unwrap();
                if let Ok((tr, va)) = train_val_partition(&ws, frac) {
                    prop_assert_eq!(tr.len() + va.len(), ws.len());
                    for c in 0..d {
                        let last_train = tr.origins.iter().filter(|o| o.channel == c).map(|o| o.start).max().unwrap();
                        let first_val = va.origins.iter().filter(|o| o.channel == c).map(|o| o.start).min().unwrap();
                        prop_assert!(last_train < first_val);
                    }
                }
            }
        }
    }
}
