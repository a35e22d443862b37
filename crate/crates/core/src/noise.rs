//! Corruption models and smoothing filters.
//!
//! Injection is seeded with ChaCha8 so every corrupted series can be regenerated.
//! Constant and missing noise pick `floor(eta * n)` distinct positions per channel,
//! drawing channel 0 first from one shared generator.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::series::{ChannelStats, SeriesError, TimeSeries};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NoiseError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

pub const DEFAULT_CONTAMINATION: f64 = 0.1;
/// Constant-noise shift in units of the channel standard deviation when none is given.
pub const DEFAULT_CONSTANT_STD_MULTIPLE: f64 = 3.0;
pub const DEFAULT_FREQ_CYCLES: f64 = 5.0;

fn default_contamination() -> f64 {
    DEFAULT_CONTAMINATION
}

fn default_cycles() -> f64 {
    DEFAULT_FREQ_CYCLES
}

/// How a series is corrupted. `None` magnitudes default to multiples of each channel's std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    /// `z + e`, `e ~ N(0, sigma^2)` at every point. With `relative`, `sigma` is a multiple of each channel's std.
    Gaussian {
        sigma: f64,
        #[serde(default)]
        relative: bool,
        #[serde(default)]
        seed: u64,
    },
    /// `z + epsilon` at a random `eta` share of points. `epsilon` defaults to 3 channel stds.
    Constant {
        #[serde(default)]
        epsilon: Option<f64>,
        #[serde(default = "default_contamination")]
        contamination: f64,
        #[serde(default)]
        seed: u64,
    },
    /// `fill` (default 0) at a random `eta` share of points.
    Missing {
        #[serde(default)]
        fill: f64,
        #[serde(default = "default_contamination")]
        contamination: f64,
        #[serde(default)]
        seed: u64,
    },
    /// `z + A sin(2 pi f t / n)`. `A` defaults to 1 channel std.
    FreqAdd {
        #[serde(default)]
        amplitude: Option<f64>,
        #[serde(default = "default_cycles")]
        frequency: f64,
    },
    /// `A sin(2 pi f t / n)` everywhere.
    FreqReplace {
        #[serde(default)]
        amplitude: Option<f64>,
        #[serde(default = "default_cycles")]
        frequency: f64,
    },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), NoiseError> {
        let bad = |msg: String| Err(NoiseError::InvalidSpec(msg));
        let check_eta = |eta: f64| {
            if (0.0..=1.0).contains(&eta) {
                Ok(())
            } else {
                Err(NoiseError::InvalidSpec(format!("contamination {eta} outside [0, 1]")))
            }
        };
        match *self {
            NoiseSpec::Gaussian { sigma, .. } if !(sigma >= 0.0 && sigma.is_finite()) => bad(format!("sigma {sigma}")),
            NoiseSpec::Constant { epsilon, contamination, .. } => {
                if epsilon.is_some_and(|e| !e.is_finite()) {
                    return bad(format!("epsilon {epsilon:?}"));
                }
                check_eta(contamination)
            }
            NoiseSpec::Missing { fill, contamination, .. } => {
                if !fill.is_finite() {
                    return bad(format!("fill {fill}"));
                }
                check_eta(contamination)
            }
            NoiseSpec::FreqAdd { amplitude, frequency } | NoiseSpec::FreqReplace { amplitude, frequency } => {
                if amplitude.is_some_and(|a| !a.is_finite()) || !frequency.is_finite() {
                    return bad(format!("amplitude {amplitude:?}, frequency {frequency}"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            NoiseSpec::Gaussian { .. } => "gaussian",
            NoiseSpec::Constant { .. } => "constant",
            NoiseSpec::Missing { .. } => "missing",
            NoiseSpec::FreqAdd { .. } => "freq_add",
            NoiseSpec::FreqReplace { .. } => "freq_replace",
        }
    }
}

/// Positions corrupted per channel by constant or missing noise.
pub fn contaminated_count(n: usize, eta: f64) -> usize {
    ((n as f64 * eta) + 1e-9).floor() as usize
}

/// `A sin(2 pi f t / n)` for `t = 0..n`.
pub fn sinusoid(n: usize, amplitude: f64, cycles: f64) -> Vec<f64> {
    (0..n)
        .map(|t| amplitude * (2.0 * PI * cycles * t as f64 / n as f64).sin())
        .collect()
}

/// Corrupt every channel of a series according to `spec`.
pub fn inject_noise<T: Scalar>(series: &TimeSeries<T>, spec: &NoiseSpec) -> Result<TimeSeries<T>, NoiseError> {
    spec.validate()?;
    let n = series.len();
    let mut values = series.values().to_owned();
    let stats = ChannelStats::fit(series);
    match *spec {
        NoiseSpec::Gaussian { sigma, relative, seed } => {
            if sigma > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for (c, mut col) in values.axis_iter_mut(Axis(1)).enumerate() {
                    let scale = if relative { sigma * stats.std[c] } else { sigma };
                    for v in col.iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *v = *v + T::of(scale * z);
                    }
                }
            }
        }
        NoiseSpec::Constant { epsilon, contamination, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = contaminated_count(n, contamination);
            for (c, mut col) in values.axis_iter_mut(Axis(1)).enumerate() {
                let shift = T::of(epsilon.unwrap_or(DEFAULT_CONSTANT_STD_MULTIPLE * stats.std[c]));
                for pos in index::sample(&mut rng, n, m) {
                    col[pos] = col[pos] + shift;
                }
            }
        }
        NoiseSpec::Missing { fill, contamination, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = contaminated_count(n, contamination);
            let fill = T::of(fill);
            for mut col in values.axis_iter_mut(Axis(1)) {
                for pos in index::sample(&mut rng, n, m) {
                    col[pos] = fill;
                }
            }
        }
        NoiseSpec::FreqAdd { amplitude, frequency } | NoiseSpec::FreqReplace { amplitude, frequency } => {
            let replace = matches!(spec, NoiseSpec::FreqReplace { .. });
            for (c, mut col) in values.axis_iter_mut(Axis(1)).enumerate() {
                let wave = sinusoid(n, amplitude.unwrap_or(stats.std[c]), frequency);
                for (v, w) in col.iter_mut().zip(wave) {
                    *v = if replace { T::of(w) } else { *v + T::of(w) };
                }
            }
        }
    }
    Ok(series.map_values(values)?)
}

/// Smoothing applied to each channel independently.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FilterSpec {
    /// Normalized Gaussian kernel truncated at radius `ceil(3 sigma)`, replicate padding.
    GaussianKernel { sigma: f64 },
    /// `y_0 = x_0`, `y_t = alpha x_t + (1 - alpha) y_{t-1}`.
    Ema { alpha: f64 },
}

impl FilterSpec {
    pub fn validate(&self) -> Result<(), NoiseError> {
        match *self {
            FilterSpec::GaussianKernel { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(NoiseError::InvalidSpec(format!("kernel sigma {sigma} must be positive")))
            }
            FilterSpec::Ema { alpha } if !(alpha > 0.0 && alpha <= 1.0) => {
                Err(NoiseError::InvalidSpec(format!("alpha {alpha} outside (0, 1]")))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            FilterSpec::GaussianKernel { .. } => "gaussian_kernel",
            FilterSpec::Ema { .. } => "ema",
        }
    }
}

/// Weights `w_k ∝ exp(-k^2 / (2 sigma^2))` for `k = -r..=r`, `r = ceil(3 sigma)`, summing to one.
pub fn gaussian_kernel_weights<T: Scalar>(sigma: f64) -> Vec<T> {
    let radius = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| T::of(w / total)).collect()
}

fn gaussian_smooth<T: Scalar>(x: ArrayView1<'_, T>, weights: &[T]) -> Array1<T> {
    let radius = (weights.len() / 2) as isize;
    let last = x.len() as isize - 1;
    Array1::from_shape_fn(x.len(), |t| {
        weights
            .iter()
            .enumerate()
            .map(|(k, &w)| w * x[(t as isize + k as isize - radius).clamp(0, last) as usize])
            .sum()
    })
}

fn ema<T: Scalar>(x: ArrayView1<'_, T>, alpha: T) -> Array1<T> {
    let mut out = Array1::zeros(x.len());
    let mut prev = x[0];
    for (t, &v) in x.iter().enumerate() {
        prev = if t == 0 { v } else { alpha * v + (T::one() - alpha) * prev };
        out[t] = prev;
    }
    out
}

pub fn apply_filter<T: Scalar>(series: &TimeSeries<T>, spec: &FilterSpec) -> Result<TimeSeries<T>, NoiseError> {
    spec.validate()?;
    let mut values = Array2::zeros((series.len(), series.channels()));
    let kernel: Vec<T> = match spec {
        FilterSpec::GaussianKernel { sigma } => gaussian_kernel_weights(*sigma),
        FilterSpec::Ema { .. } => Vec::new(),
    };
    for (c, mut out) in values.axis_iter_mut(Axis(1)).enumerate() {
        let col = series.channel(c);
        let smoothed = match spec {
            FilterSpec::GaussianKernel { .. } => gaussian_smooth(col, &kernel),
            FilterSpec::Ema { alpha } => ema(col, T::of(*alpha)),
        };
        out.assign(&smoothed);
    }
    Ok(series.map_values(values)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::index;

    fn series(cols: &[Vec<f64>]) -> TimeSeries<f64> {
        TimeSeries::from_columns(cols).unwrap()
    }

    fn wavy(n: usize, d: usize) -> TimeSeries<f64> {
        let cols: Vec<Vec<f64>> = (0..d)
            .map(|c| (0..n).map(|t| ((t + 3 * c) as f64 * 0.37).sin() * (c + 1) as f64).collect())
            .collect();
        series(&cols)
    }

    #[test]
    fn zero_sigma_is_identity() {
        let s = wavy(30, 2);
        let out = inject_noise(&s, &NoiseSpec::Gaussian { sigma: 0.0, relative: false, seed: 4 }).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn full_missing_is_all_fill() {
        let s = wavy(17, 3);
        let spec = NoiseSpec::Missing { fill: 0.0, contamination: 1.0, seed: 1 };
        let out = inject_noise(&s, &spec).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_noise_replays_position_draw() {
        let s = series(&[vec![1.0, 2.0, 3.0, 4.0], vec![-1.0, -2.0, -3.0, -4.0]]);
        let spec = NoiseSpec::Constant { epsilon: Some(10.0), contamination: 0.5, seed: 77 };
        let out = inject_noise(&s, &spec).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for c in 0..2 {
            let picked: Vec<usize> = index::sample(&mut rng, 4, 2).into_vec();
            assert_eq!(picked.len(), 2);
            for t in 0..4 {
                let expected = s.channel(c)[t] + if picked.contains(&t) { 10.0 } else { 0.0 };
                assert_eq!(out.channel(c)[t], expected);
            }
        }
    }

    #[test]
    fn constant_default_shift_is_three_std() {
        let s = series(&[vec![0.0, 2.0, 0.0, 2.0, 0.0, 2.0, 0.0, 2.0, 0.0, 2.0]]);
        let spec = NoiseSpec::Constant { epsilon: None, contamination: 0.1, seed: 0 };
        let out = inject_noise(&s, &spec).unwrap();
        let diffs: Vec<f64> = out.channel(0).iter().zip(s.channel(0)).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
        assert_eq!(diffs, vec![3.0]);
    }

    #[test]
    fn frequency_noise() {
        let s = wavy(40, 1);
        let out = inject_noise(&s, &NoiseSpec::FreqReplace { amplitude: Some(1.0), frequency: 5.0 }).unwrap();
        for t in 0..40 {
            let expected = (2.0 * PI * 5.0 * t as f64 / 40.0).sin();
            assert!((out.channel(0)[t] - expected).abs() <= 1e-12);
        }
        let added = inject_noise(&s, &NoiseSpec::FreqAdd { amplitude: Some(0.7), frequency: 3.0 }).unwrap();
        let wave = sinusoid(40, 0.7, 3.0);
        for t in 0..40 {
            assert!((added.channel(0)[t] - wave[t] - s.channel(0)[t]).abs() <= 1e-12);
        }
    }

    #[test]
    fn invalid_specs() {
        let s = wavy(5, 1);
        assert!(inject_noise(&s, &NoiseSpec::Gaussian { sigma: -1.0, relative: false, seed: 0 }).is_err());
        assert!(inject_noise(&s, &NoiseSpec::Missing { fill: 0.0, contamination: 1.5, seed: 0 }).is_err());
        assert!(apply_filter(&s, &FilterSpec::Ema { alpha: 0.0 }).is_err());
        assert!(apply_filter(&s, &FilterSpec::GaussianKernel { sigma: 0.0 }).is_err());
    }

    #[test]
    fn ema_recurrence() {
        let s = series(&[vec![0.0, 1.0, 1.0]]);
        let out = apply_filter(&s, &FilterSpec::Ema { alpha: 0.5 }).unwrap();
        assert_eq!(out.channel(0).to_vec(), vec![0.0, 0.5, 0.75]);
        let wavy = wavy(20, 2);
        assert_eq!(apply_filter(&wavy, &FilterSpec::Ema { alpha: 1.0 }).unwrap(), wavy);
    }

    #[test]
    fn constant_series_is_filter_fixed_point() {
        let s = series(&[vec![2.5; 12]]);
        for spec in [FilterSpec::Ema { alpha: 0.3 }, FilterSpec::GaussianKernel { sigma: 1.7 }] {
            for v in apply_filter(&s, &spec).unwrap().channel(0).iter() {
                assert!((v - 2.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn impulse_response_is_kernel() {
        let sigma = 1.3;
        let radius = (3.0f64 * sigma).ceil() as usize;
        // explicit normalization
        let raw: Vec<f64> = (0..=2 * radius)
            .map(|i| {
                let k = i as f64 - radius as f64;
                (-k * k / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let z: f64 = raw.iter().sum();
        let expected: Vec<f64> = raw.iter().map(|w| w / z).collect();

        let n = 31;
        let mut x = vec![0.0; n];
        x[15] = 1.0;
        let out = apply_filter(&series(&[x]), &FilterSpec::GaussianKernel { sigma }).unwrap();
        for t in 0..n {
            let e = if t + radius >= 15 && t <= 15 + radius { expected[t + radius - 15] } else { 0.0 };
            assert!((out.channel(0)[t] - e).abs() <= 1e-15, "t={t}");
        }
        let w: Vec<f64> = gaussian_kernel_weights(sigma);
        assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn col() -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(-100.0f64..100.0, 2..60)
        }

        proptest! {
            #[test]
            fn ema_stays_in_range(x in col(), alpha in 0.01f64..=1.0) {
                let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
                let out = apply_filter(&series(&[x]), &FilterSpec::Ema { alpha }).unwrap();
                for &v in out.channel(0) {
                    prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
                }
            }

            #[test]
            fn gaussian_constant(c in -50.0f64..50.0, n in 1usize..40, sigma in 0.1f64..6.0) {
                let out = apply_filter(&series(&[vec![c; n]]), &FilterSpec::GaussianKernel { sigma }).unwrap();
                for &v in out.channel(0) {
                    prop_assert!((v - c).abs() <= 1e-12 * c.abs().max(1.0));
                }
                let w: Vec<f64> = gaussian_kernel_weights(sigma);
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }

            #[test]
            fn injection_touches_exact_count(x in col(), eta in 0.0f64..=1.0, seed in 0u64..1000, missing in any::<bool>()) {
                let n = x.len();
                let s = series(&[x.clone(), x.iter().map(|v| v * 2.0 + 1.0).collect()]);
                let spec = if missing {
                    NoiseSpec::Missing { fill: 1234.5, contamination: eta, seed }
                } else {
                    NoiseSpec::Constant { epsilon: Some(777.0), contamination: eta, seed }
                };
                let out = inject_noise(&s, &spec).unwrap();
                for c in 0..2 {
                    let changed = (0..n).filter(|&t| out.channel(c)[t].to_bits() != s.channel(c)[t].to_bits()).count();
                    prop_assert_eq!(changed, contaminated_count(n, eta));
                }
                let again = inject_noise(&s, &spec).unwrap();
                prop_assert_eq!(again, out);
            }

            #[test]
            fn freq_add_is_reversible(x in col(), amp in -5.0f64..5.0, cycles in 0.0f64..20.0) {
                let n = x.len();
                let s = series(std::slice::from_ref(&x));
                let out = inject_noise(&s, &NoiseSpec::FreqAdd { amplitude: Some(amp), frequency: cycles }).unwrap();
                let wave = sinusoid(n, amp, cycles);
                for t in 0..n {
                    prop_assert!((out.channel(0)[t] - wave[t] - x[t]).abs() <= 1e-12 * x[t].abs().max(1.0));
                }
            }
        }
    }
}
