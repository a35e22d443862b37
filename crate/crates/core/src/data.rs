//! Benchmark CSV ingestion and the synthetic Function dataset.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::{validate_series, SeriesError, TimeSeries};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("parse error at line {line}, column {column}: `{value}`")]
    ParseError { line: usize, column: usize, value: String },
    #[error("line {line} has {found} fields, expected {expected}")]
    RaggedRows { line: usize, expected: usize, found: usize },
    #[error("unknown function kind `{0}`")]
    UnknownKind(String),
    #[error("invalid function spec: {0}")]
    InvalidSpec(String),
    #[error("dataset name `{0}` is not unique")]
    DuplicateName(String),
    #[error("empty dataset collection")]
    EmptyCollection,
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Column layout of a CSV file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsvLayout {
    /// Header row, timestamp text in the first column, numeric channels after it.
    #[default]
    Informer,
    /// Numeric columns only; a header row is accepted when none of its fields parse as numbers.
    Plain,
}

impl FromStr for CsvLayout {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "informer" => Ok(CsvLayout::Informer),
            "plain" => Ok(CsvLayout::Plain),
            other => Err(format!("unknown csv layout `{other}`")),
        }
    }
}

/// Load a CSV file into a `TimeSeries<f64>`, preserving row order.
pub fn load_csv(path: impl AsRef<Path>, layout: CsvLayout) -> Result<TimeSeries<f64>, DataError> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(DataError::FileNotFound(path.display().to_string()));
    }
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text, layout)
}

/// Parse CSV text; see [`load_csv`].
pub fn parse_csv(text: &str, layout: CsvLayout) -> Result<TimeSeries<f64>, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let line = rec.position().map_or(records.len() + 1, |p| p.line() as usize);
        records.push((line, rec));
    }

    let skip_cols = usize::from(layout == CsvLayout::Informer);
    let mut names = None;
    let mut body = records.as_slice();
    if let Some((_, first)) = records.first() {
        let is_header = match layout {
            CsvLayout::Informer => true,
            CsvLayout::Plain => first.iter().all(|f| f.parse::<f64>().is_err()),
        };
        if is_header {
            names = Some(first.iter().skip(skip_cols).map(str::to_owned).collect::<Vec<_>>());
            body = &records[1..];
        }
    }

    let width = match (body.first(), &names) {
        (_, Some(n)) => n.len() + skip_cols,
        (Some((_, r)), None) => r.len(),
        (None, None) => 0,
    };
    let d = width.saturating_sub(skip_cols);
    if body.is_empty() || d == 0 {
        return Err(SeriesError::EmptyInput.into());
    }

    let mut flat = Vec::with_capacity(body.len() * d);
    for (line, rec) in body {
        if rec.len() != width {
            return Err(DataError::RaggedRows {
                line: *line,
                expected: width,
                found: rec.len(),
            });
        }
        for (column, field) in rec.iter().enumerate().skip(skip_cols) {
            let v: f64 = field.parse().map_err(|_| DataError::ParseError {
                line: *line,
                column: column + 1,
                value: field.to_owned(),
            })?;
            flat.push(v);
        }
    }
    let raw = Array2::from_shape_vec((body.len(), d), flat).expect("rows checked");
    Ok(validate_series(raw, names)?)
}

/// A named set of series `{D^1, ..., D^N}` with unique names.
#[derive(Debug, Clone)]
pub struct DatasetCollection {
    entries: Vec<(String, TimeSeries<f64>)>,
}

impl DatasetCollection {
    pub fn new(entries: Vec<(String, TimeSeries<f64>)>) -> Result<Self, DataError> {
        if entries.is_empty() {
            return Err(DataError::EmptyCollection);
        }
        let mut seen = HashSet::new();
        for (name, _) in &entries {
            if !seen.insert(name.as_str()) {
                return Err(DataError::DuplicateName(name.clone()));
            }
        }
        Ok(DatasetCollection { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&TimeSeries<f64>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &TimeSeries<f64>)> {
        self.entries.iter().map(|(n, s)| (n.as_str(), s))
    }

    pub fn into_entries(self) -> Vec<(String, TimeSeries<f64>)> {
        self.entries
    }
}

/// Base function families of the Function dataset, sampled on `t in [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionKind {
    /// `sin(2*pi*4*t)`
    Sine,
    /// `t`
    Linear,
    /// `t^2`
    Quadratic,
    /// `exp(3t)`
    Exponential,
    /// `1 / (1 + exp(-12(t - 0.5)))`
    Sigmoid,
    /// `sin(2*pi*5t) + sin(2*pi*5.5t)`
    BeatInterference,
}

impl FunctionKind {
    pub const ALL: [FunctionKind; 6] = [
        FunctionKind::Sine,
        FunctionKind::Linear,
        FunctionKind::Quadratic,
        FunctionKind::Exponential,
        FunctionKind::Sigmoid,
        FunctionKind::BeatInterference,
    ];

    pub fn eval(self, t: f64) -> f64 {
        match self {
            FunctionKind::Sine => (2.0 * PI * 4.0 * t).sin(),
            FunctionKind::Linear => t,
            FunctionKind::Quadratic => t * t,
            FunctionKind::Exponential => (3.0 * t).exp(),
            FunctionKind::Sigmoid => 1.0 / (1.0 + (-12.0 * (t - 0.5)).exp()),
            FunctionKind::BeatInterference => (2.0 * PI * 5.0 * t).sin() + (2.0 * PI * 5.5 * t).sin(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FunctionKind::Sine => "sine",
            FunctionKind::Linear => "linear",
            FunctionKind::Quadratic => "quadratic",
            FunctionKind::Exponential => "exponential",
            FunctionKind::Sigmoid => "sigmoid",
            FunctionKind::BeatInterference => "beat_interference",
        }
    }
}

impl fmt::Display for FunctionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FunctionKind {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FunctionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| DataError::UnknownKind(s.to_owned()))
    }
}

fn default_length() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSpec {
    pub kind: FunctionKind,
    #[serde(default = "default_length")]
    pub length: usize,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
}

impl FunctionSpec {
    pub fn new(kind: FunctionKind) -> Self {
        FunctionSpec {
            kind,
            length: default_length(),
            noise_std: 0.0,
            seed: 0,
        }
    }

    pub fn with_noise(mut self, noise_std: f64, seed: u64) -> Self {
        self.noise_std = noise_std;
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.length < 2 {
            return Err(DataError::InvalidSpec(format!("length {} < 2", self.length)));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(DataError::InvalidSpec(format!("noise_std {}", self.noise_std)));
        }
        Ok(())
    }

    /// The noise-free function min-max scaled to `[0, 1]`.
    pub fn clean_values(&self) -> Vec<f64> {
        let last = (self.length - 1) as f64;
        let raw: Vec<f64> = (0..self.length).map(|i| self.kind.eval(i as f64 / last)).collect();
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        raw.into_iter().map(|v| (v - lo) / range).collect()
    }

    /// Clean values plus seeded `N(0, noise_std^2)` draws from ChaCha8.
    pub fn generate(&self) -> Result<Vec<f64>, DataError> {
        self.validate()?;
        let mut values = self.clean_values();
        if self.noise_std > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            for v in &mut values {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += self.noise_std * z;
            }
        }
        Ok(values)
    }

    pub fn generate_series(&self) -> Result<TimeSeries<f64>, DataError> {
        let series = TimeSeries::univariate(&self.generate()?)?;
        Ok(series.with_channel_names(vec![self.kind.name().to_owned()])?)
    }
}

/// One univariate series per spec, named by kind (suffixed `_2`, `_3`, ... on repeats).
pub fn generate_function_dataset(specs: &[FunctionSpec]) -> Result<DatasetCollection, DataError> {
    if specs.is_empty() {
        return Err(DataError::EmptyCollection);
    }
    let mut entries: Vec<(String, TimeSeries<f64>)> = Vec::with_capacity(specs.len());
    for spec in specs {
        let base = spec.kind.name();
        let repeats = entries
            .iter()
            .filter(|(n, _)| n == base || n.starts_with(&format!("{base}_")))
            .count();
        let name = if repeats == 0 {
            base.to_owned()
        } else {
            format!("{base}_{}", repeats + 1)
        };
        entries.push((name, spec.generate_series()?));
    }
    DatasetCollection::new(entries)
}

/// All six families as one multivariate series, one channel per kind.
pub fn function_suite(length: usize, noise_std: f64, seed: u64) -> Result<TimeSeries<f64>, DataError> {
    let columns = FunctionKind::ALL
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            FunctionSpec {
                kind: k,
                length,
                noise_std,
                seed: seed.wrapping_add(i as u64),
            }
            .generate()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let names = FunctionKind::ALL.iter().map(|k| k.name().to_owned()).collect();
    Ok(TimeSeries::from_columns(&columns)?.with_channel_names(names)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn informer_layout() {
        let s = parse_csv("date,HUFL\n2016-07-01 00:00:00,5.8\n2016-07-01 00:15:00,5.5\n", CsvLayout::Informer)
            .unwrap();
        assert_eq!((s.len(), s.channels()), (2, 1));
        assert_eq!(s.channel_name(0), "HUFL");
        assert_eq!(s.channel(0).to_vec(), vec![5.8, 5.5]);
    }

    #[test]
    fn plain_layout() {
        let s = parse_csv("1.0,2.0\n3.0,4.0", CsvLayout::Plain).unwrap();
        assert_eq!((s.len(), s.channels()), (2, 2));
        assert_eq!(s.channel(1).to_vec(), vec![2.0, 4.0]);
        let with_header = parse_csv("a,b\n1,2\n", CsvLayout::Plain).unwrap();
        assert_eq!(with_header.channel_name(0), "a");
    }

    #[test]
    fn bad_field_reports_position() {
        let err = parse_csv("date,x\nt0,1.0\nt1,abc\n", CsvLayout::Informer).unwrap_err();
        match err {
            DataError::ParseError { line, column, value } => {
                assert_eq!((line, column, value.as_str()), (3, 2, "abc"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_rows() {
        let err = parse_csv("1,2\n3\n", CsvLayout::Plain).unwrap_err();
        assert!(matches!(err, DataError::RaggedRows { line: 2, .. }));
    }

    #[test]
    fn missing_file() {
        let err = load_csv("/definitely/not/here.csv", CsvLayout::Plain).unwrap_err();
        assert!(matches!(err, DataError::FileNotFound(_)));
    }

    #[test]
    fn clean_functions_span_unit_interval() {
        for kind in FunctionKind::ALL {
            let v = FunctionSpec::new(kind).generate().unwrap();
            assert_eq!(v.len(), 200);
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(lo.abs() <= 1e-12 && (hi - 1.0).abs() <= 1e-12, "{kind}: [{lo}, {hi}]");
        }
    }

    #[test]
    fn small_noise_has_matching_sample_std() {
        let spec = FunctionSpec::new(FunctionKind::Sine).with_noise(0.001, 42);
        let clean = spec.clean_values();
        let noisy = spec.generate().unwrap();
        let diff: Vec<f64> = noisy.iter().zip(&clean).map(|(a, b)| a - b).collect();
        let m = diff.iter().sum::<f64>() / diff.len() as f64;
        let sd = (diff.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (diff.len() - 1) as f64).sqrt();
        assert!((0.0005..=0.002).contains(&sd), "sample std {sd}");
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = FunctionSpec::new(FunctionKind::BeatInterference).with_noise(0.05, 9);
        let a = spec.generate().unwrap();
        let b = spec.generate().unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        let other = FunctionSpec::new(FunctionKind::BeatInterference).with_noise(0.05, 10);
        assert_ne!(a, other.generate().unwrap());
    }

    #[test]
    fn unknown_kind_and_names() {
        assert!(matches!("cosine".parse::<FunctionKind>(), Err(DataError::UnknownKind(_))));
        let specs = vec![
            FunctionSpec::new(FunctionKind::Sine),
            FunctionSpec::new(FunctionKind::Sine).with_noise(0.01, 1),
            FunctionSpec::new(FunctionKind::Sigmoid),
        ];
        let coll = generate_function_dataset(&specs).unwrap();
        let names: Vec<_> = coll.iter().map(|(n, _)| n.to_owned()).collect();
        assert_eq!(names, vec!["sine", "sine_2", "sigmoid"]);
        assert!(generate_function_dataset(&[]).is_err());
    }

    #[test]
    fn suite_has_six_channels() {
        let s = function_suite(200, 0.0, 0).unwrap();
        assert_eq!((s.len(), s.channels()), (200, 6));
        assert_eq!(s.channel_name(5), "beat_interference");
    }
}
