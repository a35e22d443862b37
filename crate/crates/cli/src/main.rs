use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use fcbench::data::{load_csv, CsvLayout, FunctionSpec};
use fcbench::eval::{
    run_protocol, EvalOptions, Forecaster, LastValue, MetricSpace, PolynomialExtrapolator, Protocol, SeasonalRepeat,
    SingleShotLinear,
};
use fcbench::linear::{fit_single_shot, FittedLinearModel, LinearModelConfig, LinearVariant, LossKind};
use fcbench::noise::{apply_filter, inject_noise, FilterSpec, NoiseSpec};
use fcbench::runner::{run_experiment, write_csv, ExperimentConfig};
use fcbench::series::{ForecastTask, SplitSpec};
use fcbench::Series;

#[derive(Parser)]
#[command(name = "fcbench", version, about = "Forecasting benchmark runner")]
struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run(RunArgs),
    /// Write synthetic function series described by a TOML file into a directory.
    GenerateFunctions { spec: PathBuf, out: PathBuf },
    /// Corrupt a CSV series.
    InjectNoise(NoiseArgs),
    /// Smooth a CSV series.
    Filter(FilterArgs),
    /// Fit a single-shot linear model on the last `input_length` rows of a CSV series.
    FitLinear(FitArgs),
    /// Evaluate one forecaster on a CSV series.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    LastSample,
    Sliding,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::LastSample => Protocol::LastSample,
            ProtocolArg::Sliding => Protocol::Sliding,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SpaceArg {
    Standardized,
    Raw,
}

impl From<SpaceArg> for MetricSpace {
    fn from(s: SpaceArg) -> Self {
        match s {
            SpaceArg::Standardized => MetricSpace::Standardized,
            SpaceArg::Raw => MetricSpace::Raw,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Informer,
    Plain,
}

impl From<LayoutArg> for CsvLayout {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::Informer => CsvLayout::Informer,
            LayoutArg::Plain => CsvLayout::Plain,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Only parse and validate the config.
    #[arg(long)]
    dry_run: bool,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    #[arg(long, value_enum)]
    protocol: Option<ProtocolArg>,
    #[arg(long, value_enum)]
    metric_space: Option<SpaceArg>,
    /// Replace the noise-level sweep, e.g. `--sweep 0,0.001,0.01`.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<f64>>,
}

#[derive(Args)]
struct IoArgs {
    input: PathBuf,
    output: PathBuf,
    #[arg(long, value_enum, default_value = "plain")]
    layout: LayoutArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseKind {
    Gaussian,
    Constant,
    Missing,
    FreqAdd,
    FreqReplace,
}

#[derive(Args)]
struct NoiseArgs {
    #[command(flatten)]
    io: IoArgs,
    #[arg(long, value_enum)]
    kind: NoiseKind,
    /// Gaussian std; a multiple of each channel's std with `--relative`.
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    #[arg(long)]
    relative: bool,
    /// Share of corrupted points for constant and missing noise.
    #[arg(long, default_value_t = 0.1)]
    contamination: f64,
    /// Constant offset; defaults to 3 channel stds.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    fill: f64,
    /// Sinusoid amplitude; defaults to 1 channel std.
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long, default_value_t = 10.0)]
    frequency: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl NoiseArgs {
    fn spec(&self) -> NoiseSpec {
        match self.kind {
            NoiseKind::Gaussian => NoiseSpec::Gaussian {
                sigma: self.sigma,
                relative: self.relative,
                seed: self.seed,
            },
            NoiseKind::Constant => NoiseSpec::Constant {
                epsilon: self.epsilon,
                contamination: self.contamination,
                seed: self.seed,
            },
            NoiseKind::Missing => NoiseSpec::Missing {
                fill: self.fill,
                contamination: self.contamination,
                seed: self.seed,
            },
            NoiseKind::FreqAdd => NoiseSpec::FreqAdd {
                amplitude: self.amplitude,
                frequency: self.frequency,
            },
            NoiseKind::FreqReplace => NoiseSpec::FreqReplace {
                amplitude: self.amplitude,
                frequency: self.frequency,
            },
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FilterKind {
    GaussianKernel,
    Ema,
}

#[derive(Args)]
struct FilterArgs {
    #[command(flatten)]
    io: IoArgs,
    #[arg(long, value_enum)]
    kind: FilterKind,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.3)]
    alpha: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Dlinear,
    Rlinear,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    L1,
    L2,
}

#[derive(Args)]
struct LinearArgs {
    #[arg(long, value_enum, default_value = "dlinear")]
    variant: VariantArg,
    #[arg(long, value_enum, default_value = "l2")]
    loss: LossArg,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl LinearArgs {
    fn config(&self) -> LinearModelConfig {
        let mut cfg = LinearModelConfig {
            variant: match self.variant {
                VariantArg::Dlinear => LinearVariant::Dlinear,
                VariantArg::Rlinear => LinearVariant::Rlinear,
            },
            loss: match self.loss {
                LossArg::L1 => LossKind::L1,
                LossArg::L2 => LossKind::L2,
            },
            seed: self.seed,
            ..LinearModelConfig::default()
        };
        if let Some(e) = self.epochs {
            cfg.max_epochs = e;
        }
        if let Some(lr) = self.learning_rate {
            cfg.learning_rate = lr;
        }
        cfg
    }
}

#[derive(Args)]
struct FitArgs {
    input: PathBuf,
    /// Where the fitted model JSON goes.
    model: PathBuf,
    #[arg(long, value_enum, default_value = "plain")]
    layout: LayoutArg,
    #[arg(long)]
    input_length: usize,
    #[arg(long)]
    output_length: usize,
    #[command(flatten)]
    linear: LinearArgs,
    /// Also write the forecast following the input to this CSV.
    #[arg(long)]
    forecast: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ForecasterArg {
    LastValue,
    SeasonalRepeat,
    Polynomial,
    Linear,
}

#[derive(Args)]
struct EvalArgs {
    input: PathBuf,
    #[arg(long, value_enum, default_value = "plain")]
    layout: LayoutArg,
    #[arg(long)]
    input_length: usize,
    #[arg(long)]
    output_length: usize,
    #[arg(long, value_enum, default_value = "linear")]
    forecaster: ForecasterArg,
    #[command(flatten)]
    linear: LinearArgs,
    /// Period for seasonal-repeat.
    #[arg(long, default_value_t = 24)]
    period: usize,
    /// Degree and window for the polynomial baseline.
    #[arg(long, default_value_t = 3)]
    degree: usize,
    #[arg(long, default_value_t = 24)]
    window: usize,
    #[arg(long, value_enum, default_value = "last-sample")]
    protocol: ProtocolArg,
    #[arg(long, value_enum, default_value = "standardized")]
    metric_space: SpaceArg,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    /// Write the full report JSON here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FunctionFile {
    functions: Vec<FunctionSpec>,
}

fn load(path: &Path, layout: LayoutArg) -> Result<Series> {
    load_csv(path, layout.into()).with_context(|| format!("loading {}", path.display()))
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(dir) = args.output_dir {
        cfg.output_dir = std::path::absolute(dir)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(m) = args.max_in_flight {
        cfg.max_in_flight = m;
    }
    if let Some(p) = args.protocol {
        cfg.protocol = p.into();
    }
    if let Some(m) = args.metric_space {
        cfg.metric_space = m.into();
    }
    if let Some(s) = args.sweep {
        cfg.sweep = Some(s);
    }
    cfg.validate()?;
    if args.dry_run {
        println!(
            "config ok: {} datasets, {} forecasters, output {}",
            cfg.datasets.len(),
            cfg.forecasters.len(),
            cfg.output_path().display()
        );
        return Ok(ExitCode::SUCCESS);
    }
    let outcome = run_experiment(&cfg)?;
    let failed = outcome.errors().count();
    println!(
        "{} runs, {} failed; results in {}",
        outcome.records.len(),
        failed,
        outcome.output_dir.display()
    );
    if let Some(cmp) = &outcome.cost_comparison {
        println!("{cmp}");
    }
    for r in outcome.errors() {
        eprintln!("error: {} / {}: {}", r.dataset, r.forecaster, r.error.as_deref().unwrap_or(""));
    }
    Ok(if outcome.success() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_generate(spec: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
    let file: FunctionFile = toml::from_str(&text).with_context(|| format!("parsing {}", spec.display()))?;
    if file.functions.is_empty() {
        bail!("{} lists no functions", spec.display());
    }
    std::fs::create_dir_all(out)?;
    for (i, f) in file.functions.iter().enumerate() {
        let path = out.join(format!("{i:02}_{}.csv", f.kind));
        write_csv(&f.generate_series()?, &path)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let series = load(&args.input, args.layout)?;
    let task = ForecastTask::new(args.input_length, args.output_length);
    if series.len() < task.input_length {
        bail!("series has {} rows, input length is {}", series.len(), task.input_length);
    }
    let input = series.slice_rows(series.len() - task.input_length..series.len());
    let model = fit_single_shot(&input, task, &args.linear.config())?;
    model.save(&args.model)?;
    println!(
        "fitted {} on {} rows: {} epochs, train loss {:.6e}",
        model.variant.label(),
        task.input_length,
        model.stats.epochs_run,
        model.stats.train_loss
    );
    if let Some(path) = args.forecast {
        let reloaded = FittedLinearModel::<f64>::load(&args.model)?;
        let pred = reloaded.predict(input.values(), task.output_length)?;
        write_csv(&input.map_values(pred)?, &path)?;
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let series = load(&args.input, args.layout)?;
    let task = ForecastTask::new(args.input_length, args.output_length);
    let opts = EvalOptions {
        dataset_name: args.input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        split: SplitSpec {
            test_fraction: args.test_fraction,
            val_fraction: args.val_fraction,
        },
        metric_space: args.metric_space.into(),
    };
    let mut forecaster: Box<dyn Forecaster<f64>> = match args.forecaster {
        ForecasterArg::LastValue => Box::new(LastValue),
        ForecasterArg::SeasonalRepeat => Box::new(SeasonalRepeat { period: args.period }),
        ForecasterArg::Polynomial => Box::new(PolynomialExtrapolator {
            degree: args.degree,
            window: args.window,
        }),
        ForecasterArg::Linear => Box::new(SingleShotLinear::<f64>::new(args.linear.config())),
    };
    let report = run_protocol(args.protocol.into(), &series, None, task, forecaster.as_mut(), &opts)?;
    let json = serde_json::to_string_pretty(&report)?;
    match args.report {
        Some(path) => {
            std::fs::write(&path, json)?;
            println!("{} {}: mae {:.6} mse {:.6}", report.dataset, report.forecaster, report.mae, report.mse);
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).init();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::GenerateFunctions { spec, out } => cmd_generate(&spec, &out).map(|_| ExitCode::SUCCESS),
        Command::InjectNoise(args) => (|| {
            let series = load(&args.io.input, args.io.layout)?;
            write_csv(&inject_noise(&series, &args.spec())?, &args.io.output)?;
            Ok(ExitCode::SUCCESS)
        })(),
        Command::Filter(args) => (|| {
            let spec = match args.kind {
                FilterKind::GaussianKernel => FilterSpec::GaussianKernel { sigma: args.sigma },
                FilterKind::Ema => FilterSpec::Ema { alpha: args.alpha },
            };
            let series = load(&args.io.input, args.io.layout)?;
            write_csv(&apply_filter(&series, &spec)?, &args.io.output)?;
            Ok(ExitCode::SUCCESS)
        })(),
        Command::FitLinear(args) => cmd_fit(args).map(|_| ExitCode::SUCCESS),
        Command::Eval(args) => cmd_eval(args).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
