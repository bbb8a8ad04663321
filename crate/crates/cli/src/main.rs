//! Command-line surface for the histogram-MLE enhancement pipeline.
//!
//! Subcommands: `enhance`, `fit`, `hist`, `synth`, `metrics`. Requested
//! artifacts (CSV/JSON/PGM) go to stdout or the named files; diagnostics go
//! to stderr, gated by the `HISTMLE_LOG` env var (off|info|debug, default
//! info). Exit codes: 0 success, 1 pipeline/runtime failure, 2 usage error.

mod synth;

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use histmle_core::enhancement::{
    enhance, fit_field, Estimator, PipelineConfig, RangeSource, ShiftStrategy,
};
use histmle_core::estimation::{check_stationarity, GaussianMode, MixtureModel};
use histmle_core::histogram::{image_histogram, Histogram};
use histmle_core::image::{load_pgm, normalize, save_pgm, GrayImage};
use histmle_core::metrics::metric_record;
use synth::SynthSpec;

#[derive(Parser)]
#[command(
    name = "histmle",
    version,
    about = "Grayscale contrast enhancement by mixture MLE and histogram specification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enhance a PGM image and write the result.
    Enhance {
        /// Input binary PGM (P5, maxval 255).
        input: PathBuf,
        /// Output PGM path.
        output: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Write a JSON report (fit, plan, LUT, metrics) to this path.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write source/desired density CSVs into this directory.
        #[arg(long, value_name = "DIR")]
        dump_hist: Option<PathBuf>,
    },
    /// Fit the mixture model and print the report as JSON.
    Fit {
        input: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Gradient pass threshold, scaled by the sample count.
        #[arg(long, default_value_t = 1e-4)]
        stationarity_eps: f64,
    },
    /// Print the intensity histogram as CSV.
    Hist {
        input: PathBuf,
        #[arg(long, default_value_t = 256)]
        bins: usize,
    },
    /// Generate a seeded synthetic image from a Gaussian mixture.
    Synth {
        output: PathBuf,
        #[arg(long, default_value_t = 256)]
        width: u32,
        #[arg(long, default_value_t = 256)]
        height: u32,
        /// Mixture component as WEIGHT,MEAN,STD; repeat per mode. Weights
        /// must sum to 1 and means must strictly increase.
        #[arg(long = "mode", value_name = "W,MEAN,STD", required = true)]
        modes: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print contrast metrics for an image as JSON.
    Metrics { input: PathBuf },
}

#[derive(Args)]
struct ConfigArgs {
    /// Number of mixture modes K.
    #[arg(long, default_value_t = 2)]
    modes: usize,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Em)]
    estimator: EstimatorArg,
    #[arg(long, value_enum, default_value_t = StrategyArg::Half)]
    strategy: StrategyArg,
    /// Index of the last mode shifted left (1..K-1), or "auto" for ceil(K/2).
    #[arg(long, default_value = "auto")]
    pivot: PivotArg,
    /// Analysis histogram bin count.
    #[arg(long, default_value_t = 256)]
    bins: usize,
    /// EM relative log-likelihood convergence tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: u32,
    /// Where the shift range Min/Max comes from.
    #[arg(long, value_enum, default_value_t = RangeArg::Observed)]
    range: RangeArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Em,
    Segmented,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Full,
    Half,
}

#[derive(Clone, Copy, ValueEnum)]
enum RangeArg {
    Observed,
    Full,
}

#[derive(Clone, Copy, Debug)]
enum PivotArg {
    Auto,
    At(usize),
}

impl FromStr for PivotArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            Ok(PivotArg::Auto)
        } else {
            s.parse::<usize>()
                .map(PivotArg::At)
                .map_err(|_| format!("expected a positive integer or \"auto\", got {s:?}"))
        }
    }
}

impl ConfigArgs {
    fn to_pipeline_config(&self) -> Result<PipelineConfig, CliError> {
        if self.modes == 0 {
            return Err(CliError::Usage("--modes must be at least 1".to_string()));
        }
        if self.bins < 2 {
            return Err(CliError::Usage("--bins must be at least 2".to_string()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(CliError::Usage("--tol must be positive".to_string()));
        }
        let pivot = match self.pivot {
            PivotArg::Auto => None,
            PivotArg::At(p) => {
                if p < 1 || p >= self.modes {
                    return Err(CliError::Usage(format!(
                        "--pivot {p} must satisfy 1 <= pivot < modes ({})",
                        self.modes
                    )));
                }
                Some(p)
            }
        };
        Ok(PipelineConfig {
            modes: self.modes,
            estimator: match self.estimator {
                EstimatorArg::Em => Estimator::Em,
                EstimatorArg::Segmented => Estimator::Segmented,
            },
            strategy: match self.strategy {
                StrategyArg::Full => ShiftStrategy::Full,
                StrategyArg::Half => ShiftStrategy::Half,
            },
            pivot,
            bins: self.bins,
            tol: self.tol,
            max_iter: self.max_iter,
            range: match self.range {
                RangeArg::Observed => RangeSource::Observed,
                RangeArg::Full => RangeSource::Full,
            },
        })
    }
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn runtime(err: impl Display) -> Self {
        CliError::Runtime(err.to_string())
    }
}

/// Writes the requested artifact to stdout. A closed pipe downstream is not
/// an error.
fn emit(text: &str) -> Result<(), CliError> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        Err(e) => Err(CliError::Runtime(format!("cannot write to stdout: {e}"))),
    }
}

#[derive(Clone, Copy, PartialEq, PartialOrd)]
enum LogLevel {
    Off,
    Info,
    Debug,
}

fn log_level() -> LogLevel {
    match std::env::var("HISTMLE_LOG").as_deref() {
        Ok("off") => LogLevel::Off,
        Ok("debug") => LogLevel::Debug,
        _ => LogLevel::Info,
    }
}

fn log_info(msg: impl Display) {
    if log_level() >= LogLevel::Info {
        eprintln!("histmle: {msg}");
    }
}

fn log_debug(msg: impl Display) {
    if log_level() >= LogLevel::Debug {
        eprintln!("histmle: {msg}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Enhance {
            input,
            output,
            config,
            report,
            dump_hist,
        } => cmd_enhance(
            &input,
            &output,
            &config,
            report.as_deref(),
            dump_hist.as_deref(),
        ),
        Command::Fit {
            input,
            config,
            stationarity_eps,
        } => cmd_fit(&input, &config, stationarity_eps),
        Command::Hist { input, bins } => cmd_hist(&input, bins),
        Command::Synth {
            output,
            width,
            height,
            modes,
            seed,
        } => cmd_synth(&output, width, height, &modes, seed),
        Command::Metrics { input } => cmd_metrics(&input),
    }
}

fn read_image(path: &Path) -> Result<GrayImage, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    load_pgm(&bytes)
        .map_err(|e| CliError::Runtime(format!("cannot decode {}: {e}", path.display())))
}

fn warn_on_narrow_range(image: &GrayImage) {
    let (min, max) = normalize(image).min_max();
    if max - min < 0.1 {
        log_info(format!(
            "dynamic range {:.4} is below 0.1; shifts depend on the extremes and may be large \
             relative to the usable range",
            max - min
        ));
    }
}

fn cmd_enhance(
    input: &Path,
    output: &Path,
    config_args: &ConfigArgs,
    report_path: Option<&Path>,
    dump_dir: Option<&Path>,
) -> Result<(), CliError> {
    let config = config_args.to_pipeline_config()?;
    let image = read_image(input)?;
    warn_on_narrow_range(&image);
    log_debug(format!(
        "enhancing {} ({}x{})",
        input.display(),
        image.width(),
        image.height()
    ));
    let result = enhance(&image, &config).map_err(CliError::runtime)?;
    std::fs::write(output, save_pgm(&result.enhanced))
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", output.display())))?;
    log_debug(format!("wrote {}", output.display()));

    if let Some(path) = report_path {
        let report = serde_json::json!({
            "fit": result.fit,
            "plan": result.plan,
            "midrange_threshold": result.midrange_threshold,
            "lut": result.lut,
            "metrics_before": result.metrics_before,
            "metrics_after": result.metrics_after,
        });
        let text = serde_json::to_string_pretty(&report).map_err(CliError::runtime)?;
        std::fs::write(path, text + "\n")
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        log_debug(format!("wrote {}", path.display()));
    }

    if let Some(dir) = dump_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        write_density_csv(&dir.join("source.csv"), &result.source_density)?;
        write_density_csv(&dir.join("desired.csv"), &result.desired_density)?;
        log_debug(format!("wrote density CSVs into {}", dir.display()));
    }
    Ok(())
}

/// Per-level densities on the 256-level grid: mass per level divided by the
/// level width, so the column integrates to one.
fn write_density_csv(path: &Path, masses: &[f64]) -> Result<(), CliError> {
    let levels = masses.len() as f64;
    let mut out = String::from("bin_left,bin_right,density\n");
    for (v, &mass) in masses.iter().enumerate() {
        let left = v as f64 / levels;
        let right = (v + 1) as f64 / levels;
        out.push_str(&format!("{left:.9e},{right:.9e},{:.9e}\n", mass * levels));
    }
    std::fs::write(path, out)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn cmd_fit(input: &Path, config_args: &ConfigArgs, eps: f64) -> Result<(), CliError> {
    let config = config_args.to_pipeline_config()?;
    let image = read_image(input)?;
    let field = normalize(&image);
    let report = fit_field(&field, &config).map_err(CliError::runtime)?;
    if report.reseeded {
        log_info("a collapsed component was re-seeded during EM");
    }
    let stationarity = check_stationarity(&report.model, field.values(), eps);
    let mut value = serde_json::to_value(&report).map_err(CliError::runtime)?;
    value["stationarity"] = serde_json::to_value(&stationarity).map_err(CliError::runtime)?;
    let text = serde_json::to_string_pretty(&value).map_err(CliError::runtime)?;
    emit(&(text + "\n"))
}

fn cmd_hist(input: &Path, bins: usize) -> Result<(), CliError> {
    if bins < 2 {
        return Err(CliError::Usage("--bins must be at least 2".to_string()));
    }
    let image = read_image(input)?;
    let hist = image_histogram(&normalize(&image), bins).map_err(CliError::runtime)?;
    emit(&histogram_csv(&hist))
}

fn histogram_csv(hist: &Histogram) -> String {
    let grid = hist.grid();
    let n = hist.total() as f64;
    let mut out = String::from("bin_left,bin_right,count,density\n");
    for (j, &count) in hist.counts().iter().enumerate() {
        let density = count as f64 / (n * grid.width());
        out.push_str(&format!(
            "{:.9e},{:.9e},{count},{density:.9e}\n",
            grid.bin_left(j),
            grid.bin_right(j),
        ));
    }
    out
}

fn cmd_synth(
    output: &Path,
    width: u32,
    height: u32,
    mode_specs: &[String],
    seed: u64,
) -> Result<(), CliError> {
    if width == 0 || height == 0 {
        return Err(CliError::Usage(
            "--width and --height must be at least 1".to_string(),
        ));
    }
    let mut modes = Vec::with_capacity(mode_specs.len());
    for spec in mode_specs {
        modes.push(parse_mode(spec)?);
    }
    let model =
        MixtureModel::new(modes).map_err(|e| CliError::Usage(format!("invalid mixture: {e}")))?;
    let spec = SynthSpec {
        width,
        height,
        model,
        seed,
    };
    let image = synth::generate(&spec).map_err(CliError::Usage)?;
    std::fs::write(output, save_pgm(&image))
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", output.display())))?;
    log_debug(format!("wrote {}", output.display()));
    Ok(())
}

fn parse_mode(spec: &str) -> Result<GaussianMode, CliError> {
    let parts: Vec<&str> = spec.split(',').collect();
    if parts.len() != 3 {
        return Err(CliError::Usage(format!(
            "mode {spec:?} must be WEIGHT,MEAN,STD"
        )));
    }
    let parse = |name: &str, text: &str| {
        text.trim()
            .parse::<f64>()
            .map_err(|_| CliError::Usage(format!("mode {spec:?}: {name} {text:?} is not a number")))
    };
    Ok(GaussianMode::new(
        parse("weight", parts[0])?,
        parse("mean", parts[1])?,
        parse("std", parts[2])?,
    ))
}

fn cmd_metrics(input: &Path) -> Result<(), CliError> {
    let image = read_image(input)?;
    let record = metric_record(&image);
    let text = serde_json::to_string_pretty(&record).map_err(CliError::runtime)?;
    emit(&(text + "\n"))
}
