//! `skycast` — generate data, train, evaluate, and inspect short-term
//! irradiance forecasters from the command line.
//!
//! Every verb resolves its settings the same way: built-in defaults, then an
//! optional TOML config file, then the `SKYCAST_OUT` environment variable
//! (output directory only), then command-line flags. The resolved config is
//! echoed into the output directory as `config.echo.json` so a run can always
//! be reproduced from its artifacts.
//!
//! On failure the process exits nonzero after printing a single line to
//! stderr of the form `error[<category>]: <message>`, where `<category>` is a
//! stable machine-parsable slug (`config`, `archive`, `checkpoint-missing`,
//! ...).

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};

use skycast_core::clearsky::{smart_persistence_forecast, ClearSkyError};
use skycast_core::config::{
    echo_config, load_config, parse_hhmm, CliOverrides, ConfigError, RunConfig, SplitChoice,
};
use skycast_core::dataset::{
    assemble_all, assemble_sample, ingest_directory, synth_generate, CloudRegime, DatasetError,
    SampleIndex, SkySample, GHI_SCALE,
};
use skycast_core::evaluation::{
    evaluate_model, horizon_sweep, predictions_wm2, split_label, sweep_checkpoint_name,
    write_reports_csv, EvaluationError, EvaluationReport,
};
use skycast_core::introspection::{
    activation_grid_filename, activation_maps, dead_filter_report, filter_image_filename,
    filter_visualization, AscentOptions, IntrospectionError, DEFAULT_ASCENT_STEPS,
    DEFAULT_ASCENT_STEP_SIZE, DEFAULT_VARIANCE_EPS,
};
use skycast_core::model::{build_network, ModelError, Network};
use skycast_core::training::{
    load_checkpoint, save_checkpoint, train_model_with, TrainHistory, TrainingError,
};

/// Samples used to probe filter health during `visualize`.
const PROBE_CAP: usize = 64;

#[derive(Parser)]
#[command(
    name = "skycast",
    version,
    about = "Short-term solar irradiance forecasting from all-sky images"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sky-image archive with a measurement log.
    Synth(CommonFlags),
    /// Train a forecaster for one horizon, then score it on the validation split.
    Train(CommonFlags),
    /// Evaluate an existing checkpoint against smart persistence.
    Eval(CommonFlags),
    /// Train and evaluate one model per horizon; write a combined table and plot.
    Sweep {
        #[command(flatten)]
        common: CommonFlags,
        /// Comma-separated horizons in minutes (default: 2,4,...,20).
        #[arg(long, value_name = "MIN,...", value_delimiter = ',')]
        horizons: Option<Vec<u32>>,
    },
    /// Export activation maps, a dead-filter report, and preferred-input images.
    Visualize {
        #[command(flatten)]
        common: CommonFlags,
        /// Convolution layer to inspect.
        #[arg(long, value_name = "NAME", default_value = "cnn.stem")]
        layer: String,
        /// Maximum number of per-filter preferred-input images to synthesize.
        #[arg(long, value_name = "N", default_value_t = 8)]
        count: usize,
    },
    /// Predict irradiance one horizon ahead from an archive sample.
    Forecast {
        #[command(flatten)]
        common: CommonFlags,
        /// Reference time, RFC 3339 (e.g. 2024-06-01T12:30:00Z). Default: the
        /// newest archive entry that yields a usable sample.
        #[arg(long, value_name = "WHEN")]
        at: Option<String>,
    },
}

/// Flags shared by every verb. Unset flags fall back to the config file and
/// then to built-in defaults.
#[derive(Args, Debug, Default)]
struct CommonFlags {
    /// TOML config file; flags override its values.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory for run artifacts.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Global seed; every random choice in the run derives from it.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Forecast horizon in minutes (even, 2-20).
    #[arg(long, value_name = "MIN")]
    horizon: Option<u32>,
    /// Train/validation split protocol.
    #[arg(long, value_enum, value_name = "KIND")]
    split: Option<SplitArg>,
    /// Afternoon-split boundary as local time HH:MM.
    #[arg(long, value_name = "HH:MM")]
    cutoff: Option<String>,
    /// Filters per trunk convolution (overrides the horizon-based policy).
    #[arg(long, value_name = "N")]
    filters: Option<usize>,
    /// Learning rate.
    #[arg(long, value_name = "F")]
    lr: Option<f64>,
    /// Epoch cap.
    #[arg(long, value_name = "N")]
    epochs: Option<usize>,
    /// Archive directory (`synth` writes it, the other verbs read it).
    #[arg(long, value_name = "DIR")]
    archive: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    /// Whole days go to either train or validation, never both.
    DistinctDays,
    /// Within every day, mornings train and afternoons validate.
    Afternoon,
}

/// Anything a verb can fail with, tagged with a stable category slug for the
/// one-line stderr report.
#[derive(Debug)]
enum CliError {
    Config(ConfigError),
    Dataset(DatasetError),
    ClearSky(ClearSkyError),
    Model(ModelError),
    Training(TrainingError),
    Evaluation(EvaluationError),
    Introspection(IntrospectionError),
    CheckpointMissing { path: PathBuf },
    NoSample { details: String },
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Dataset(_) => "archive",
            CliError::ClearSky(_) => "clearsky",
            CliError::Model(_) => "model",
            CliError::Training(TrainingError::CheckpointFormat { .. }) => "checkpoint-format",
            CliError::Training(_) => "training",
            CliError::Evaluation(_) => "evaluation",
            CliError::Introspection(_) => "introspection",
            CliError::CheckpointMissing { .. } => "checkpoint-missing",
            CliError::NoSample { .. } => "no-sample",
            CliError::Io { .. } => "io",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Dataset(e) => write!(f, "{e}"),
            CliError::ClearSky(e) => write!(f, "{e}"),
            CliError::Model(e) => write!(f, "{e}"),
            CliError::Training(e) => write!(f, "{e}"),
            CliError::Evaluation(e) => write!(f, "{e}"),
            CliError::Introspection(e) => write!(f, "{e}"),
            CliError::CheckpointMissing { path } => write!(
                f,
                "checkpoint {} not found; run `skycast train` (or `sweep`) with the same --out and --horizon first",
                path.display()
            ),
            CliError::NoSample { details } => write!(f, "{details}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

macro_rules! from_error {
    ($variant:ident, $source:ty) => {
        impl From<$source> for CliError {
            fn from(e: $source) -> Self {
                CliError::$variant(e)
            }
        }
    };
}

from_error!(Config, ConfigError);
from_error!(Dataset, DatasetError);
from_error!(ClearSky, ClearSkyError);
from_error!(Model, ModelError);
from_error!(Training, TrainingError);
from_error!(Evaluation, EvaluationError);
from_error!(Introspection, IntrospectionError);

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error[{}]: {err}", err.category());
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth(common) => cmd_synth(&resolve(&common)?),
        Command::Train(common) => cmd_train(&resolve(&common)?),
        Command::Eval(common) => cmd_eval(&resolve(&common)?),
        Command::Sweep { common, horizons } => cmd_sweep(&resolve(&common)?, horizons),
        Command::Visualize {
            common,
            layer,
            count,
        } => cmd_visualize(&resolve(&common)?, &layer, count),
        Command::Forecast { common, at } => cmd_forecast(&resolve(&common)?, at.as_deref()),
    }
}

/// Turns the shared flags into a fully validated run configuration.
fn resolve(common: &CommonFlags) -> Result<RunConfig, CliError> {
    let overrides = CliOverrides {
        out: common.out.clone(),
        seed: common.seed,
        horizon_min: common.horizon,
        split: common.split.map(|s| match s {
            SplitArg::DistinctDays => SplitChoice::DistinctDays,
            SplitArg::Afternoon => SplitChoice::Afternoon,
        }),
        cutoff_local: match &common.cutoff {
            Some(text) => Some(parse_hhmm(text)?),
            None => None,
        },
        filters: common.filters,
        learning_rate: common.lr,
        epochs: common.epochs,
        archive: common.archive.clone(),
    };
    Ok(load_config(common.config.as_deref(), &overrides)?)
}

fn cmd_synth(config: &RunConfig) -> Result<(), CliError> {
    echo_config(config, &config.out)?;
    let summary = synth_generate(
        &config.synth,
        &config.site,
        config.synth_seed(),
        &config.archive,
    )?;
    let mut counts = [0usize; 3];
    for day in &summary.days {
        counts[match day.regime {
            CloudRegime::Clear => 0,
            CloudRegime::Broken => 1,
            CloudRegime::Overcast => 2,
        }] += 1;
    }
    println!(
        "synth: {} days ({} clear, {} broken, {} overcast), {} timestamps -> {}",
        summary.days.len(),
        counts[0],
        counts[1],
        counts[2],
        summary.total_stamps,
        config.archive.display()
    );
    Ok(())
}

/// Ingests the archive and assembles both sides of the configured split.
fn load_sets(
    config: &RunConfig,
    horizon_min: u32,
    image_size: usize,
) -> Result<(Vec<SkySample>, Vec<SkySample>), CliError> {
    let index = ingest_directory(&config.archive)?;
    let split = config.split_spec();
    let (train_idx, val_idx) = split.apply(&index, config.site.lon_deg)?;
    let train = assemble_all(&index, &train_idx, horizon_min, image_size, &config.site)?;
    let val = assemble_all(&index, &val_idx, horizon_min, image_size, &config.site)?;
    Ok((train.samples, val.samples))
}

fn cmd_train(config: &RunConfig) -> Result<(), CliError> {
    echo_config(config, &config.out)?;
    let h = config.horizon_min;
    let (train, val) = load_sets(config, h, config.image_size)?;
    let mut network = build_network(&config.network_config(h))?;
    let train_config = config.train_config(h);
    let max_epochs = train_config.max_epochs;
    let history = train_model_with(&mut network, &train, &val, &train_config, |e| {
        // RMSE in W/m² is the unit people reason about; MSE is what's stored.
        println!(
            "epoch {}/{}: train rmse {:.1} W/m², val rmse {:.1} W/m²",
            e.epoch,
            max_epochs,
            e.train_mse.sqrt() * GHI_SCALE,
            e.val_mse.sqrt() * GHI_SCALE
        );
    })?;

    let ckpt = config.out.join(sweep_checkpoint_name(h));
    save_checkpoint(&network, &ckpt)?;
    write_history(&config.out.join("history.json"), &history)?;

    let report = evaluate_model(&network, &val, split_label(&config.split_spec()), config.seed)?;
    write_reports_csv(std::slice::from_ref(&report), &config.out.join("report.csv"))?;

    println!(
        "train: h={} min, {} train / {} val samples, {} epochs, checkpoint {}",
        h,
        train.len(),
        val.len(),
        history.epochs.len(),
        ckpt.display()
    );
    print_report(&report);
    Ok(())
}

fn cmd_eval(config: &RunConfig) -> Result<(), CliError> {
    echo_config(config, &config.out)?;
    let ckpt = config.out.join(sweep_checkpoint_name(config.horizon_min));
    let network = load_network(&ckpt)?;
    // Assemble with the checkpoint's own horizon and input size so the scores
    // always describe the model that was actually trained.
    let h = network.config().horizon_min;
    let s = network.config().input_size;

    let index = ingest_directory(&config.archive)?;
    let split = config.split_spec();
    let (_, val_idx) = split.apply(&index, config.site.lon_deg)?;
    let val = assemble_all(&index, &val_idx, h, s, &config.site)?.samples;

    let report = evaluate_model(&network, &val, split_label(&split), config.seed)?;
    write_reports_csv(std::slice::from_ref(&report), &config.out.join("report.csv"))?;
    print_report(&report);
    Ok(())
}

fn cmd_sweep(config: &RunConfig, horizons: Option<Vec<u32>>) -> Result<(), CliError> {
    echo_config(config, &config.out)?;
    let horizons = horizons.unwrap_or_else(|| (1..=10).map(|k| 2 * k).collect());
    let index = ingest_directory(&config.archive)?;
    let outcome = horizon_sweep(&index, &horizons, &config.sweep_config(), &config.out)?;

    for report in &outcome.reports {
        print_report(report);
    }
    for failure in &outcome.failures {
        eprintln!(
            "warning: horizon {} min failed: {}",
            failure.horizon_min, failure.error
        );
    }
    println!(
        "sweep: {} of {} horizons scored, table {}",
        outcome.reports.len(),
        horizons.len(),
        config.out.join("sweep.csv").display()
    );
    match outcome.failures.into_iter().next() {
        // A partially failed sweep still produced a usable table; only a
        // sweep with no successful leg is a failure of the run itself.
        Some(first) if outcome.reports.is_empty() => Err(first.error.into()),
        _ => Ok(()),
    }
}

fn cmd_visualize(config: &RunConfig, layer: &str, count: usize) -> Result<(), CliError> {
    echo_config(config, &config.out)?;
    let ckpt = config.out.join(sweep_checkpoint_name(config.horizon_min));
    let network = load_network(&ckpt)?;
    let h = network.config().horizon_min;
    let s = network.config().input_size;

    // Probe with validation samples: the same data the scores come from.
    let index = ingest_directory(&config.archive)?;
    let split = config.split_spec();
    let (_, val_idx) = split.apply(&index, config.site.lon_deg)?;
    let probe_all = assemble_all(&index, &val_idx, h, s, &config.site)?.samples;
    if probe_all.is_empty() {
        return Err(IntrospectionError::EmptyProbe.into());
    }
    let probe = &probe_all[..probe_all.len().min(PROBE_CAP)];

    let grid = activation_maps(&network, &probe[0], layer)?;
    let grid_path = config.out.join(activation_grid_filename(layer));
    grid.save_png(&grid_path)?;

    let health = dead_filter_report(&network, probe, layer, DEFAULT_VARIANCE_EPS)?;
    let health_path = config.out.join("dead_filters.csv");
    health.save_csv(&health_path)?;

    // Freeze the metadata branch at the probe mean so the synthesized images
    // carry all the variation.
    let mut metadata = [0f32; 8];
    for sample in probe {
        for (slot, value) in metadata.iter_mut().zip(sample.metadata) {
            *slot += value;
        }
    }
    for slot in &mut metadata {
        *slot /= probe.len() as f32;
    }

    let options = AscentOptions {
        steps: DEFAULT_ASCENT_STEPS,
        step_size: DEFAULT_ASCENT_STEP_SIZE,
        seed: config.ascent_seed(),
    };
    let mut drawn = 0usize;
    for filter in health.filters.iter().filter(|fh| !fh.dead).take(count) {
        let image = filter_visualization(&network, layer, filter.filter, &metadata, &options)?;
        image.save_png(&config.out.join(filter_image_filename(layer, filter.filter)))?;
        drawn += 1;
    }

    let dead = health.filters.iter().filter(|fh| fh.dead).count();
    println!(
        "visualize: layer {layer}: {} activation maps ({} dead of {}), {} filter images, {} and {}",
        health.filters.len(),
        dead,
        health.filters.len(),
        drawn,
        grid_path.display(),
        health_path.display()
    );
    Ok(())
}

fn cmd_forecast(config: &RunConfig, at: Option<&str>) -> Result<(), CliError> {
    echo_config(config, &config.out)?;
    let ckpt = config.out.join(sweep_checkpoint_name(config.horizon_min));
    let network = load_network(&ckpt)?;
    let h = network.config().horizon_min;
    let s = network.config().input_size;

    let index = ingest_directory(&config.archive)?;
    let sample = match at {
        Some(text) => sample_at(&index, text, h, s, config)?,
        None => newest_sample(&index, h, s, config)?,
    };

    let predicted = predictions_wm2(&network, std::slice::from_ref(&sample))?[0];
    let persistence = smart_persistence_forecast(
        sample.ghi_t_wm2,
        sample.ghi_clear_t_wm2,
        sample.ghi_clear_target_wm2,
    )?;
    println!(
        "forecast: at {} +{} min -> {:.1} W/m² (now {:.1} W/m², persistence {:.1}, clear sky {:.1})",
        sample.timestamp.to_rfc3339(),
        h,
        predicted,
        sample.ghi_t_wm2,
        persistence,
        sample.ghi_clear_target_wm2
    );
    Ok(())
}

/// Assembles the sample anchored at an explicit `--at` timestamp.
fn sample_at(
    index: &SampleIndex,
    text: &str,
    horizon_min: u32,
    image_size: usize,
    config: &RunConfig,
) -> Result<SkySample, CliError> {
    let when = DateTime::parse_from_rfc3339(text)
        .map_err(|e| {
            CliError::Config(ConfigError::Invalid {
                field: "at".into(),
                details: format!("{text:?} is not an RFC 3339 timestamp: {e}"),
            })
        })?
        .with_timezone(&Utc);
    let idx = index.find_within(when, 30).ok_or_else(|| CliError::NoSample {
        details: format!("no archive entry within 30 s of {}", when.to_rfc3339()),
    })?;
    assemble_sample(index, idx, horizon_min, image_size, &config.site)?.ok_or_else(|| {
        CliError::NoSample {
            details: format!(
                "entry near {} cannot anchor a sample (missing neighbor frames or outside the daylight window)",
                when.to_rfc3339()
            ),
        }
    })
}

/// Walks the archive backwards for the newest entry that assembles cleanly.
fn newest_sample(
    index: &SampleIndex,
    horizon_min: u32,
    image_size: usize,
    config: &RunConfig,
) -> Result<SkySample, CliError> {
    for idx in index.complete_indices().into_iter().rev() {
        if let Some(sample) = assemble_sample(index, idx, horizon_min, image_size, &config.site)? {
            return Ok(sample);
        }
    }
    Err(CliError::NoSample {
        details: format!(
            "archive {} has no entry that can anchor a sample",
            config.archive.display()
        ),
    })
}

fn load_network(path: &Path) -> Result<Network, CliError> {
    if !path.is_file() {
        return Err(CliError::CheckpointMissing {
            path: path.to_path_buf(),
        });
    }
    Ok(load_checkpoint(path)?)
}

fn write_history(path: &Path, history: &TrainHistory) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(history).expect("history serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn print_report(report: &EvaluationReport) {
    println!(
        "eval: h={} min, split={}, n={}, rmse_model={:.1} W/m², rmse_persistence={:.1} W/m², skill={:.4}",
        report.horizon_min,
        report.split,
        report.n_samples,
        report.mse_model.sqrt(),
        report.mse_persistence.sqrt(),
        report.forecast_skill
    );
}
