//! Scoring against the smart-persistence reference: per-split MSE reports,
//! the forecast-skill score, and the multi-horizon sweep (one independently
//! trained model per lead time, with a CSV and a skill-vs-horizon plot).

use crate::clearsky::{smart_persistence_forecast, ClearSkyError, ClearSkyParams};
use crate::dataset::{assemble_all, DatasetError, SampleIndex, SkySample, SplitKind, SplitSpec, GHI_SCALE};
use crate::model::{build_network, ModelError, Network, NetworkConfig};
use crate::plot::{save_line_plot, PlotError};
use crate::seed::derive_seed;
use crate::training::{save_checkpoint, train_model, TrainConfig, TrainHistory, TrainingError};
use serde::Serialize;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Batch size used when running a network over an evaluation set.
pub const EVAL_BATCH: usize = 32;

/// Evaluation failure.
#[derive(Debug, Error)]
pub enum EvaluationError {
    /// Skill is undefined when the reference MSE is not strictly positive.
    #[error("forecast skill undefined: persistence MSE {mse_persistence} is not > 0")]
    UndefinedSkill {
        /// The offending reference MSE.
        mse_persistence: f64,
    },
    /// No samples to score.
    #[error("evaluation set is empty")]
    EmptySet,
    /// Forward-pass failure.
    #[error(transparent)]
    Model(ModelError),
    /// Clear-sky / persistence failure.
    #[error(transparent)]
    ClearSky(ClearSkyError),
    /// Dataset assembly or split failure.
    #[error(transparent)]
    Dataset(DatasetError),
    /// Training failure inside a sweep leg.
    #[error(transparent)]
    Training(TrainingError),
    /// Plot emission failure.
    #[error(transparent)]
    Plot(PlotError),
    /// Filesystem failure.
    #[error("{path}: {source}")]
    Io {
        /// Path being written.
        path: PathBuf,
        /// Underlying error.
        #[source]
        source: std::io::Error,
    },
}

impl From<ModelError> for EvaluationError {
    fn from(e: ModelError) -> Self {
        EvaluationError::Model(e)
    }
}
impl From<ClearSkyError> for EvaluationError {
    fn from(e: ClearSkyError) -> Self {
        EvaluationError::ClearSky(e)
    }
}
impl From<DatasetError> for EvaluationError {
    fn from(e: DatasetError) -> Self {
        EvaluationError::Dataset(e)
    }
}
impl From<TrainingError> for EvaluationError {
    fn from(e: TrainingError) -> Self {
        EvaluationError::Training(e)
    }
}
impl From<PlotError> for EvaluationError {
    fn from(e: PlotError) -> Self {
        EvaluationError::Plot(e)
    }
}

/// Scores for one (model, split, horizon) combination.
///
/// MSEs are over de-normalized irradiance errors, so their unit is W²/m⁴.
/// `forecast_skill` is exactly `1 − mse_model / mse_persistence`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    /// Forecast lead time, minutes.
    pub horizon_min: u32,
    /// Split protocol label (e.g. "distinct-days", "afternoon").
    pub split: String,
    /// Number of scored samples.
    pub n_samples: usize,
    /// Mean squared error of the network, W²/m⁴.
    pub mse_model: f64,
    /// Mean squared error of smart persistence on the same samples, W²/m⁴.
    pub mse_persistence: f64,
    /// `1 − mse_model / mse_persistence`; negative when the model loses.
    pub forecast_skill: f64,
    /// Seed the run was launched with (provenance, not re-derived).
    pub seed: u64,
}

/// Forecast skill: `1 − mse_model / mse_persistence`.
///
/// Positive values mean the model beats the reference; the score is
/// unbounded below. Undefined (an error) unless `mse_persistence > 0`,
/// which also rejects NaN.
pub fn forecast_skill(mse_model: f64, mse_persistence: f64) -> Result<f64, EvaluationError> {
    if !(mse_persistence > 0.0) {
        return Err(EvaluationError::UndefinedSkill { mse_persistence });
    }
    Ok(1.0 - mse_model / mse_persistence)
}

/// Runs `network` over `samples` in fixed-size batches and returns the
/// de-normalized predictions in W/m², one per sample, in order.
pub fn predictions_wm2(
    network: &Network,
    samples: &[SkySample],
) -> Result<Vec<f64>, EvaluationError> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let pass = network.forward_batch(chunk)?;
        let data = pass.data();
        debug_assert_eq!(data.len(), chunk.len());
        out.extend(data.iter().map(|&p| p as f64 * GHI_SCALE));
    }
    Ok(out)
}

/// Scores externally supplied predictions (W/m², one per sample, in
/// order) against smart persistence on the same samples.
///
/// Both MSEs run over the identical sample list, so the comparison is
/// paired: anything excluded upstream is excluded from both sides.
pub fn score_predictions(
    samples: &[SkySample],
    predictions_wm2: &[f64],
    split: &str,
    seed: u64,
) -> Result<EvaluationReport, EvaluationError> {
    if samples.is_empty() {
        return Err(EvaluationError::EmptySet);
    }
    assert_eq!(
        samples.len(),
        predictions_wm2.len(),
        "one prediction per sample"
    );
    let mut sq_model = 0.0f64;
    let mut sq_persistence = 0.0f64;
    for (sample, &pred) in samples.iter().zip(predictions_wm2) {
        let truth = sample.ghi_target_wm2;
        let reference = smart_persistence_forecast(
            sample.ghi_t_wm2,
            sample.ghi_clear_t_wm2,
            sample.ghi_clear_target_wm2,
        )?;
        sq_model += (pred - truth).powi(2);
        sq_persistence += (reference - truth).powi(2);
    }
    let n = samples.len();
    let mse_model = sq_model / n as f64;
    let mse_persistence = sq_persistence / n as f64;
    let skill = forecast_skill(mse_model, mse_persistence)?;
    Ok(EvaluationReport {
        horizon_min: samples[0].horizon_min,
        split: split.to_string(),
        n_samples: n,
        mse_model,
        mse_persistence,
        forecast_skill: skill,
        seed,
    })
}

/// Scores a trained network against smart persistence on `samples`.
///
/// Equivalent to [`predictions_wm2`] followed by [`score_predictions`];
/// `split` and `seed` are recorded verbatim as provenance.
pub fn evaluate_model(
    network: &Network,
    samples: &[SkySample],
    split: &str,
    seed: u64,
) -> Result<EvaluationReport, EvaluationError> {
    if samples.is_empty() {
        return Err(EvaluationError::EmptySet);
    }
    let preds = predictions_wm2(network, samples)?;
    score_predictions(samples, &preds, split, seed)
}

/// Canonical short label for a split protocol, matching the CLI flag values.
pub fn split_label(spec: &SplitSpec) -> &'static str {
    match spec.kind {
        SplitKind::DistinctDays { .. } => "distinct-days",
        SplitKind::AfternoonValidation { .. } => "afternoon",
    }
}

/// The report CSV header. Rows are written with six decimal places so a
/// rerun with identical seeds reproduces the file byte for byte.
pub const REPORT_CSV_HEADER: &str = "horizon_min,split,n,mse_model,mse_persistence,skill,seed";

/// Writes evaluation reports as CSV (header + one row per report).
pub fn write_reports_csv(reports: &[EvaluationReport], path: &Path) -> Result<(), EvaluationError> {
    let mut buf = String::new();
    buf.push_str(REPORT_CSV_HEADER);
    buf.push('\n');
    for r in reports {
        buf.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{}\n",
            r.horizon_min, r.split, r.n_samples, r.mse_model, r.mse_persistence, r.forecast_skill, r.seed
        ));
    }
    std::fs::write(path, buf).map_err(|source| EvaluationError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Everything a sweep needs besides the archive index and the horizons.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    /// Side length the archive frames are resized to.
    pub image_size: usize,
    /// Site geometry and clear-sky model.
    pub site: ClearSkyParams,
    /// Split protocol, applied once — the day partition does not depend on
    /// the horizon.
    pub split: SplitSpec,
    /// Optimization settings; its shuffle seed is replaced per horizon by a
    /// seed derived from `seed`.
    pub train: TrainConfig,
    /// Global run seed; per-horizon init/shuffle seeds derive from it.
    pub seed: u64,
    /// Fixed filter count, or `None` for the horizon policy (16 below
    /// 5 minutes, 32 otherwise).
    pub filters: Option<usize>,
}

/// One sweep leg that did not produce a report.
#[derive(Debug)]
pub struct SweepFailure {
    /// The horizon whose leg failed.
    pub horizon_min: u32,
    /// What went wrong.
    pub error: EvaluationError,
}

/// Outcome of a horizon sweep: the successful reports (ascending horizon),
/// training curves, and any per-leg failures.
#[derive(Debug)]
pub struct SweepOutcome {
    /// One report per horizon that trained and evaluated successfully.
    pub reports: Vec<EvaluationReport>,
    /// Training history per successful horizon.
    pub histories: Vec<(u32, TrainHistory)>,
    /// Legs that failed, with their errors; the sweep continues past them.
    pub failures: Vec<SweepFailure>,
}

/// File name of the checkpoint a sweep writes for one horizon.
pub fn sweep_checkpoint_name(horizon_min: u32) -> String {
    format!("model_h{horizon_min:02}.ckpt")
}

/// Trains and scores one independently initialized model per horizon.
///
/// The split is applied once to the archive index (day partitioning is
/// horizon-independent); each leg assembles its own samples, builds a fresh
/// network with seeds derived from `cfg.seed` and the horizon label, trains
/// it, scores it on the validation side, and writes a checkpoint to
/// `out_dir`. A failing leg is recorded and the sweep moves on. Afterwards
/// `sweep.csv` and (given at least one report) `sweep_skill.png` are
/// written to `out_dir`.
pub fn horizon_sweep(
    index: &SampleIndex,
    horizons: &[u32],
    cfg: &SweepConfig,
    out_dir: &Path,
) -> Result<SweepOutcome, EvaluationError> {
    let (train_idx, val_idx) = cfg.split.apply(index, cfg.site.lon_deg)?;
    let label = split_label(&cfg.split);
    let mut outcome = SweepOutcome {
        reports: Vec::new(),
        histories: Vec::new(),
        failures: Vec::new(),
    };
    for &h in horizons {
        match sweep_leg(index, h, &train_idx, &val_idx, label, cfg, out_dir) {
            Ok((report, history)) => {
                outcome.reports.push(report);
                outcome.histories.push((h, history));
            }
            Err(error) => outcome.failures.push(SweepFailure {
                horizon_min: h,
                error,
            }),
        }
    }
    write_reports_csv(&outcome.reports, &out_dir.join("sweep.csv"))?;
    if !outcome.reports.is_empty() {
        let points: Vec<(f64, f64)> = outcome
            .reports
            .iter()
            .map(|r| (r.horizon_min as f64, r.forecast_skill))
            .collect();
        save_line_plot(&out_dir.join("sweep_skill.png"), &points, 640, 440, true)?;
    }
    Ok(outcome)
}

fn sweep_leg(
    index: &SampleIndex,
    horizon_min: u32,
    train_idx: &[usize],
    val_idx: &[usize],
    label: &str,
    cfg: &SweepConfig,
    out_dir: &Path,
) -> Result<(EvaluationReport, TrainHistory), EvaluationError> {
    let train_set = assemble_all(index, train_idx, horizon_min, cfg.image_size, &cfg.site)?;
    let val_set = assemble_all(index, val_idx, horizon_min, cfg.image_size, &cfg.site)?;
    if train_set.samples.is_empty() || val_set.samples.is_empty() {
        return Err(EvaluationError::EmptySet);
    }

    let init_seed = derive_seed(cfg.seed, &format!("sweep.h{horizon_min}.init"));
    let mut net_config = NetworkConfig::for_horizon(horizon_min, cfg.image_size, init_seed);
    if let Some(f) = cfg.filters {
        net_config.filters_per_conv = f;
    }
    let mut network = build_network(&net_config)?;

    let mut train_config = cfg.train.clone();
    train_config.shuffle_seed = derive_seed(cfg.seed, &format!("sweep.h{horizon_min}.shuffle"));
    let history = train_model(
        &mut network,
        &train_set.samples,
        &val_set.samples,
        &train_config,
    )?;

    let report = evaluate_model(&network, &val_set.samples, label, cfg.seed)?;
    save_checkpoint(&network, &out_dir.join(sweep_checkpoint_name(horizon_min)))
        .map_err(EvaluationError::Training)?;
    Ok((report, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skill_formula_matches_hand_arithmetic() {
        assert_eq!(forecast_skill(6000.0, 10000.0).unwrap(), 0.4);
        assert_eq!(forecast_skill(375.0, 375.0).unwrap(), 0.0);
        assert_eq!(forecast_skill(0.0, 123.4).unwrap(), 1.0);
        // Worse than the reference: negative, unbounded.
        assert!(forecast_skill(200.0, 100.0).unwrap() < 0.0);
    }

    #[test]
    fn zero_or_invalid_reference_mse_is_rejected() {
        for bad in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                forecast_skill(10.0, bad),
                Err(EvaluationError::UndefinedSkill { .. })
            ));
        }
    }

    #[test]
    fn skill_is_strictly_decreasing_in_model_mse() {
        let reference = 500.0;
        let mut last = f64::INFINITY;
        for mse in [0.0, 1.0, 10.0, 100.0, 499.0, 500.0, 5000.0] {
            let s = forecast_skill(mse, reference).unwrap();
            assert!(s < last);
            last = s;
        }
    }
}
