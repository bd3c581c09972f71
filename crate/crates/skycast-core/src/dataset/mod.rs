//! Dataset pipeline: archive ingest, image preprocessing, sample assembly,
//! leakage-free train/validation splits, and a synthetic all-sky generator.
//!
//! The on-disk archive layout is
//!
//! ```text
//! <root>/images/YYYYMMDDTHHMMSSZ_short.png   (8-bit RGB or grayscale)
//! <root>/images/YYYYMMDDTHHMMSSZ_long.png
//! <root>/measurements.csv                    header: timestamp_utc,ghi_wm2,zenith_deg,azimuth_deg
//! ```
//!
//! Timestamps are stored UTC everywhere; local mean solar time (UTC shifted
//! by longitude) is used only for daylight windows and split cutoffs.

mod ingest;
mod preprocess;
mod sample;
mod split;
mod synth;

pub use ingest::{ingest_directory, IndexEntry, SampleIndex};
pub use preprocess::{luminance_resize, preprocess_image};
pub use sample::{assemble_all, assemble_sample, validate_horizon, AssembledSet, SkipStats, SkySample};
pub use split::{split_afternoon_validation, split_distinct_days, SplitKind, SplitSpec};
pub use synth::{
    synth_generate, CloudRegime, SynthConfig, SynthDayRecord, SynthManifest, SynthSummary,
};

use chrono::{DateTime, Duration, NaiveDateTime, Utc};
use std::path::PathBuf;
use thiserror::Error;

/// Daylight window start, minutes after local midnight (08:00).
pub const DAYLIGHT_START_MIN: u32 = 8 * 60;
/// Daylight window end, minutes after local midnight (19:00).
pub const DAYLIGHT_END_MIN: u32 = 19 * 60;
/// Tolerance when matching the t−2 min and t+h legs of a sample.
pub const PAIRING_TOLERANCE_S: i64 = 30;
/// Default local-time cutoff for the afternoon-validation split (13:00).
pub const DEFAULT_AFTERNOON_CUTOFF_MIN: u32 = 13 * 60;
/// Irradiance normalization for network inputs and targets (W/m² per unit).
pub const GHI_SCALE: f64 = 1000.0;
/// Nominal sampling cadence of the archive, minutes.
pub const NOMINAL_CADENCE_MIN: u32 = 2;

/// Errors from ingest, preprocessing, assembly, splits, and generation.
#[derive(Debug, Error)]
pub enum DatasetError {
    /// Filesystem failure, annotated with the path involved.
    #[error("{path}: {source}")]
    Io {
        /// Path being read or written.
        path: PathBuf,
        /// Underlying I/O error.
        #[source]
        source: std::io::Error,
    },
    /// The archive has no measurements.csv.
    #[error("missing measurements file {path}")]
    MissingMeasurements {
        /// Expected CSV location.
        path: PathBuf,
    },
    /// The measurements file header does not match the contract.
    #[error("bad measurements header: expected `timestamp_utc,ghi_wm2,zenith_deg,azimuth_deg`, got `{got}`")]
    CsvHeader {
        /// Header line actually found.
        got: String,
    },
    /// A measurements row failed to parse (line numbers are 1-based and
    /// include the header line).
    #[error("measurements line {line}: {details}")]
    CsvRow {
        /// 1-based line number.
        line: usize,
        /// What was wrong.
        details: String,
    },
    /// An image failed to decode.
    #[error("{path}: {source}")]
    ImageDecode {
        /// Offending file.
        path: PathBuf,
        /// Decoder error.
        #[source]
        source: image::ImageError,
    },
    /// Input image smaller than the target resolution.
    #[error("image {width}x{height} is smaller than the {target}x{target} target")]
    ImageTooSmall {
        /// Source width.
        width: u32,
        /// Source height.
        height: u32,
        /// Requested output size.
        target: usize,
    },
    /// Forecast horizon outside the supported even 2–20 minute range.
    #[error("horizon {horizon} min is not an even integer in [2, 20]")]
    InvalidHorizon {
        /// Offending horizon.
        horizon: u32,
    },
    /// Too few distinct days to split.
    #[error("distinct-day split needs at least 2 days, archive has {days}")]
    NotEnoughDays {
        /// Days present.
        days: usize,
    },
    /// Split ratio outside (0, 1).
    #[error("train ratio {ratio} is outside (0, 1)")]
    InvalidRatio {
        /// Offending ratio.
        ratio: f64,
    },
    /// Afternoon cutoff outside the daylight window.
    #[error("cutoff {cutoff_min} min after midnight is outside the 08:00-19:00 daylight window")]
    CutoffOutsideWindow {
        /// Offending cutoff, minutes after local midnight.
        cutoff_min: u32,
    },
    /// A split produced an empty side.
    #[error("split produced an empty {side} set")]
    EmptySplit {
        /// Which side ended up empty.
        side: &'static str,
    },
    /// Invalid generator or assembly configuration.
    #[error("invalid configuration: {details}")]
    InvalidConfig {
        /// What was wrong.
        details: String,
    },
    /// Tensor construction failed (shape arithmetic bug upstream).
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

/// Local mean solar time: UTC shifted by 4 minutes per degree of longitude
/// (rounded to whole seconds). Used for daylight windows and split cutoffs.
pub fn local_mean_solar(timestamp_utc: DateTime<Utc>, lon_deg: f64) -> NaiveDateTime {
    let offset_s = (lon_deg * 240.0).round() as i64;
    (timestamp_utc + Duration::seconds(offset_s)).naive_utc()
}

/// Minutes after local midnight of the local mean solar time.
pub fn local_minutes_of_day(timestamp_utc: DateTime<Utc>, lon_deg: f64) -> u32 {
    use chrono::Timelike;
    let local = local_mean_solar(timestamp_utc, lon_deg);
    local.time().num_seconds_from_midnight() / 60
}
