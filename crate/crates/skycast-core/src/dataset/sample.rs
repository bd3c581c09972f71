//! Assembly of network-ready samples from the archive index: four-frame
//! image stacks, the 8-entry metadata vector, and the horizon target.

use super::ingest::SampleIndex;
use super::preprocess::preprocess_image;
use super::{
    local_minutes_of_day, DatasetError, DAYLIGHT_END_MIN, DAYLIGHT_START_MIN, GHI_SCALE,
    NOMINAL_CADENCE_MIN, PAIRING_TOLERANCE_S,
};
use crate::clearsky::{clearsky_ghi_at, ClearSkyParams, CLEARSKY_FLOOR_WM2};
use crate::tensor::Tensor;
use chrono::{DateTime, Duration, NaiveDate, Utc};
use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

/// One assembled training/validation sample.
#[derive(Debug, Clone)]
pub struct SkySample {
    /// `[4, S, S]` image stack in `[0, 1]`, ordered
    /// (short_t, long_t, short_{t−2}, long_{t−2}).
    pub image_stack: Tensor,
    /// `[GHI(t), GHI(t−2), θz, φ, cos θz, sin θz, cos φ, sin φ]` with GHI
    /// scaled by 1/1000 and angles in radians.
    pub metadata: [f32; 8],
    /// GHI(t+h) / 1000.
    pub target: f32,
    /// Forecast horizon, minutes (even, in [2, 20]).
    pub horizon_min: u32,
    /// Timestamp of the sample's reference time t (UTC).
    pub timestamp: DateTime<Utc>,
    /// Calendar day (UTC) the sample belongs to; the leakage unit.
    pub day_id: NaiveDate,
    /// Unnormalized GHI at t, W/m² (for persistence baselines).
    pub ghi_t_wm2: f64,
    /// Unnormalized target GHI at t+h, W/m².
    pub ghi_target_wm2: f64,
    /// Clear-sky GHI at t, W/m².
    pub ghi_clear_t_wm2: f64,
    /// Clear-sky GHI at t+h, W/m².
    pub ghi_clear_target_wm2: f64,
}

/// Why samples were dropped during bulk assembly.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SkipStats {
    /// Entry at t incomplete.
    pub incomplete: usize,
    /// t−2 min or t+h leg missing/incomplete beyond tolerance.
    pub missing_leg: usize,
    /// Reference time outside the 08:00–19:00 local window.
    pub outside_daylight: usize,
    /// Clear-sky irradiance below the 10 W/m² floor at t or t+h.
    pub below_floor: usize,
}

impl SkipStats {
    /// Total number of skipped candidates.
    pub fn total(&self) -> usize {
        self.incomplete + self.missing_leg + self.outside_daylight + self.below_floor
    }
}

/// Output of bulk assembly.
#[derive(Debug, Clone)]
pub struct AssembledSet {
    /// Usable samples in timestamp order.
    pub samples: Vec<SkySample>,
    /// Drop accounting for the remaining candidates.
    pub skipped: SkipStats,
}

/// Validates the supported horizon grid: even minutes in [2, 20].
pub fn validate_horizon(horizon_min: u32) -> Result<(), DatasetError> {
    if (2..=20).contains(&horizon_min) && horizon_min % 2 == 0 {
        Ok(())
    } else {
        Err(DatasetError::InvalidHorizon {
            horizon: horizon_min,
        })
    }
}

/// Assembles the sample anchored at index entry `idx`, or `None` when a
/// precondition fails (missing leg, outside the daylight window, below the
/// clear-sky floor). I/O or decode failures are real errors.
pub fn assemble_sample(
    index: &SampleIndex,
    idx: usize,
    horizon_min: u32,
    image_size: usize,
    params: &ClearSkyParams,
) -> Result<Option<SkySample>, DatasetError> {
    let mut cache = ImageCache::default();
    assemble_with_cache(index, idx, horizon_min, image_size, params, &mut cache)
        .map(|outcome| outcome.ok().map(|sample| *sample))
}

enum SkipReason {
    Incomplete,
    MissingLeg,
    OutsideDaylight,
    BelowFloor,
}

type Outcome = Result<Box<SkySample>, SkipReason>;

impl SkipStats {
    fn record(&mut self, reason: &SkipReason) {
        match reason {
            SkipReason::Incomplete => self.incomplete += 1,
            SkipReason::MissingLeg => self.missing_leg += 1,
            SkipReason::OutsideDaylight => self.outside_daylight += 1,
            SkipReason::BelowFloor => self.below_floor += 1,
        }
    }
}

#[derive(Default)]
struct ImageCache {
    frames: HashMap<PathBuf, Arc<Vec<f32>>>,
}

impl ImageCache {
    fn load(&mut self, path: &PathBuf, size: usize) -> Result<Arc<Vec<f32>>, DatasetError> {
        if let Some(hit) = self.frames.get(path) {
            return Ok(Arc::clone(hit));
        }
        let tensor = preprocess_image(path, size)?;
        let frame = Arc::new(tensor.data().to_vec());
        self.frames.insert(path.clone(), Arc::clone(&frame));
        Ok(frame)
    }
}

fn assemble_with_cache(
    index: &SampleIndex,
    idx: usize,
    horizon_min: u32,
    image_size: usize,
    params: &ClearSkyParams,
    cache: &mut ImageCache,
) -> Result<Outcome, DatasetError> {
    validate_horizon(horizon_min)?;
    let entries = index.entries();
    let entry = &entries[idx];
    if !entry.complete {
        return Ok(Err(SkipReason::Incomplete));
    }

    // Daylight window applies to the reference time t in local solar time.
    let tod_min = local_minutes_of_day(entry.timestamp, params.lon_deg);
    if !(DAYLIGHT_START_MIN..=DAYLIGHT_END_MIN).contains(&tod_min) {
        return Ok(Err(SkipReason::OutsideDaylight));
    }

    let t_prev = entry.timestamp - Duration::minutes(i64::from(NOMINAL_CADENCE_MIN));
    let t_future = entry.timestamp + Duration::minutes(i64::from(horizon_min));
    let Some(prev_idx) = index.find_within(t_prev, PAIRING_TOLERANCE_S) else {
        return Ok(Err(SkipReason::MissingLeg));
    };
    let Some(future_idx) = index.find_within(t_future, PAIRING_TOLERANCE_S) else {
        return Ok(Err(SkipReason::MissingLeg));
    };
    let prev = &entries[prev_idx];
    let future = &entries[future_idx];

    // Clear-sky floor at both the reference and the target time: below it
    // the clear-sky index (and hence the persistence baseline) is unstable.
    let (_, clear_t) = clearsky_ghi_at(entry.timestamp, params);
    let (_, clear_future) = clearsky_ghi_at(future.timestamp, params);
    if clear_t < CLEARSKY_FLOOR_WM2 || clear_future < CLEARSKY_FLOOR_WM2 {
        return Ok(Err(SkipReason::BelowFloor));
    }

    let paths = [
        entry.short_path.as_ref(),
        entry.long_path.as_ref(),
        prev.short_path.as_ref(),
        prev.long_path.as_ref(),
    ];
    let mut stack = Vec::with_capacity(4 * image_size * image_size);
    for path in paths {
        let path = path.expect("complete entries carry both exposures");
        let frame = cache.load(path, image_size)?;
        stack.extend_from_slice(&frame);
    }
    let image_stack = Tensor::from_vec(vec![4, image_size, image_size], stack)?;

    let zen_rad = entry.zenith_deg.to_radians();
    let az_rad = entry.azimuth_deg.to_radians();
    let metadata = [
        (entry.ghi_wm2 / GHI_SCALE) as f32,
        (prev.ghi_wm2 / GHI_SCALE) as f32,
        zen_rad as f32,
        az_rad as f32,
        zen_rad.cos() as f32,
        zen_rad.sin() as f32,
        az_rad.cos() as f32,
        az_rad.sin() as f32,
    ];

    Ok(Ok(Box::new(SkySample {
        image_stack,
        metadata,
        target: (future.ghi_wm2 / GHI_SCALE) as f32,
        horizon_min,
        timestamp: entry.timestamp,
        day_id: entry.day_id,
        ghi_t_wm2: entry.ghi_wm2,
        ghi_target_wm2: future.ghi_wm2,
        ghi_clear_t_wm2: clear_t,
        ghi_clear_target_wm2: clear_future,
    })))
}

/// Assembles every usable sample anchored at the given entry indices
/// (pass `index.complete_indices()` for the whole archive). Decoded frames
/// are cached so each archive image is read once.
pub fn assemble_all(
    index: &SampleIndex,
    anchor_indices: &[usize],
    horizon_min: u32,
    image_size: usize,
    params: &ClearSkyParams,
) -> Result<AssembledSet, DatasetError> {
    validate_horizon(horizon_min)?;
    let mut cache = ImageCache::default();
    let mut samples = Vec::new();
    let mut skipped = SkipStats::default();
    for &idx in anchor_indices {
        match assemble_with_cache(index, idx, horizon_min, image_size, params, &mut cache)? {
            Ok(sample) => samples.push(*sample),
            Err(reason) => skipped.record(&reason),
        }
    }
    samples.sort_by_key(|s| s.timestamp);
    Ok(AssembledSet { samples, skipped })
}
