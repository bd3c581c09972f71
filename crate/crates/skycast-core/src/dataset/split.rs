//! Train/validation split protocols: day-disjoint random partition and the
//! afternoon-validation protocol (train mornings, validate afternoons).

use super::ingest::SampleIndex;
use super::{
    local_minutes_of_day, DatasetError, DAYLIGHT_END_MIN, DAYLIGHT_START_MIN,
    DEFAULT_AFTERNOON_CUTOFF_MIN,
};
use crate::seed::{rng_for, shuffle};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

fn default_train_ratio() -> f64 {
    0.8
}

fn default_cutoff_local() -> u32 {
    DEFAULT_AFTERNOON_CUTOFF_MIN
}

/// Which split protocol to run, with its protocol-specific parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitKind {
    /// Random day-level partition: no day contributes to both sides.
    DistinctDays {
        /// Fraction of samples targeted for the training side, in (0, 1).
        #[serde(default = "default_train_ratio")]
        train_ratio: f64,
    },
    /// Validation = samples at/after the cutoff (local solar time),
    /// training = samples before it.
    AfternoonValidation {
        /// Cutoff as local "HH:MM".
        #[serde(
            default = "default_cutoff_local",
            serialize_with = "hhmm::serialize",
            deserialize_with = "hhmm::deserialize"
        )]
        cutoff_local: u32,
    },
}

impl Default for SplitKind {
    fn default() -> Self {
        SplitKind::DistinctDays {
            train_ratio: default_train_ratio(),
        }
    }
}

/// Full split specification: protocol plus the seed driving any randomness.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Protocol and its parameter.
    #[serde(flatten)]
    pub kind: SplitKind,
    /// Seed for the random day allocation (unused by afternoon splits).
    #[serde(default)]
    pub seed: u64,
}

impl SplitSpec {
    /// Runs the configured protocol over the complete entries of `index`.
    /// Returns (train entry indices, validation entry indices), each
    /// ascending.
    pub fn apply(
        &self,
        index: &SampleIndex,
        lon_deg: f64,
    ) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
        match self.kind {
            SplitKind::DistinctDays { train_ratio } => {
                split_distinct_days(index, train_ratio, self.seed)
            }
            SplitKind::AfternoonValidation { cutoff_local } => {
                split_afternoon_validation(index, cutoff_local, lon_deg)
            }
        }
    }
}

/// Serde helpers for "HH:MM" local times stored as minutes after midnight.
mod hhmm {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(minutes: &u32, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&format!("{:02}:{:02}", minutes / 60, minutes % 60))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<u32, D::Error> {
        let raw = String::deserialize(de)?;
        let (h, m) = raw
            .split_once(':')
            .ok_or_else(|| D::Error::custom(format!("expected HH:MM, got `{raw}`")))?;
        let h: u32 = h
            .parse()
            .map_err(|e| D::Error::custom(format!("bad hour in `{raw}`: {e}")))?;
        let m: u32 = m
            .parse()
            .map_err(|e| D::Error::custom(format!("bad minute in `{raw}`: {e}")))?;
        if h > 23 || m > 59 {
            return Err(D::Error::custom(format!("`{raw}` is not a time of day")));
        }
        Ok(h * 60 + m)
    }
}

/// Randomly partitions complete entries by calendar day.
///
/// Days are shuffled deterministically from `seed`; whole days are assigned
/// to validation until it holds at least `(1 − train_ratio)` of the
/// samples, so the achieved ratio deviates from the target by at most the
/// largest single day. No day ever contributes to both sides.
pub fn split_distinct_days(
    index: &SampleIndex,
    train_ratio: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    if !(train_ratio.is_finite() && 0.0 < train_ratio && train_ratio < 1.0) {
        return Err(DatasetError::InvalidRatio { ratio: train_ratio });
    }
    let mut by_day: BTreeMap<NaiveDate, Vec<usize>> = BTreeMap::new();
    for (i, e) in index.entries().iter().enumerate() {
        if e.complete {
            by_day.entry(e.day_id).or_default().push(i);
        }
    }
    if by_day.len() < 2 {
        return Err(DatasetError::NotEnoughDays { days: by_day.len() });
    }
    let total: usize = by_day.values().map(Vec::len).sum();
    let target_val = (1.0 - train_ratio) * total as f64;

    let mut days: Vec<NaiveDate> = by_day.keys().copied().collect();
    let mut rng = rng_for(seed, "split.distinct_days");
    shuffle(&mut rng, &mut days);

    let mut val_days = Vec::new();
    let mut val_count = 0usize;
    for (taken, day) in days.iter().enumerate() {
        let remaining_train_days = days.len() - taken - 1;
        let need_more = (val_count as f64) < target_val || val_days.is_empty();
        if need_more && remaining_train_days >= 1 {
            val_count += by_day[day].len();
            val_days.push(*day);
        } else {
            break;
        }
    }

    let val_set: std::collections::BTreeSet<NaiveDate> = val_days.into_iter().collect();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (day, indices) in &by_day {
        if val_set.contains(day) {
            val.extend_from_slice(indices);
        } else {
            train.extend_from_slice(indices);
        }
    }
    train.sort_unstable();
    val.sort_unstable();
    if train.is_empty() {
        return Err(DatasetError::EmptySplit { side: "train" });
    }
    if val.is_empty() {
        return Err(DatasetError::EmptySplit { side: "validation" });
    }
    Ok((train, val))
}

/// Splits complete entries at a local-time cutoff: validation at/after,
/// training before. The cutoff must lie inside the 08:00–19:00 daylight
/// window; a cutoff leaving either side empty is an error.
pub fn split_afternoon_validation(
    index: &SampleIndex,
    cutoff_local_min: u32,
    lon_deg: f64,
) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    if !(DAYLIGHT_START_MIN..=DAYLIGHT_END_MIN).contains(&cutoff_local_min) {
        return Err(DatasetError::CutoffOutsideWindow {
            cutoff_min: cutoff_local_min,
        });
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, e) in index.entries().iter().enumerate() {
        if !e.complete {
            continue;
        }
        if local_minutes_of_day(e.timestamp, lon_deg) >= cutoff_local_min {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    if train.is_empty() {
        return Err(DatasetError::EmptySplit { side: "train" });
    }
    if val.is_empty() {
        return Err(DatasetError::EmptySplit { side: "validation" });
    }
    Ok((train, val))
}
