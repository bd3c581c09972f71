//! Archive ingest: scan the images directory, parse measurements.csv, and
//! merge both into a timestamp-ordered sample index.

use super::DatasetError;
use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// One indexed timestamp: image paths, measurement row, completeness.
#[derive(Debug, Clone)]
pub struct IndexEntry {
    /// Sample timestamp (UTC).
    pub timestamp: DateTime<Utc>,
    /// Path to the short-exposure frame, when present.
    pub short_path: Option<PathBuf>,
    /// Path to the long-exposure frame, when present.
    pub long_path: Option<PathBuf>,
    /// Measured global horizontal irradiance, W/m² (NaN when the
    /// measurement row is missing).
    pub ghi_wm2: f64,
    /// Solar zenith angle from the measurement row, degrees.
    pub zenith_deg: f64,
    /// Solar azimuth angle from the measurement row, degrees from north.
    pub azimuth_deg: f64,
    /// UTC calendar day the entry belongs to (the split unit).
    pub day_id: NaiveDate,
    /// True when both exposures and a finite measurement are present.
    pub complete: bool,
}

/// Timestamp-ordered archive index.
///
/// Timestamps are strictly increasing; entries missing an exposure or a
/// measurement row are kept but flagged incomplete and never sampled.
#[derive(Debug, Clone, Default)]
pub struct SampleIndex {
    entries: Vec<IndexEntry>,
}

impl SampleIndex {
    /// All entries in timestamp order.
    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    /// Number of indexed timestamps.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// True when nothing was indexed.
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Indices of entries eligible for sampling.
    pub fn complete_indices(&self) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.complete)
            .map(|(i, _)| i)
            .collect()
    }

    /// Index of the complete entry nearest `target`, if any lies within
    /// `tolerance_s` seconds.
    pub fn find_within(&self, target: DateTime<Utc>, tolerance_s: i64) -> Option<usize> {
        let pos = self.entries.partition_point(|e| e.timestamp < target);
        let mut best: Option<(i64, usize)> = None;
        let note = |idx: usize, best: &mut Option<(i64, usize)>| -> bool {
            let e = &self.entries[idx];
            let dist = (e.timestamp - target).num_seconds().abs();
            if dist > tolerance_s {
                return false;
            }
            if e.complete && best.map_or(true, |(d, _)| dist < d) {
                *best = Some((dist, idx));
            }
            true
        };
        // Walk outward from the insertion point while entries stay within
        // tolerance (incomplete entries do not terminate the walk).
        let mut i = pos;
        while i < self.entries.len() && note(i, &mut best) {
            i += 1;
        }
        let mut j = pos;
        while j > 0 && note(j - 1, &mut best) {
            j -= 1;
        }
        best.map(|(_, idx)| idx)
    }

    /// Sorted list of distinct day-ids among complete entries.
    pub fn complete_days(&self) -> Vec<NaiveDate> {
        let mut days: Vec<NaiveDate> = self
            .entries
            .iter()
            .filter(|e| e.complete)
            .map(|e| e.day_id)
            .collect();
        days.sort_unstable();
        days.dedup();
        days
    }

    /// Builds an index directly from entries (must be strictly increasing).
    /// Used by tests and the generator's self-check.
    pub fn from_entries(mut entries: Vec<IndexEntry>) -> Self {
        entries.sort_by_key(|e| e.timestamp);
        SampleIndex { entries }
    }
}

/// Parsed measurements row.
struct Row {
    ghi_wm2: f64,
    zenith_deg: f64,
    azimuth_deg: f64,
}

/// Scans `<root>/images` and `<root>/measurements.csv` into a
/// [`SampleIndex`].
///
/// Image files must be named `YYYYMMDDTHHMMSSZ_short.png` or `..._long.png`
/// (UTC); files not matching the pattern are ignored. The CSV must carry
/// the exact header `timestamp_utc,ghi_wm2,zenith_deg,azimuth_deg`; a
/// malformed row fails ingest with its 1-based line number. Entries missing
/// either exposure or a finite measurement are flagged incomplete.
pub fn ingest_directory(root: &Path) -> Result<SampleIndex, DatasetError> {
    let images_dir = root.join("images");
    let csv_path = root.join("measurements.csv");

    let mut short_paths: BTreeMap<DateTime<Utc>, PathBuf> = BTreeMap::new();
    let mut long_paths: BTreeMap<DateTime<Utc>, PathBuf> = BTreeMap::new();

    if images_dir.is_dir() {
        let reader = std::fs::read_dir(&images_dir).map_err(|source| DatasetError::Io {
            path: images_dir.clone(),
            source,
        })?;
        for entry in reader {
            let entry = entry.map_err(|source| DatasetError::Io {
                path: images_dir.clone(),
                source,
            })?;
            let path = entry.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            if let Some((ts, exposure)) = parse_image_name(name) {
                match exposure {
                    Exposure::Short => short_paths.insert(ts, path),
                    Exposure::Long => long_paths.insert(ts, path),
                };
            }
        }
    }

    if !csv_path.is_file() {
        return Err(DatasetError::MissingMeasurements { path: csv_path });
    }
    let text = std::fs::read_to_string(&csv_path).map_err(|source| DatasetError::Io {
        path: csv_path.clone(),
        source,
    })?;
    let mut rows: BTreeMap<DateTime<Utc>, Row> = BTreeMap::new();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "timestamp_utc,ghi_wm2,zenith_deg,azimuth_deg" => {}
        Some((_, header)) => {
            return Err(DatasetError::CsvHeader {
                got: header.trim().to_string(),
            })
        }
        None => {
            return Err(DatasetError::CsvHeader {
                got: String::new(),
            })
        }
    }
    for (line_idx, line) in lines {
        let line_no = line_idx + 1; // 1-based, header counted
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 4 {
            return Err(DatasetError::CsvRow {
                line: line_no,
                details: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let ts: DateTime<Utc> = fields[0].parse().map_err(|e| DatasetError::CsvRow {
            line: line_no,
            details: format!("bad timestamp `{}`: {e}", fields[0]),
        })?;
        let parse_num = |name: &str, raw: &str| -> Result<f64, DatasetError> {
            raw.parse::<f64>().map_err(|e| DatasetError::CsvRow {
                line: line_no,
                details: format!("bad {name} `{raw}`: {e}"),
            })
        };
        let row = Row {
            ghi_wm2: parse_num("ghi_wm2", fields[1])?,
            zenith_deg: parse_num("zenith_deg", fields[2])?,
            azimuth_deg: parse_num("azimuth_deg", fields[3])?,
        };
        if rows.insert(ts, row).is_some() {
            return Err(DatasetError::CsvRow {
                line: line_no,
                details: format!("duplicate timestamp `{}`", fields[0]),
            });
        }
    }

    // Merge the union of timestamps seen in images and measurements.
    let mut stamps: Vec<DateTime<Utc>> = short_paths
        .keys()
        .chain(long_paths.keys())
        .chain(rows.keys())
        .copied()
        .collect();
    stamps.sort_unstable();
    stamps.dedup();

    let entries = stamps
        .into_iter()
        .map(|ts| {
            let short_path = short_paths.get(&ts).cloned();
            let long_path = long_paths.get(&ts).cloned();
            let row = rows.get(&ts);
            let ghi_wm2 = row.map_or(f64::NAN, |r| r.ghi_wm2);
            let complete = short_path.is_some()
                && long_path.is_some()
                && row.is_some()
                && ghi_wm2.is_finite();
            IndexEntry {
                timestamp: ts,
                short_path,
                long_path,
                ghi_wm2,
                zenith_deg: row.map_or(f64::NAN, |r| r.zenith_deg),
                azimuth_deg: row.map_or(f64::NAN, |r| r.azimuth_deg),
                day_id: ts.date_naive(),
                complete,
            }
        })
        .collect();

    Ok(SampleIndex { entries })
}

enum Exposure {
    Short,
    Long,
}

/// Parses `YYYYMMDDTHHMMSSZ_short.png` / `..._long.png` names.
fn parse_image_name(name: &str) -> Option<(DateTime<Utc>, Exposure)> {
    let stem = name.strip_suffix(".png")?;
    let (stamp, exposure) = if let Some(s) = stem.strip_suffix("_short") {
        (s, Exposure::Short)
    } else if let Some(s) = stem.strip_suffix("_long") {
        (s, Exposure::Long)
    } else {
        return None;
    };
    let naive = NaiveDateTime::parse_from_str(stamp, "%Y%m%dT%H%M%SZ").ok()?;
    Some((naive.and_utc(), exposure))
}

/// Canonical image file name for a timestamp and exposure suffix.
pub(super) fn image_file_name(timestamp: DateTime<Utc>, exposure: &str) -> String {
    format!("{}_{exposure}.png", timestamp.format("%Y%m%dT%H%M%SZ"))
}
