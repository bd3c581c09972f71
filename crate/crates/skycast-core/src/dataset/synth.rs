//! Synthetic all-sky dataset generator: per-day cloud regimes, Gaussian-blob
//! cloud fields advected by a constant wind, dual-exposure frames, and GHI
//! physically coupled to the clear-sky curve through the cloud field.

use super::ingest::image_file_name;
use super::DatasetError;
use crate::clearsky::{clearsky_ghi_at, ClearSkyParams};
use crate::seed::{rng_for, uniform01, uniform_index};
use chrono::{DateTime, Duration, NaiveDate, Utc};
use image::GrayImage;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};

/// Fraction of the clear-sky diffuse light that survives full overcast:
/// GHI = GHI_clear · (τ + 0.25 · (1 − τ)).
pub const DIFFUSE_FLOOR: f64 = 0.25;

fn default_days() -> u32 {
    12
}
fn default_start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2026, 6, 1).expect("valid date")
}
fn default_image_size() -> u32 {
    64
}
fn default_cadence_min() -> u32 {
    super::NOMINAL_CADENCE_MIN
}
fn default_clear_fraction() -> f64 {
    0.3
}
fn default_broken_fraction() -> f64 {
    0.4
}
fn default_overcast_fraction() -> f64 {
    0.3
}

/// Generator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Number of consecutive days to generate.
    #[serde(default = "default_days")]
    pub days: u32,
    /// Local calendar date of the first day.
    #[serde(default = "default_start_date")]
    pub start_date: NaiveDate,
    /// Rendered frame size in pixels (square).
    #[serde(default = "default_image_size")]
    pub image_size: u32,
    /// Sampling cadence, minutes.
    #[serde(default = "default_cadence_min")]
    pub cadence_min: u32,
    /// Probability a day draws the clear regime.
    #[serde(default = "default_clear_fraction")]
    pub clear_fraction: f64,
    /// Probability a day draws the broken-cloud regime.
    #[serde(default = "default_broken_fraction")]
    pub broken_fraction: f64,
    /// Probability a day draws the overcast regime.
    #[serde(default = "default_overcast_fraction")]
    pub overcast_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            days: default_days(),
            start_date: default_start_date(),
            image_size: default_image_size(),
            cadence_min: default_cadence_min(),
            clear_fraction: default_clear_fraction(),
            broken_fraction: default_broken_fraction(),
            overcast_fraction: default_overcast_fraction(),
        }
    }
}

impl SynthConfig {
    /// Validates counts, sizes, cadence, and that the regime mix is a
    /// probability distribution.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let fail = |details: String| Err(DatasetError::InvalidConfig { details });
        if self.days == 0 {
            return fail("days must be at least 1".into());
        }
        if self.image_size < 16 {
            return fail(format!("image_size {} is below the 16 px minimum", self.image_size));
        }
        if self.cadence_min == 0 || self.cadence_min > 60 {
            return fail(format!("cadence_min {} is outside [1, 60]", self.cadence_min));
        }
        let f = [
            self.clear_fraction,
            self.broken_fraction,
            self.overcast_fraction,
        ];
        if f.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return fail("regime fractions must be non-negative".into());
        }
        let sum: f64 = f.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return fail(format!("regime fractions sum to {sum}, expected 1"));
        }
        Ok(())
    }
}

/// Cloud regime drawn once per generated day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CloudRegime {
    /// No clouds; GHI follows the clear-sky curve exactly.
    Clear,
    /// Scattered opaque blobs; intermittent shading.
    Broken,
    /// Dense, highly opaque deck; GHI mostly at the diffuse floor.
    Overcast,
}

impl fmt::Display for CloudRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CloudRegime::Clear => "clear",
            CloudRegime::Broken => "broken",
            CloudRegime::Overcast => "overcast",
        };
        f.write_str(s)
    }
}

/// Per-day record written to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDayRecord {
    /// Local calendar date.
    pub date: NaiveDate,
    /// Regime drawn for the day.
    pub regime: CloudRegime,
    /// Number of timestamps generated for the day.
    pub stamps: usize,
}

/// `manifest.json` contents: everything needed to audit a generated set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    /// Seed the archive was generated from.
    pub seed: u64,
    /// Echo of the generator configuration.
    pub config: SynthConfig,
    /// Echo of the site / clear-sky parameters.
    pub site: ClearSkyParams,
    /// Total timestamps across all days.
    pub total_stamps: usize,
    /// Per-day regime and stamp count.
    pub days: Vec<SynthDayRecord>,
}

/// What was generated, returned to the caller.
#[derive(Debug, Clone)]
pub struct SynthSummary {
    /// Archive root that was written.
    pub out_root: PathBuf,
    /// Total timestamps generated.
    pub total_stamps: usize,
    /// Per-day records (same as the manifest).
    pub days: Vec<SynthDayRecord>,
}

struct Blob {
    cx: f64,
    cy: f64,
    radius: f64,
    opacity: f64,
}

struct DayPlan {
    regime: CloudRegime,
    blobs: Vec<Blob>,
    wind_x: f64, // frame units per minute
    wind_y: f64,
}

fn plan_day(config: &SynthConfig, seed: u64, date: NaiveDate) -> DayPlan {
    let mut rng = rng_for(seed, &format!("synth.day.{}", date.format("%Y%m%d")));
    let u = uniform01(&mut rng);
    let regime = if u < config.clear_fraction {
        CloudRegime::Clear
    } else if u < config.clear_fraction + config.broken_fraction {
        CloudRegime::Broken
    } else {
        CloudRegime::Overcast
    };
    let blob_count = match regime {
        CloudRegime::Clear => 0,
        CloudRegime::Broken => 8 + uniform_index(&mut rng, 13), // 8..=20
        CloudRegime::Overcast => 30 + uniform_index(&mut rng, 16), // 30..=45
    };
    let mut blobs = Vec::with_capacity(blob_count);
    for _ in 0..blob_count {
        let cx = uniform01(&mut rng) * 2.0 - 0.5;
        let cy = uniform01(&mut rng) * 2.0 - 0.5;
        let (radius, opacity) = match regime {
            CloudRegime::Clear => unreachable!("clear days draw no blobs"),
            CloudRegime::Broken => (
                0.05 + 0.20 * uniform01(&mut rng),
                0.35 + 0.55 * uniform01(&mut rng),
            ),
            CloudRegime::Overcast => (
                0.18 + 0.22 * uniform01(&mut rng),
                0.80 + 0.17 * uniform01(&mut rng),
            ),
        };
        blobs.push(Blob {
            cx,
            cy,
            radius,
            opacity,
        });
    }
    // Fast enough that shading changes within a 2–20 minute horizon (the
    // band the forecaster targets), slow enough that the two input frames
    // overlap: 0.03–0.09 frame units between frames 2 minutes apart.
    let speed = 0.015 + 0.030 * uniform01(&mut rng); // frame units / minute
    let dir = std::f64::consts::TAU * uniform01(&mut rng);
    DayPlan {
        regime,
        blobs,
        wind_x: speed * dir.cos(),
        wind_y: speed * dir.sin(),
    }
}

/// Blob centers advected by the day's wind, wrapped on the extended
/// [−0.5, 1.5) torus so cover recirculates instead of clearing out.
fn advected(blob: &Blob, plan: &DayPlan, minutes: f64) -> (f64, f64) {
    let wrap = |v: f64| (v + 0.5).rem_euclid(2.0) - 0.5;
    (
        wrap(blob.cx + plan.wind_x * minutes),
        wrap(blob.cy + plan.wind_y * minutes),
    )
}

/// Transmittance of the cloud field at a point: product over blobs of
/// (1 − opacity · exp(−d²/2r²)), with a 3-sigma evaluation cutoff.
fn transmittance(plan: &DayPlan, minutes: f64, x: f64, y: f64) -> f64 {
    let mut tau = 1.0_f64;
    for blob in &plan.blobs {
        let (cx, cy) = advected(blob, plan, minutes);
        let d2 = (x - cx).powi(2) + (y - cy).powi(2);
        let r2 = blob.radius * blob.radius;
        if d2 > 9.0 * r2 {
            continue;
        }
        tau *= 1.0 - blob.opacity * (-d2 / (2.0 * r2)).exp();
    }
    tau.clamp(0.0, 1.0)
}

/// Sun position in normalized frame coordinates (fisheye-style: radial
/// distance proportional to zenith angle, north up).
fn sun_frame_position(zenith_deg: f64, azimuth_deg: f64) -> (f64, f64) {
    let r = 0.5 * (zenith_deg / 90.0);
    let az = azimuth_deg.to_radians();
    (0.5 + r * az.sin(), 0.5 - r * az.cos())
}

/// Renders the short- and long-exposure frames for one timestamp.
fn render_frames(
    plan: &DayPlan,
    minutes: f64,
    sun_xy: (f64, f64),
    tau_sun: f64,
    size: u32,
) -> (GrayImage, GrayImage) {
    const SUN_DISK_SHORT: f64 = 0.035; // frame fraction
    const SUN_DISK_LONG: f64 = 0.11;
    const LONG_GAIN: f64 = 2.4;
    const CLOUD_GRAY: f64 = 0.55;

    let n = (size * size) as usize;
    let mut short = vec![0u8; n];
    let mut long = vec![0u8; n];
    let quant = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let inv = 1.0 / f64::from(size);
    let (sx, sy) = sun_xy;

    for py in 0..size {
        let y = (f64::from(py) + 0.5) * inv;
        for px in 0..size {
            let x = (f64::from(px) + 0.5) * inv;
            let tau_pix = transmittance(plan, minutes, x, y);
            let d_sun2 = (x - sx).powi(2) + (y - sy).powi(2);

            // Sky background with circumsolar glow; clouds mixed in by
            // their opacity.
            let sky = 0.10 + 0.18 * (-d_sun2 / (2.0 * 0.25_f64.powi(2))).exp();
            let base = sky * tau_pix + CLOUD_GRAY * (1.0 - tau_pix);

            let mut v_short = base;
            if d_sun2 < SUN_DISK_SHORT * SUN_DISK_SHORT {
                // Saturates when the sun is unobscured, hides under thick
                // cloud.
                v_short = v_short.max(0.25 + 0.75 * tau_sun);
            }

            let mut v_long = LONG_GAIN * base;
            if d_sun2 < SUN_DISK_LONG * SUN_DISK_LONG {
                v_long = v_long.max(0.35 + 0.90 * tau_sun);
            }

            let idx = (py * size + px) as usize;
            short[idx] = quant(v_short);
            long[idx] = quant(v_long);
        }
    }
    (
        GrayImage::from_raw(size, size, short).expect("sized buffer"),
        GrayImage::from_raw(size, size, long).expect("sized buffer"),
    )
}

/// Generates a complete synthetic archive under `out_root`.
///
/// Layout matches [`super::ingest_directory`]'s contract; a
/// `manifest.json` records the seed, configuration echo, and per-day
/// regimes. Identical (config, site, seed) inputs produce byte-identical
/// archives. Timestamps run at the configured cadence from 08:00 to 19:00
/// local mean solar time and are stored in UTC.
pub fn synth_generate(
    config: &SynthConfig,
    site: &ClearSkyParams,
    seed: u64,
    out_root: &Path,
) -> Result<SynthSummary, DatasetError> {
    config.validate()?;
    site.validate()
        .map_err(|e| DatasetError::InvalidConfig { details: e.to_string() })?;

    let images_dir = out_root.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|source| DatasetError::Io {
        path: images_dir.clone(),
        source,
    })?;

    let lon_offset_s = (site.lon_deg * 240.0).round() as i64;
    let mut csv = String::from("timestamp_utc,ghi_wm2,zenith_deg,azimuth_deg\n");
    let mut day_records = Vec::with_capacity(config.days as usize);
    let mut total_stamps = 0usize;

    for d in 0..config.days {
        let date = config
            .start_date
            .checked_add_days(chrono::Days::new(u64::from(d)))
            .ok_or_else(|| DatasetError::InvalidConfig {
                details: "start_date + days overflows the calendar".to_string(),
            })?;
        let plan = plan_day(config, seed, date);
        let mut stamps = 0usize;

        let mut local_min = super::DAYLIGHT_START_MIN;
        while local_min <= super::DAYLIGHT_END_MIN {
            let local = date
                .and_hms_opt(local_min / 60, local_min % 60, 0)
                .expect("valid time of day");
            let timestamp: DateTime<Utc> = (local - Duration::seconds(lon_offset_s)).and_utc();
            let minutes = f64::from(local_min - super::DAYLIGHT_START_MIN);

            let (angles, ghi_clear) = clearsky_ghi_at(timestamp, site);
            let sun_xy = sun_frame_position(angles.zenith_deg, angles.azimuth_deg);
            let tau_sun = transmittance(&plan, minutes, sun_xy.0, sun_xy.1);
            let ghi = ghi_clear * (tau_sun + DIFFUSE_FLOOR * (1.0 - tau_sun));

            let (short, long) =
                render_frames(&plan, minutes, sun_xy, tau_sun, config.image_size);
            let short_path = images_dir.join(image_file_name(timestamp, "short"));
            short.save(&short_path).map_err(|source| match source {
                image::ImageError::IoError(io) => DatasetError::Io {
                    path: short_path.clone(),
                    source: io,
                },
                other => DatasetError::ImageDecode {
                    path: short_path.clone(),
                    source: other,
                },
            })?;
            let long_path = images_dir.join(image_file_name(timestamp, "long"));
            long.save(&long_path).map_err(|source| match source {
                image::ImageError::IoError(io) => DatasetError::Io {
                    path: long_path.clone(),
                    source: io,
                },
                other => DatasetError::ImageDecode {
                    path: long_path.clone(),
                    source: other,
                },
            })?;

            csv.push_str(&format!(
                "{},{:.3},{:.4},{:.4}\n",
                timestamp.format("%Y-%m-%dT%H:%M:%SZ"),
                ghi,
                angles.zenith_deg,
                angles.azimuth_deg
            ));
            stamps += 1;
            local_min += config.cadence_min;
        }

        day_records.push(SynthDayRecord {
            date,
            regime: plan.regime,
            stamps,
        });
        total_stamps += stamps;
    }

    let csv_path = out_root.join("measurements.csv");
    std::fs::write(&csv_path, csv).map_err(|source| DatasetError::Io {
        path: csv_path,
        source,
    })?;

    let manifest = SynthManifest {
        seed,
        config: config.clone(),
        site: site.clone(),
        total_stamps,
        days: day_records.clone(),
    };
    let manifest_path = out_root.join("manifest.json");
    let manifest_json =
        serde_json::to_string_pretty(&manifest).expect("manifest serialization cannot fail");
    std::fs::write(&manifest_path, manifest_json).map_err(|source| DatasetError::Io {
        path: manifest_path,
        source,
    })?;

    Ok(SynthSummary {
        out_root: out_root.to_path_buf(),
        total_stamps,
        days: day_records,
    })
}
