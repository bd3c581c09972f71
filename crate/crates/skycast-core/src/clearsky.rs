//! Solar geometry and clear-sky irradiance models.
//!
//! This module provides:
//!
//! * [`solar_position`] — astronomical sun position (zenith/azimuth) from a
//!   UTC timestamp and site coordinates, using the NOAA solar calculator
//!   formulation (a low-precision ephemeris derived from Meeus: declination,
//!   equation of time, and hour angle; accurate to roughly 0.01°).
//! * [`esra_clearsky_ghi`] — the ESRA clear-sky model (Rigollier, Bauer &
//!   Wald 2000): eccentricity-corrected solar constant, Kasten air mass with
//!   elevation correction, Rayleigh optical thickness, Linke-turbidity beam
//!   attenuation, and the diffuse transmission/angular functions.
//! * [`haurwitz_clearsky_ghi`] — the Haurwitz (1945) model, a dependency-free
//!   fallback driven by zenith angle alone.
//! * [`clearsky_index`] and [`smart_persistence_forecast`] — the clear-sky
//!   index k* and the persistence baseline that advects k* forward under the
//!   clear-sky curve.
//!
//! Angles are degrees at every public interface and radians internally.
//! All functions are pure and safe for unrestricted concurrent use.

use chrono::{DateTime, Datelike, Timelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum clear-sky irradiance for the clear-sky index to be well defined.
///
/// Below this floor the index k* = GHI / GHI_clear explodes at low sun;
/// samples failing the floor are excluded from training and scoring.
pub const CLEARSKY_FLOOR_WM2: f64 = 10.0;

/// Upper clamp for the clear-sky index.
pub const CLEARSKY_INDEX_MAX: f64 = 1.5;

/// Default Linke turbidity when the configuration does not provide one.
pub const DEFAULT_LINKE_TURBIDITY: f64 = 3.0;

/// Default site coordinates: Palaiseau, France.
pub const DEFAULT_SITE_LAT_DEG: f64 = 48.713;
/// Default site longitude (degrees east): Palaiseau, France.
pub const DEFAULT_SITE_LON_DEG: f64 = 2.208;
/// Default site elevation above sea level in metres.
pub const DEFAULT_SITE_ELEVATION_M: f64 = 156.0;

/// Errors from clear-sky index and persistence operations, and from
/// parameter validation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClearSkyError {
    /// Clear-sky irradiance is below [`CLEARSKY_FLOOR_WM2`]; the clear-sky
    /// index is not meaningful for this sample.
    #[error(
        "clear-sky irradiance {ghi_clear:.3} W/m^2 is below the {floor:.0} W/m^2 low-sun floor"
    )]
    LowSun {
        /// The offending clear-sky irradiance value.
        ghi_clear: f64,
        /// The floor it failed to meet.
        floor: f64,
    },
    /// A Linke turbidity value outside the supported [1, 10] range.
    #[error("Linke turbidity {value} is outside the supported range [1, 10]")]
    TurbidityRange {
        /// The offending turbidity value.
        value: f64,
    },
    /// A site latitude outside [-90, 90] degrees.
    #[error("site latitude {value} deg is outside [-90, 90]")]
    LatitudeRange {
        /// The offending latitude.
        value: f64,
    },
}

/// Sun position for one timestamp and site, with precomputed trigonometry.
///
/// `zenith_deg` lies in [0, 180] (values above 90 mean the sun is below the
/// horizon); `azimuth_deg` lies in [0, 360), measured clockwise from north.
/// The four trigonometric fields are derived from the two angle fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolarAngles {
    /// Angle from the local vertical, degrees, in [0, 180].
    pub zenith_deg: f64,
    /// Compass bearing of the sun, degrees clockwise from north, in [0, 360).
    pub azimuth_deg: f64,
    /// cos(zenith).
    pub cos_zenith: f64,
    /// sin(zenith).
    pub sin_zenith: f64,
    /// cos(azimuth).
    pub cos_azimuth: f64,
    /// sin(azimuth).
    pub sin_azimuth: f64,
}

impl SolarAngles {
    /// Builds the struct from the two angles, deriving the trig fields.
    pub fn from_degrees(zenith_deg: f64, azimuth_deg: f64) -> Self {
        let zen = zenith_deg.to_radians();
        let az = azimuth_deg.to_radians();
        Self {
            zenith_deg,
            azimuth_deg,
            cos_zenith: zen.cos(),
            sin_zenith: zen.sin(),
            cos_azimuth: az.cos(),
            sin_azimuth: az.sin(),
        }
    }

    /// Solar altitude above the horizon, degrees (negative below it).
    pub fn altitude_deg(&self) -> f64 {
        90.0 - self.zenith_deg
    }
}

/// Linke turbidity: one value for the whole year, or one per month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LinkeTurbidity {
    /// A single year-round turbidity.
    Constant(f64),
    /// Monthly climatology, January first.
    Monthly([f64; 12]),
}

impl Default for LinkeTurbidity {
    fn default() -> Self {
        LinkeTurbidity::Constant(DEFAULT_LINKE_TURBIDITY)
    }
}

/// Last day-of-year covered by each month (day 366 attributed to December).
const MONTH_LAST_DOY: [u32; 12] = [31, 59, 90, 120, 151, 181, 212, 243, 273, 304, 334, 366];

fn month_index_for_doy(day_of_year: u32) -> usize {
    let d = day_of_year.clamp(1, 366);
    MONTH_LAST_DOY
        .iter()
        .position(|&last| d <= last)
        .unwrap_or(11)
}

impl LinkeTurbidity {
    /// Turbidity applicable on the given (1-based) day of year.
    pub fn for_day_of_year(&self, day_of_year: u32) -> f64 {
        match self {
            LinkeTurbidity::Constant(v) => *v,
            LinkeTurbidity::Monthly(values) => values[month_index_for_doy(day_of_year)],
        }
    }

    /// Checks every value lies in the supported [1, 10] range.
    pub fn validate(&self) -> Result<(), ClearSkyError> {
        let check = |value: f64| {
            if value.is_finite() && (1.0..=10.0).contains(&value) {
                Ok(())
            } else {
                Err(ClearSkyError::TurbidityRange { value })
            }
        };
        match self {
            LinkeTurbidity::Constant(v) => check(*v),
            LinkeTurbidity::Monthly(values) => values.iter().copied().try_for_each(check),
        }
    }
}

/// Which clear-sky model to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClearSkyModel {
    /// ESRA (Rigollier et al. 2000); needs turbidity and site elevation.
    Esra,
    /// Haurwitz (1945); zenith-only fallback.
    Haurwitz,
}

/// Site description and clear-sky model selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearSkyParams {
    /// Site latitude, degrees north, in [-90, 90].
    pub lat_deg: f64,
    /// Site longitude, degrees east.
    pub lon_deg: f64,
    /// Site elevation above sea level, metres.
    pub elevation_m: f64,
    /// Linke turbidity (scalar or monthly), each value in [1, 10].
    #[serde(default)]
    pub linke_turbidity: LinkeTurbidity,
    /// Clear-sky model to use.
    pub model: ClearSkyModel,
}

impl Default for ClearSkyParams {
    fn default() -> Self {
        ClearSkyParams {
            lat_deg: DEFAULT_SITE_LAT_DEG,
            lon_deg: DEFAULT_SITE_LON_DEG,
            elevation_m: DEFAULT_SITE_ELEVATION_M,
            linke_turbidity: LinkeTurbidity::default(),
            model: ClearSkyModel::Esra,
        }
    }
}

impl ClearSkyParams {
    /// Validates the invariants: |latitude| <= 90 and turbidity in [1, 10].
    pub fn validate(&self) -> Result<(), ClearSkyError> {
        if !(self.lat_deg.is_finite() && self.lat_deg.abs() <= 90.0) {
            return Err(ClearSkyError::LatitudeRange {
                value: self.lat_deg,
            });
        }
        self.linke_turbidity.validate()
    }
}

/// Astronomical sun position at a UTC instant for the site in `site`.
///
/// Implements the NOAA solar calculator formulation: geometric mean
/// longitude and anomaly, equation of center, apparent longitude with the
/// principal nutation term, corrected obliquity, declination, equation of
/// time, and the hour angle from true solar time. Azimuth is measured
/// clockwise from north.
pub fn solar_position(timestamp_utc: DateTime<Utc>, site: &ClearSkyParams) -> SolarAngles {
    let lat = site.lat_deg.to_radians();

    // Julian centuries since J2000 (2451545.0); 2440587.5 is the Julian day
    // of the Unix epoch.
    let unix_secs = timestamp_utc.timestamp() as f64
        + f64::from(timestamp_utc.timestamp_subsec_nanos()) * 1e-9;
    let jd = unix_secs / 86_400.0 + 2_440_587.5;
    let jc = (jd - 2_451_545.0) / 36_525.0;

    let mean_long_deg = (280.46646 + jc * (36_000.76983 + 0.000_303_2 * jc)).rem_euclid(360.0);
    let mean_anom_deg = 357.52911 + jc * (35_999.05029 - 0.000_153_7 * jc);
    let eccentricity = 0.016_708_634 - jc * (0.000_042_037 + 0.000_000_126_7 * jc);

    let ma = mean_anom_deg.to_radians();
    let eq_center_deg = ma.sin() * (1.914_602 - jc * (0.004_817 + 0.000_014 * jc))
        + (2.0 * ma).sin() * (0.019_993 - 0.000_101 * jc)
        + (3.0 * ma).sin() * 0.000_289;

    let true_long_deg = mean_long_deg + eq_center_deg;
    let omega = (125.04 - 1_934.136 * jc).to_radians();
    let app_long = (true_long_deg - 0.005_69 - 0.004_78 * omega.sin()).to_radians();

    let mean_obliq_deg = 23.0
        + (26.0 + (21.448 - jc * (46.815 + jc * (0.000_59 - jc * 0.001_813))) / 60.0) / 60.0;
    let obliq = (mean_obliq_deg + 0.002_56 * omega.cos()).to_radians();

    let decl = (obliq.sin() * app_long.sin()).asin();

    let var_y = (obliq / 2.0).tan().powi(2);
    let l0 = mean_long_deg.to_radians();
    let eot_min = 4.0
        * (var_y * (2.0 * l0).sin() - 2.0 * eccentricity * ma.sin()
            + 4.0 * eccentricity * var_y * ma.sin() * (2.0 * l0).cos()
            - 0.5 * var_y * var_y * (4.0 * l0).sin()
            - 1.25 * eccentricity * eccentricity * (2.0 * ma).sin())
        .to_degrees();

    let minutes_utc = f64::from(timestamp_utc.num_seconds_from_midnight()) / 60.0
        + f64::from(timestamp_utc.timestamp_subsec_nanos()) * 1e-9 / 60.0;
    let true_solar_min = (minutes_utc + eot_min + 4.0 * site.lon_deg).rem_euclid(1_440.0);
    let mut hour_angle_deg = true_solar_min / 4.0 - 180.0;
    if hour_angle_deg < -180.0 {
        hour_angle_deg += 360.0;
    }
    let ha = hour_angle_deg.to_radians();

    let cos_zen =
        (lat.sin() * decl.sin() + lat.cos() * decl.cos() * ha.cos()).clamp(-1.0, 1.0);
    let zenith_deg = cos_zen.acos().to_degrees();
    // atan2 form measured from south, positive toward west; shift to a
    // north-referenced clockwise bearing.
    let az_from_south = ha
        .sin()
        .atan2(ha.cos() * lat.sin() - decl.tan() * lat.cos());
    let azimuth_deg = (180.0 + az_from_south.to_degrees()).rem_euclid(360.0);

    SolarAngles::from_degrees(zenith_deg, azimuth_deg)
}

/// Beam and diffuse horizontal components of the ESRA clear-sky model.
///
/// Returns `(beam, diffuse)` in W/m²; both are 0 when the sun is at or
/// below the horizon. See [`esra_clearsky_ghi`] for the model description.
pub fn esra_clearsky_components(
    angles: &SolarAngles,
    day_of_year: u32,
    params: &ClearSkyParams,
) -> (f64, f64) {
    let altitude_deg = angles.altitude_deg();
    if altitude_deg <= 0.0 {
        return (0.0, 0.0);
    }
    let tl = params.linke_turbidity.for_day_of_year(day_of_year);
    esra_beam_diffuse(
        day_of_year,
        altitude_deg,
        tl,
        params.elevation_m,
    )
}

/// ESRA core on raw scalars: solar altitude (deg), Linke turbidity, site
/// elevation (m). All arithmetic in f64.
fn esra_beam_diffuse(day_of_year: u32, altitude_deg: f64, tl: f64, elevation_m: f64) -> (f64, f64) {
    const I0: f64 = 1_367.0; // solar constant, W/m^2

    // Eccentricity correction of the Earth-sun distance.
    let eps = 1.0
        + 0.033_4
            * (2.0 * std::f64::consts::PI * f64::from(day_of_year) / 365.25 - 0.048_869).cos();

    let gs = altitude_deg.to_radians(); // geometric solar altitude

    // Atmospheric refraction raises the apparent altitude used for air mass.
    let dgs = 0.061_359 * (0.159_4 + 1.123_0 * gs + 0.065_656 * gs * gs)
        / (1.0 + 28.934_4 * gs + 277.397_1 * gs * gs);
    let gs_true = gs + dgs;
    let gs_true_deg = gs_true.to_degrees();

    // Kasten & Young relative optical air mass with station-pressure scaling.
    let pp0 = (-elevation_m / 8_434.5).exp();
    let air_mass = pp0 / (gs_true.sin() + 0.505_72 * (gs_true_deg + 6.079_95).powf(-1.636_4));

    // Integral Rayleigh optical thickness (Kasten 1996 polynomial).
    let inv_rayleigh = if air_mass <= 20.0 {
        6.629_6 + 1.751_3 * air_mass - 0.120_2 * air_mass * air_mass
            + 0.006_5 * air_mass.powi(3)
            - 0.000_13 * air_mass.powi(4)
    } else {
        10.4 + 0.718 * air_mass
    };
    let rayleigh = 1.0 / inv_rayleigh;

    let beam = (I0 * eps * gs.sin() * (-0.866_2 * tl * air_mass * rayleigh).exp()).max(0.0);

    // Diffuse transmission at zenith and the diffuse angular function.
    let trd = -1.584_3e-2 + 3.054_3e-2 * tl + 3.797e-4 * tl * tl;
    let mut a0 = 2.646_3e-1 - 6.158_1e-2 * tl + 3.140_8e-3 * tl * tl;
    if a0 * trd < 2e-3 {
        a0 = 2e-3 / trd;
    }
    let a1 = 2.040_2 + 1.894_5e-2 * tl - 1.116_1e-2 * tl * tl;
    let a2 = -1.302_5 + 3.923_1e-2 * tl + 8.507_9e-3 * tl * tl;
    let fd = a0 + a1 * gs.sin() + a2 * gs.sin() * gs.sin();
    let diffuse = (I0 * eps * trd * fd).max(0.0);

    (beam, diffuse)
}

/// Global horizontal irradiance under the ESRA clear-sky model, W/m².
///
/// ESRA (Rigollier et al. 2000): GHI_clear = beam + diffuse with an
/// eccentricity-corrected solar constant, Kasten air mass including the
/// elevation pressure correction, the Rayleigh optical thickness
/// polynomial, exponential Linke-turbidity beam attenuation, and the
/// published diffuse transmission and angular functions. Returns 0 when
/// the sun is at or below the horizon (zenith >= 90°).
pub fn esra_clearsky_ghi(angles: &SolarAngles, day_of_year: u32, params: &ClearSkyParams) -> f64 {
    let (beam, diffuse) = esra_clearsky_components(angles, day_of_year, params);
    beam + diffuse
}

/// Global horizontal irradiance under the Haurwitz model, W/m².
///
/// GHI = 1098 · cos(zenith) · exp(−0.057 / cos(zenith)) for zenith < 90°,
/// else 0.
pub fn haurwitz_clearsky_ghi(zenith_deg: f64) -> f64 {
    let cz = zenith_deg.to_radians().cos();
    if cz <= 0.0 {
        return 0.0;
    }
    1_098.0 * cz * (-0.057 / cz).exp()
}

/// Clear-sky GHI under the model selected in `params`, W/m².
pub fn clearsky_ghi(angles: &SolarAngles, day_of_year: u32, params: &ClearSkyParams) -> f64 {
    match params.model {
        ClearSkyModel::Esra => esra_clearsky_ghi(angles, day_of_year, params),
        ClearSkyModel::Haurwitz => haurwitz_clearsky_ghi(angles.zenith_deg),
    }
}

/// Convenience: sun position and clear-sky GHI for a UTC instant.
pub fn clearsky_ghi_at(timestamp_utc: DateTime<Utc>, params: &ClearSkyParams) -> (SolarAngles, f64) {
    let angles = solar_position(timestamp_utc, params);
    let ghi = clearsky_ghi(&angles, timestamp_utc.ordinal(), params);
    (angles, ghi)
}

/// Clear-sky index k* = GHI / GHI_clear, clamped to [0, 1.5].
///
/// Fails with [`ClearSkyError::LowSun`] when `ghi_clear` is below the
/// 10 W/m² floor (the ratio is unstable at low sun; such samples are
/// excluded upstream).
pub fn clearsky_index(ghi_measured: f64, ghi_clear: f64) -> Result<f64, ClearSkyError> {
    if !(ghi_clear >= CLEARSKY_FLOOR_WM2) {
        return Err(ClearSkyError::LowSun {
            ghi_clear,
            floor: CLEARSKY_FLOOR_WM2,
        });
    }
    Ok((ghi_measured / ghi_clear).clamp(0.0, CLEARSKY_INDEX_MAX))
}

/// Smart-persistence forecast: k*(t) · GHI_clear(t+h).
///
/// The clear-sky index observed now is assumed to persist over the forecast
/// horizon and is re-scaled by the clear-sky irradiance at the target time.
/// Propagates the low-sun error from [`clearsky_index`].
pub fn smart_persistence_forecast(
    ghi_t: f64,
    ghi_clear_t: f64,
    ghi_clear_t_plus_h: f64,
) -> Result<f64, ClearSkyError> {
    let kstar = clearsky_index(ghi_t, ghi_clear_t)?;
    Ok(kstar * ghi_clear_t_plus_h)
}
