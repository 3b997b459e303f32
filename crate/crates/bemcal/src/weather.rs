//! Weather series, solar geometry and the diffuse/direct irradiance split.
//!
//! Loggers deliver global horizontal irradiance only; the simulator interface
//! and the exported weather files want it split into diffuse and direct
//! components. The split uses the reduced (clearness-index-only) Reindl
//! correlation on top of textbook solar geometry:
//!
//! - declination (Cooper):  `delta = 23.45 deg * sin(2*pi*(284+n)/365)`
//! - eccentricity (Spencer): four-term Fourier series in `B = 2*pi*(n-1)/365`
//! - hour angle from solar time, which is UTC shifted by longitude and the
//!   Spencer equation of time
//! - `cos(zenith) = sin(lat)sin(delta) + cos(lat)cos(delta)cos(omega)`

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Datelike, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::Resolution;

pub const SOLAR_CONSTANT: f64 = 1367.0;

/// Below this zenith cosine the direct-normal division is numerically
/// meaningless, so DNI is reported as zero.
pub const MIN_ZENITH_COSINE: f64 = 0.01;

/// Diffuse fraction is clamped to this floor (the overcast asymptote of the
/// correlation) and to 1.0 from above.
pub const MIN_DIFFUSE_FRACTION: f64 = 0.147;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Site {
    /// Degrees, north positive.
    pub latitude_deg: f64,
    /// Degrees, east positive.
    pub longitude_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeatherField {
    DryBulb,
    DewPoint,
    RelHumidity,
    Pressure,
    WindSpeed,
    WindDir,
    Ghi,
}

pub const FIELD_COUNT: usize = 7;

impl WeatherField {
    pub const ALL: [WeatherField; FIELD_COUNT] = [
        WeatherField::DryBulb,
        WeatherField::DewPoint,
        WeatherField::RelHumidity,
        WeatherField::Pressure,
        WeatherField::WindSpeed,
        WeatherField::WindDir,
        WeatherField::Ghi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WeatherField::DryBulb => "dry_bulb",
            WeatherField::DewPoint => "dew_point",
            WeatherField::RelHumidity => "rh",
            WeatherField::Pressure => "pressure",
            WeatherField::WindSpeed => "wind_speed",
            WeatherField::WindDir => "wind_dir",
            WeatherField::Ghi => "ghi",
        }
    }

    fn index(self) -> usize {
        WeatherField::ALL.iter().position(|f| *f == self).unwrap()
    }
}

const CSV_HEADER: &str = "timestamp,dry_bulb,dew_point,rh,pressure,wind_speed,wind_dir,ghi";
const CSV_HEADER_SPLIT: &str =
    "timestamp,dry_bulb,dew_point,rh,pressure,wind_speed,wind_dir,ghi,dhi,dni";

/// Uniform-interval weather record. NaN marks a missing field sample.
///
/// Weather exists only at simulation timesteps, so resolutions coarser than
/// hourly are rejected at construction. Non-missing GHI must be non-negative
/// and relative humidity must lie in [0, 100].
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherSeries {
    pub site: Site,
    pub start: DateTime<Utc>,
    pub resolution: Resolution,
    fields: [Vec<f64>; FIELD_COUNT],
}

impl WeatherSeries {
    pub fn new(
        site: Site,
        start: DateTime<Utc>,
        resolution: Resolution,
        fields: [Vec<f64>; FIELD_COUNT],
    ) -> Result<Self> {
        if resolution > Resolution::Hourly {
            return Err(Error::WeatherResolutionCap { got: resolution });
        }
        let len = fields[0].len();
        if fields.iter().any(|f| f.len() != len) {
            return Err(Error::SeriesInvariant(
                "weather fields have unequal lengths".into(),
            ));
        }
        for field in WeatherField::ALL {
            for (i, v) in fields[field.index()].iter().enumerate() {
                if v.is_nan() {
                    continue;
                }
                if !v.is_finite() {
                    return Err(Error::SeriesInvariant(format!(
                        "{} at index {i} is not finite",
                        field.name()
                    )));
                }
                match field {
                    WeatherField::Ghi if *v < 0.0 => {
                        return Err(Error::SeriesInvariant(format!(
                            "ghi at index {i} is negative: {v}"
                        )));
                    }
                    WeatherField::RelHumidity if !(0.0..=100.0).contains(v) => {
                        return Err(Error::SeriesInvariant(format!(
                            "rh at index {i} out of [0, 100]: {v}"
                        )));
                    }
                    _ => {}
                }
            }
        }
        Ok(WeatherSeries {
            site,
            start,
            resolution,
            fields,
        })
    }

    pub fn len(&self) -> usize {
        self.fields[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn step_seconds(&self) -> i64 {
        self.resolution.step_seconds().expect("capped at hourly")
    }

    pub fn field(&self, f: WeatherField) -> &[f64] {
        &self.fields[f.index()]
    }

    pub fn dry_bulb(&self) -> &[f64] {
        self.field(WeatherField::DryBulb)
    }

    pub fn ghi(&self) -> &[f64] {
        self.field(WeatherField::Ghi)
    }

    pub fn timestamp_at(&self, i: usize) -> DateTime<Utc> {
        self.start + chrono::Duration::seconds(self.step_seconds() * i as i64)
    }

    pub fn is_complete(&self) -> bool {
        self.fields.iter().flatten().all(|v| !v.is_nan())
    }

    pub fn missing_count(&self) -> usize {
        self.fields.iter().flatten().filter(|v| v.is_nan()).count()
    }

    /// Reads the 8-column logger format; the 10-column variant with derived
    /// `dhi,dni` appended is accepted too (the derived columns are ignored).
    pub fn read_csv(path: &Path, site: Site) -> Result<Self> {
        let name = path.display().to_string();
        let err = |line: usize, msg: String| Error::Csv {
            path: name.clone(),
            line,
            msg,
        };
        let file = std::fs::File::open(path)?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let ncols = match lines.next() {
            Some((_, Ok(h))) if h.trim_end() == CSV_HEADER => 8,
            Some((_, Ok(h))) if h.trim_end() == CSV_HEADER_SPLIT => 10,
            Some((_, Ok(h))) => return Err(err(1, format!("unexpected header {h:?}"))),
            Some((_, Err(e))) => return Err(e.into()),
            None => return Err(err(1, "empty file".into())),
        };
        let mut stamps: Vec<DateTime<Utc>> = Vec::new();
        let mut fields: [Vec<f64>; FIELD_COUNT] = Default::default();
        for (idx, line) in lines {
            let line = line?;
            let row = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != ncols {
                return Err(err(row, format!("expected {ncols} columns, got {}", cols.len())));
            }
            let ts = DateTime::parse_from_rfc3339(cols[0])
                .map_err(|e| err(row, format!("bad timestamp {:?}: {e}", cols[0])))?
                .with_timezone(&Utc);
            stamps.push(ts);
            for (k, field) in WeatherField::ALL.iter().enumerate() {
                let cell = cols[k + 1].trim();
                let v = if cell.is_empty() {
                    f64::NAN
                } else {
                    cell.parse()
                        .map_err(|e| err(row, format!("bad {} {cell:?}: {e}", field.name())))?
                };
                fields[k].push(v);
            }
        }
        if stamps.len() < 2 {
            return Err(err(0, format!("need at least 2 rows, got {}", stamps.len())));
        }
        let dt = (stamps[1] - stamps[0]).num_seconds();
        let resolution = Resolution::ALL
            .into_iter()
            .find(|r| r.step_seconds() == Some(dt))
            .filter(|r| *r <= Resolution::Hourly)
            .ok_or_else(|| err(3, format!("unsupported weather interval of {dt} s")))?;
        for (i, ts) in stamps.iter().enumerate() {
            let expect = stamps[0] + chrono::Duration::seconds(dt * i as i64);
            if *ts != expect {
                return Err(err(
                    i + 2,
                    format!("irregular interval: expected {expect}, got {ts}"),
                ));
            }
        }
        WeatherSeries::new(site, stamps[0], resolution, fields).map_err(|e| err(0, e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.write_csv_inner(path, false)
    }

    /// Writes the logger columns plus derived `dhi,dni`, split at each
    /// interval's midpoint geometry. Rows with missing GHI leave the derived
    /// cells empty.
    pub fn write_csv_with_split(&self, path: &Path) -> Result<()> {
        self.write_csv_inner(path, true)
    }

    fn write_csv_inner(&self, path: &Path, split: bool) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "{}", if split { CSV_HEADER_SPLIT } else { CSV_HEADER })?;
        let half_step = chrono::Duration::seconds(self.step_seconds() / 2);
        for i in 0..self.len() {
            let ts = self.timestamp_at(i);
            write!(w, "{}", ts.format("%Y-%m-%dT%H:%M:%SZ"))?;
            for field in WeatherField::ALL {
                let v = self.field(field)[i];
                if v.is_nan() {
                    write!(w, ",")?;
                } else {
                    write!(w, ",{v}")?;
                }
            }
            if split {
                let ghi = self.ghi()[i];
                if ghi.is_nan() {
                    write!(w, ",,")?;
                } else {
                    let geo = solar_geometry(&self.site, ts + half_step);
                    let s = reindl_split(ghi, geo.zenith_cosine, geo.extraterrestrial_horizontal);
                    write!(w, ",{},{}", s.dhi, s.dni)?;
                }
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolarGeometry {
    /// cos(solar zenith angle), clamped to [0, 1].
    pub zenith_cosine: f64,
    /// Extraterrestrial irradiance on a horizontal plane, W/m2.
    pub extraterrestrial_horizontal: f64,
}

pub fn solar_geometry(site: &Site, at: DateTime<Utc>) -> SolarGeometry {
    let n = at.ordinal() as f64;
    let b = 2.0 * std::f64::consts::PI * (n - 1.0) / 365.0;
    let declination = (23.45 * (2.0 * std::f64::consts::PI * (284.0 + n) / 365.0).sin()).to_radians();
    let eccentricity = 1.000110
        + 0.034221 * b.cos()
        + 0.001280 * b.sin()
        + 0.000719 * (2.0 * b).cos()
        + 0.000077 * (2.0 * b).sin();
    let eot_minutes = 229.18
        * (0.000075 + 0.001868 * b.cos()
            - 0.032077 * b.sin()
            - 0.014615 * (2.0 * b).cos()
            - 0.040890 * (2.0 * b).sin());
    let utc_hours =
        at.hour() as f64 + at.minute() as f64 / 60.0 + at.second() as f64 / 3600.0;
    let solar_hours = utc_hours + site.longitude_deg / 15.0 + eot_minutes / 60.0;
    let hour_angle = (15.0 * (solar_hours - 12.0)).to_radians();
    let lat = site.latitude_deg.to_radians();
    let cos_zenith = (lat.sin() * declination.sin()
        + lat.cos() * declination.cos() * hour_angle.cos())
    .clamp(0.0, 1.0);
    SolarGeometry {
        zenith_cosine: cos_zenith,
        extraterrestrial_horizontal: SOLAR_CONSTANT * eccentricity * cos_zenith,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolarSplit {
    /// Diffuse horizontal irradiance, W/m2.
    pub dhi: f64,
    /// Direct normal irradiance, W/m2.
    pub dni: f64,
}

/// Splits GHI into diffuse and direct by the reduced Reindl correlation: the
/// diffuse fraction is a piecewise-linear function of the clearness index
/// alone, clamped to [0.147, 1].
pub fn reindl_split(ghi: f64, zenith_cosine: f64, extraterrestrial_horizontal: f64) -> SolarSplit {
    let kt = if extraterrestrial_horizontal > 0.0 {
        ghi / extraterrestrial_horizontal
    } else {
        0.0
    };
    let fd = if kt <= 0.3 {
        1.020 - 0.248 * kt
    } else if kt < 0.78 {
        1.45 - 1.67 * kt
    } else {
        MIN_DIFFUSE_FRACTION
    }
    .clamp(MIN_DIFFUSE_FRACTION, 1.0);
    let dhi = fd * ghi;
    let dni = if zenith_cosine < MIN_ZENITH_COSINE {
        0.0
    } else {
        (ghi - dhi) / zenith_cosine
    };
    SolarSplit { dhi, dni }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilledPoint {
    pub index: usize,
    pub timestamp: DateTime<Utc>,
    pub field: WeatherField,
}

/// Replaces missing primary samples with the secondary station's value at
/// the same timestamp. Both series must share the resolution and their grids
/// must line up. Points missing in both stations are an error that names
/// every offending (timestamp, field).
pub fn infill_weather(
    primary: &WeatherSeries,
    secondary: &WeatherSeries,
) -> Result<(WeatherSeries, Vec<FilledPoint>)> {
    if primary.resolution != secondary.resolution {
        return Err(Error::MetadataMismatch(format!(
            "weather resolution {} vs {}",
            primary.resolution, secondary.resolution
        )));
    }
    let step = primary.step_seconds();
    let shift = (primary.start - secondary.start).num_seconds();
    if shift % step != 0 {
        return Err(Error::MetadataMismatch(
            "secondary weather grid does not line up with primary".into(),
        ));
    }
    let offset = shift / step;
    let mut out = primary.clone();
    let mut filled = Vec::new();
    let mut conflicts = Vec::new();
    for field in WeatherField::ALL {
        for i in 0..primary.len() {
            if !primary.field(field)[i].is_nan() {
                continue;
            }
            let j = offset + i as i64;
            let sub = if j >= 0 && (j as usize) < secondary.len() {
                secondary.field(field)[j as usize]
            } else {
                f64::NAN
            };
            if sub.is_nan() {
                conflicts.push((primary.timestamp_at(i), field));
            } else {
                out.fields[field.index()][i] = sub;
                filled.push(FilledPoint {
                    index: i,
                    timestamp: primary.timestamp_at(i),
                    field,
                });
            }
        }
    }
    if !conflicts.is_empty() {
        let mut msg = conflicts
            .iter()
            .take(8)
            .map(|(ts, f)| format!("{} {}", ts.format("%Y-%m-%dT%H:%M:%SZ"), f.name()))
            .collect::<Vec<_>>()
            .join(", ");
        if conflicts.len() > 8 {
            msg.push_str(&format!(" and {} more", conflicts.len() - 8));
        }
        return Err(Error::BothSourcesMissing(msg));
    }
    Ok((out, filled))
}

/// Averages intensive weather quantities into a coarser simulation timestep
/// (capped at hourly). An output sample is missing when any covered input
/// sample is; infill first.
pub fn resample_weather(w: &WeatherSeries, target: Resolution) -> Result<WeatherSeries> {
    if target > Resolution::Hourly {
        return Err(Error::WeatherResolutionCap { got: target });
    }
    if target == w.resolution {
        return Ok(w.clone());
    }
    if target < w.resolution {
        return Err(Error::DisaggregationRefused {
            have: w.resolution,
            want: target,
        });
    }
    let ratio = (target.step_seconds().unwrap() / w.step_seconds()) as usize;
    let mut fields: [Vec<f64>; FIELD_COUNT] = Default::default();
    for (k, src) in w.fields.iter().enumerate() {
        let mut a = 0;
        while a < src.len() {
            let b = (a + ratio).min(src.len());
            let chunk = &src[a..b];
            let v = if chunk.iter().any(|v| v.is_nan()) {
                f64::NAN
            } else {
                chunk.iter().sum::<f64>() / chunk.len() as f64
            };
            fields[k].push(v);
            a += ratio;
        }
    }
    WeatherSeries::new(w.site, w.start, target, fields)
}
