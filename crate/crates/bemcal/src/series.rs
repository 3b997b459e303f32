//! Metered energy series at uniform temporal resolutions.
//!
//! Every series is a run of consecutive intervals starting at `start`; the
//! value of interval `i` is the energy (kWh) consumed during
//! `[timestamp_at(i), timestamp_at(i+1))`. Gaps are carried as an explicit
//! missing mask rather than sentinel values, so aggregation and alignment can
//! propagate them without guessing.

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Months, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default infill cap: gaps up to three hours are bridged linearly.
pub const MAX_GAP_SECONDS: i64 = 10_800;

/// The eight temporal resolutions a metering campaign can deliver.
///
/// The derived ordering is by coarseness (`Min1 < Min5 < ... < Monthly`).
/// Every resolution except `Monthly` has a fixed step length; monthly
/// intervals follow the calendar, counted from the series start, so their
/// lengths vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    Min1,
    Min5,
    Min15,
    Min30,
    Hourly,
    Hour6,
    Daily,
    Monthly,
}

impl Resolution {
    pub const ALL: [Resolution; 8] = [
        Resolution::Min1,
        Resolution::Min5,
        Resolution::Min15,
        Resolution::Min30,
        Resolution::Hourly,
        Resolution::Hour6,
        Resolution::Daily,
        Resolution::Monthly,
    ];

    /// Fixed step length in seconds; `None` for `Monthly`.
    pub fn step_seconds(self) -> Option<i64> {
        match self {
            Resolution::Min1 => Some(60),
            Resolution::Min5 => Some(300),
            Resolution::Min15 => Some(900),
            Resolution::Min30 => Some(1800),
            Resolution::Hourly => Some(3600),
            Resolution::Hour6 => Some(21_600),
            Resolution::Daily => Some(86_400),
            Resolution::Monthly => None,
        }
    }

    /// Steps per calendar day for resolutions that divide a day.
    pub fn steps_per_day(self) -> Option<usize> {
        self.step_seconds().map(|s| (86_400 / s) as usize)
    }

    pub fn name(self) -> &'static str {
        match self {
            Resolution::Min1 => "min1",
            Resolution::Min5 => "min5",
            Resolution::Min15 => "min15",
            Resolution::Min30 => "min30",
            Resolution::Hourly => "hourly",
            Resolution::Hour6 => "hour6",
            Resolution::Daily => "daily",
            Resolution::Monthly => "monthly",
        }
    }

    pub fn parse(s: &str) -> Result<Resolution> {
        Resolution::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown resolution {s:?}")))
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The four metered channels of the study building.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Heating,
    Cooling,
    Electricity,
    Dhw,
}

impl Channel {
    pub const ALL: [Channel; 4] = [
        Channel::Heating,
        Channel::Cooling,
        Channel::Electricity,
        Channel::Dhw,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Heating => "heating",
            Channel::Cooling => "cooling",
            Channel::Electricity => "electricity",
            Channel::Dhw => "dhw",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A uniform-interval energy series with an explicit missing mask.
///
/// Invariants enforced on construction:
/// - `values.len() == missing.len()`
/// - every non-missing value is finite and non-negative
/// - missing slots hold `0.0` so blind sums stay finite
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeteredSeries {
    pub channel: Channel,
    pub start: DateTime<Utc>,
    pub resolution: Resolution,
    values: Vec<f64>,
    missing: Vec<bool>,
}

impl MeteredSeries {
    pub fn new(
        channel: Channel,
        start: DateTime<Utc>,
        resolution: Resolution,
        mut values: Vec<f64>,
        missing: Vec<bool>,
    ) -> Result<Self> {
        if values.len() != missing.len() {
            return Err(Error::SeriesInvariant(format!(
                "values/missing length mismatch: {} vs {}",
                values.len(),
                missing.len()
            )));
        }
        for (i, (v, m)) in values.iter_mut().zip(&missing).enumerate() {
            if *m {
                *v = 0.0;
            } else if !v.is_finite() || *v < 0.0 {
                return Err(Error::SeriesInvariant(format!(
                    "value at index {i} is {v}; energies must be finite and non-negative"
                )));
            }
        }
        Ok(MeteredSeries {
            channel,
            start,
            resolution,
            values,
            missing,
        })
    }

    /// A fully observed series.
    pub fn complete(
        channel: Channel,
        start: DateTime<Utc>,
        resolution: Resolution,
        values: Vec<f64>,
    ) -> Result<Self> {
        let missing = vec![false; values.len()];
        MeteredSeries::new(channel, start, resolution, values, missing)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn missing(&self) -> &[bool] {
        &self.missing
    }

    pub fn observed_count(&self) -> usize {
        self.missing.iter().filter(|&&m| !m).count()
    }

    pub fn is_complete(&self) -> bool {
        self.missing.iter().all(|&m| !m)
    }

    /// Start of interval `i`. Valid for `i == len()` too (series end).
    pub fn timestamp_at(&self, i: usize) -> DateTime<Utc> {
        timestamp_at(self.start, self.resolution, i)
    }

    /// Reads a `timestamp,value` CSV. Timestamps are RFC 3339 UTC, an empty
    /// value field marks a gap, and the resolution is inferred from the first
    /// two rows, then every interval is checked against it.
    pub fn read_csv(path: &Path, channel: Channel) -> Result<Self> {
        let name = path.display().to_string();
        let err = |line: usize, msg: String| Error::Csv {
            path: name.clone(),
            line,
            msg,
        };
        let file = std::fs::File::open(path)?;
        let mut lines = BufReader::new(file).lines().enumerate();
        match lines.next() {
            Some((_, Ok(h))) if h.trim_end() == "timestamp,value" => {}
            Some((_, Ok(h))) => return Err(err(1, format!("expected header timestamp,value, got {h:?}"))),
            Some((_, Err(e))) => return Err(e.into()),
            None => return Err(err(1, "empty file".into())),
        }
        let mut stamps: Vec<DateTime<Utc>> = Vec::new();
        let mut values = Vec::new();
        let mut missing = Vec::new();
        for (idx, line) in lines {
            let line = line?;
            let row = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let (ts, val) = line
                .split_once(',')
                .ok_or_else(|| err(row, "expected two columns".into()))?;
            let ts = DateTime::parse_from_rfc3339(ts)
                .map_err(|e| err(row, format!("bad timestamp {ts:?}: {e}")))?
                .with_timezone(&Utc);
            stamps.push(ts);
            let val = val.trim();
            if val.is_empty() {
                values.push(0.0);
                missing.push(true);
            } else {
                let v: f64 = val
                    .parse()
                    .map_err(|e| err(row, format!("bad value {val:?}: {e}")))?;
                values.push(v);
                missing.push(false);
            }
        }
        if stamps.len() < 2 {
            return Err(err(0, format!("need at least 2 rows, got {}", stamps.len())));
        }
        let resolution = infer_resolution(stamps[0], stamps[1])
            .ok_or_else(|| err(3, format!("unsupported interval {} .. {}", stamps[0], stamps[1])))?;
        for (i, ts) in stamps.iter().enumerate() {
            let expect = timestamp_at(stamps[0], resolution, i);
            if *ts != expect {
                return Err(err(
                    i + 2,
                    format!("irregular interval: expected {expect}, got {ts}"),
                ));
            }
        }
        MeteredSeries::new(channel, stamps[0], resolution, values, missing)
            .map_err(|e| err(0, e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "timestamp,value")?;
        for i in 0..self.len() {
            let ts = self.timestamp_at(i).format("%Y-%m-%dT%H:%M:%SZ");
            if self.missing[i] {
                writeln!(w, "{ts},")?;
            } else {
                writeln!(w, "{ts},{}", self.values[i])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn timestamp_at(start: DateTime<Utc>, resolution: Resolution, i: usize) -> DateTime<Utc> {
    match resolution.step_seconds() {
        Some(s) => start + chrono::Duration::seconds(s * i as i64),
        None => start
            .checked_add_months(Months::new(i as u32))
            .expect("timestamp overflow"),
    }
}

fn infer_resolution(t0: DateTime<Utc>, t1: DateTime<Utc>) -> Option<Resolution> {
    let dt = (t1 - t0).num_seconds();
    for r in Resolution::ALL {
        match r.step_seconds() {
            Some(s) if s == dt => return Some(r),
            _ => {}
        }
    }
    if t0.checked_add_months(Months::new(1)) == Some(t1) {
        return Some(Resolution::Monthly);
    }
    None
}

/// Sums interval energies into a coarser resolution. The output starts where
/// the input starts; an output interval is missing iff any covered input is.
/// A trailing partial interval is kept (it sums whatever the input covers),
/// which preserves energy conservation for fully observed series.
///
/// Refuses to disaggregate, and refuses a start that does not sit on a
/// boundary of the target grid (monthly boundaries are counted from the
/// series start, so any start works there).
pub fn aggregate(series: &MeteredSeries, target: Resolution) -> Result<MeteredSeries> {
    if target == series.resolution {
        return Ok(series.clone());
    }
    if target < series.resolution {
        return Err(Error::DisaggregationRefused {
            have: series.resolution,
            want: target,
        });
    }
    if let Some(step) = target.step_seconds() {
        if series.start.timestamp().rem_euclid(step) != 0 {
            return Err(Error::MisalignedStart {
                start: series.start.to_rfc3339(),
                target,
            });
        }
    }
    let src_step = series
        .resolution
        .step_seconds()
        .expect("source finer than target has a fixed step");
    let mut values = Vec::new();
    let mut missing = Vec::new();
    let mut push_range = |a: usize, b: usize| {
        let miss = series.missing[a..b].iter().any(|&m| m);
        let v = if miss {
            0.0
        } else {
            series.values[a..b].iter().sum()
        };
        values.push(v);
        missing.push(miss);
    };
    match target.step_seconds() {
        Some(t) => {
            let ratio = (t / src_step) as usize;
            let mut a = 0;
            while a < series.len() {
                push_range(a, (a + ratio).min(series.len()));
                a += ratio;
            }
        }
        None => {
            let mut begin = 0usize;
            let mut month = 1u32;
            while begin < series.len() {
                let boundary = series
                    .start
                    .checked_add_months(Months::new(month))
                    .expect("timestamp overflow");
                let end = ((boundary - series.start).num_seconds() / src_step) as usize;
                push_range(begin, end.min(series.len()));
                begin = end;
                month += 1;
            }
        }
    }
    MeteredSeries::new(series.channel, series.start, target, values, missing)
}

/// Bridges interior gaps of total duration at most `max_gap_seconds` by
/// linear interpolation between the bounding observed values. Leading and
/// trailing gaps have only one bound, so they stay missing.
pub fn infill_linear(series: &MeteredSeries, max_gap_seconds: i64) -> Result<MeteredSeries> {
    let observed: Vec<usize> = (0..series.len()).filter(|&i| !series.missing[i]).collect();
    if observed.len() < 2 {
        return Err(Error::TooFewObserved {
            found: observed.len(),
        });
    }
    let mut out = series.clone();
    for w in observed.windows(2) {
        let (i, j) = (w[0], w[1]);
        if j == i + 1 {
            continue;
        }
        // Duration of the missing run: it covers [t(i+1), t(j)).
        let gap = (series.timestamp_at(j) - series.timestamp_at(i + 1)).num_seconds();
        if gap > max_gap_seconds {
            continue;
        }
        let (vi, vj) = (series.values[i], series.values[j]);
        for k in i + 1..j {
            let frac = (k - i) as f64 / (j - i) as f64;
            out.values[k] = vi + (vj - vi) * frac;
            out.missing[k] = false;
        }
    }
    Ok(out)
}

/// Measurement/simulation pair restricted to observed indices.
#[derive(Debug, Clone)]
pub struct AlignedPair {
    pub channel: Channel,
    pub resolution: Resolution,
    pub measured: Vec<f64>,
    pub simulated: Vec<f64>,
}

impl AlignedPair {
    pub fn count(&self) -> usize {
        self.measured.len()
    }
}

/// Pairs a measured and a simulated series index by index, dropping every
/// index where the measurement is missing. Metadata (channel, resolution,
/// start, length) must match exactly; the simulated series must be observed
/// wherever the measurement is.
pub fn align(measured: &MeteredSeries, simulated: &MeteredSeries) -> Result<AlignedPair> {
    if measured.channel != simulated.channel {
        return Err(Error::MetadataMismatch(format!(
            "channel {} vs {}",
            measured.channel, simulated.channel
        )));
    }
    if measured.resolution != simulated.resolution {
        return Err(Error::MetadataMismatch(format!(
            "resolution {} vs {}",
            measured.resolution, simulated.resolution
        )));
    }
    if measured.start != simulated.start {
        return Err(Error::MetadataMismatch(format!(
            "start {} vs {}",
            measured.start, simulated.start
        )));
    }
    if measured.len() != simulated.len() {
        return Err(Error::MetadataMismatch(format!(
            "length {} vs {}",
            measured.len(),
            simulated.len()
        )));
    }
    let mut m = Vec::new();
    let mut s = Vec::new();
    for i in 0..measured.len() {
        if measured.missing[i] {
            continue;
        }
        if simulated.missing[i] {
            return Err(Error::SimulatedGap { index: i });
        }
        m.push(measured.values[i]);
        s.push(simulated.values[i]);
    }
    if m.is_empty() {
        return Err(Error::EmptyAlignment);
    }
    Ok(AlignedPair {
        channel: measured.channel,
        resolution: measured.resolution,
        measured: m,
        simulated: s,
    })
}

/// A sub-daily series folded into one row per calendar day.
#[derive(Debug, Clone)]
pub struct DailyReshape {
    pub resolution: Resolution,
    pub steps_per_day: usize,
    pub dates: Vec<NaiveDate>,
    /// One row per day; missing slots hold NaN.
    pub rows: Vec<Vec<f64>>,
    /// False when the day contains any missing step.
    pub complete: Vec<bool>,
}

/// Folds a series finer than `Daily` into day rows. The series must begin at
/// a UTC day boundary and span whole days. Days containing missing steps are
/// kept (with NaN holes) but flagged incomplete so clustering can skip them.
pub fn reshape_daily(series: &MeteredSeries) -> Result<DailyReshape> {
    if series.resolution >= Resolution::Daily {
        return Err(Error::ResolutionTooCoarse {
            op: "reshape_daily",
            limit: Resolution::Daily,
            got: series.resolution,
        });
    }
    let steps_per_day = series.resolution.steps_per_day().expect("sub-daily");
    if series.start.timestamp().rem_euclid(86_400) != 0 {
        return Err(Error::MisalignedStart {
            start: series.start.to_rfc3339(),
            target: Resolution::Daily,
        });
    }
    if series.is_empty() || series.len() % steps_per_day != 0 {
        return Err(Error::PartialDays {
            len: series.len(),
            steps_per_day,
        });
    }
    let n_days = series.len() / steps_per_day;
    let mut rows = Vec::with_capacity(n_days);
    let mut complete = Vec::with_capacity(n_days);
    let mut dates = Vec::with_capacity(n_days);
    for d in 0..n_days {
        let a = d * steps_per_day;
        let row: Vec<f64> = (a..a + steps_per_day)
            .map(|i| {
                if series.missing[i] {
                    f64::NAN
                } else {
                    series.values[i]
                }
            })
            .collect();
        complete.push(row.iter().all(|v| v.is_finite()));
        rows.push(row);
        dates.push(series.timestamp_at(a).date_naive());
    }
    Ok(DailyReshape {
        resolution: series.resolution,
        steps_per_day,
        dates,
        rows,
        complete,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap()
    }

    fn series(resolution: Resolution, values: Vec<f64>) -> MeteredSeries {
        MeteredSeries::complete(Channel::Heating, t0(), resolution, values).unwrap()
    }

    /// Independent oracle: sum fixed-width chunks by hand.
    fn chunk_sums(values: &[f64], width: usize) -> Vec<f64> {
        values.chunks(width).map(|c| c.iter().sum()).collect()
    }

    #[test]
    fn hour6_aggregation_sums_blocks_of_six() {
        let hourly: Vec<f64> = (1..=24).map(f64::from).collect();
        let s = series(Resolution::Hourly, hourly.clone());
        let agg = aggregate(&s, Resolution::Hour6).unwrap();
        assert_eq!(agg.values(), chunk_sums(&hourly, 6).as_slice());
        assert_eq!(agg.values(), &[21.0, 57.0, 93.0, 129.0]);
        assert_eq!(agg.resolution, Resolution::Hour6);
        assert_eq!(agg.start, s.start);
    }

    #[test]
    fn aggregation_marks_output_missing_when_any_input_is() {
        let mut missing = vec![false; 24];
        missing[7] = true;
        let s = MeteredSeries::new(
            Channel::Heating,
            t0(),
            Resolution::Hourly,
            vec![1.0; 24],
            missing,
        )
        .unwrap();
        let agg = aggregate(&s, Resolution::Hour6).unwrap();
        assert_eq!(agg.missing(), &[false, true, false, false]);
        assert_eq!(agg.values()[0], 6.0);
    }

    #[test]
    fn aggregation_refuses_to_disaggregate() {
        let s = series(Resolution::Hourly, vec![1.0; 24]);
        let err = aggregate(&s, Resolution::Min15).unwrap_err();
        assert!(matches!(err, Error::DisaggregationRefused { .. }));
    }

    #[test]
    fn aggregation_refuses_misaligned_start() {
        let start = Utc.with_ymd_and_hms(2022, 1, 1, 0, 30, 0).unwrap();
        let s = MeteredSeries::complete(Channel::Heating, start, Resolution::Min1, vec![1.0; 120])
            .unwrap();
        let err = aggregate(&s, Resolution::Hourly).unwrap_err();
        assert!(matches!(err, Error::MisalignedStart { .. }));
    }

    #[test]
    fn aggregation_to_same_resolution_is_identity() {
        let s = series(Resolution::Min30, vec![1.5, 2.5, 3.5]);
        assert_eq!(aggregate(&s, Resolution::Min30).unwrap(), s);
    }

    #[test]
    fn monthly_aggregation_follows_the_calendar() {
        // 60 daily values of 1.0 from Jan 1 2022: Jan has 31 days, Feb has 28,
        // one day of March remains as a partial tail bucket.
        let s = series(Resolution::Daily, vec![1.0; 60]);
        let agg = aggregate(&s, Resolution::Monthly).unwrap();
        assert_eq!(agg.values(), &[31.0, 28.0, 1.0]);
    }

    #[test]
    fn monthly_boundaries_count_from_the_series_start() {
        let start = Utc.with_ymd_and_hms(2022, 1, 15, 0, 0, 0).unwrap();
        let s =
            MeteredSeries::complete(Channel::Heating, start, Resolution::Daily, vec![1.0; 45])
                .unwrap();
        let agg = aggregate(&s, Resolution::Monthly).unwrap();
        // Jan 15 .. Feb 15 is 31 days, the rest is a partial second month.
        assert_eq!(agg.values(), &[31.0, 14.0]);
    }

    #[test]
    fn aggregation_conserves_energy_on_randomized_series() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..500 {
            let from = Resolution::ALL[rng.gen_range(0..7)];
            let coarser: Vec<Resolution> = Resolution::ALL
                .into_iter()
                .filter(|r| r > &from)
                .collect();
            let to = coarser[rng.gen_range(0..coarser.len())];
            let len = rng.gen_range(1..500);
            let values: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..10.0)).collect();
            let s = MeteredSeries::complete(Channel::Cooling, t0(), from, values).unwrap();
            let agg = aggregate(&s, to).unwrap();
            let a: f64 = s.values().iter().sum();
            let b: f64 = agg.values().iter().sum();
            assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{from} -> {to}: {a} vs {b}");
        }
    }

    #[test]
    fn aggregation_composes() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        for _ in 0..200 {
            let len = rng.gen_range(1..3000);
            let values: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..5.0)).collect();
            let s = MeteredSeries::complete(Channel::Dhw, t0(), Resolution::Min5, values).unwrap();
            let via_hourly =
                aggregate(&aggregate(&s, Resolution::Hourly).unwrap(), Resolution::Daily).unwrap();
            let direct = aggregate(&s, Resolution::Daily).unwrap();
            assert_eq!(via_hourly.len(), direct.len());
            for (a, b) in via_hourly.values().iter().zip(direct.values()) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn infill_interpolates_interior_gap() {
        let s = MeteredSeries::new(
            Channel::Electricity,
            t0(),
            Resolution::Hourly,
            vec![0.0, 0.0, 0.0, 3.0],
            vec![false, true, true, false],
        )
        .unwrap();
        let filled = infill_linear(&s, MAX_GAP_SECONDS).unwrap();
        assert_eq!(filled.values(), &[0.0, 1.0, 2.0, 3.0]);
        assert!(filled.is_complete());
    }

    #[test]
    fn infill_respects_gap_cap() {
        // A 181-minute gap exceeds the three-hour default and stays open;
        // a 180-minute gap is exactly at the cap and is filled.
        for (gap_len, expect_filled) in [(181usize, false), (180usize, true)] {
            let n = gap_len + 2;
            let mut missing = vec![true; n];
            missing[0] = false;
            missing[n - 1] = false;
            let s = MeteredSeries::new(
                Channel::Heating,
                t0(),
                Resolution::Min1,
                vec![1.0; n],
                missing,
            )
            .unwrap();
            let filled = infill_linear(&s, MAX_GAP_SECONDS).unwrap();
            assert_eq!(filled.is_complete(), expect_filled, "gap of {gap_len} min");
        }
    }

    #[test]
    fn infill_leaves_leading_and_trailing_gaps() {
        let s = MeteredSeries::new(
            Channel::Heating,
            t0(),
            Resolution::Hourly,
            vec![0.0, 1.0, 0.0, 2.0, 0.0],
            vec![true, false, true, false, true],
        )
        .unwrap();
        let filled = infill_linear(&s, MAX_GAP_SECONDS).unwrap();
        assert_eq!(filled.missing(), &[true, false, false, false, true]);
        assert_eq!(filled.values()[2], 1.5);
    }

    #[test]
    fn infill_is_idempotent() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..100 {
            let n = rng.gen_range(4..200);
            let values: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..4.0)).collect();
            let missing: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
            let Ok(s) = MeteredSeries::new(Channel::Dhw, t0(), Resolution::Min15, values, missing)
            else {
                continue;
            };
            if s.observed_count() < 2 {
                continue;
            }
            let once = infill_linear(&s, MAX_GAP_SECONDS).unwrap();
            let twice = infill_linear(&once, MAX_GAP_SECONDS).unwrap();
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn infill_needs_two_observed_points() {
        let s = MeteredSeries::new(
            Channel::Heating,
            t0(),
            Resolution::Hourly,
            vec![1.0, 0.0, 0.0],
            vec![false, true, true],
        )
        .unwrap();
        assert!(matches!(
            infill_linear(&s, MAX_GAP_SECONDS),
            Err(Error::TooFewObserved { found: 1 })
        ));
    }

    #[test]
    fn align_drops_measurement_gaps_only() {
        let measured = MeteredSeries::new(
            Channel::Heating,
            t0(),
            Resolution::Hourly,
            vec![1.0, 0.0, 3.0],
            vec![false, true, false],
        )
        .unwrap();
        let simulated =
            MeteredSeries::complete(Channel::Heating, t0(), Resolution::Hourly, vec![4.0, 5.0, 6.0])
                .unwrap();
        let pair = align(&measured, &simulated).unwrap();
        assert_eq!(pair.count(), measured.observed_count());
        assert_eq!(pair.measured, vec![1.0, 3.0]);
        assert_eq!(pair.simulated, vec![4.0, 6.0]);
    }

    #[test]
    fn align_rejects_metadata_mismatch() {
        let a = series(Resolution::Hourly, vec![1.0; 3]);
        let b = MeteredSeries::complete(Channel::Heating, t0(), Resolution::Min30, vec![1.0; 3])
            .unwrap();
        assert!(matches!(align(&a, &b), Err(Error::MetadataMismatch(_))));
    }

    #[test]
    fn align_rejects_all_missing_measurement() {
        let measured = MeteredSeries::new(
            Channel::Heating,
            t0(),
            Resolution::Hourly,
            vec![0.0, 0.0],
            vec![true, true],
        )
        .unwrap();
        let simulated = series(Resolution::Hourly, vec![1.0, 2.0]);
        assert!(matches!(
            align(&measured, &simulated),
            Err(Error::EmptyAlignment)
        ));
    }

    #[test]
    fn reshape_folds_two_days_of_hourly_data() {
        let s = series(Resolution::Hourly, (0..48).map(f64::from).collect());
        let r = reshape_daily(&s).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert_eq!(r.steps_per_day, 24);
        assert_eq!(r.rows[1][0], 24.0);
        assert_eq!(
            r.dates,
            vec![
                NaiveDate::from_ymd_opt(2022, 1, 1).unwrap(),
                NaiveDate::from_ymd_opt(2022, 1, 2).unwrap()
            ]
        );
        assert!(r.complete.iter().all(|&c| c));
    }

    #[test]
    fn reshape_flags_days_with_gaps() {
        let mut missing = vec![false; 48];
        missing[30] = true;
        let s =
            MeteredSeries::new(Channel::Heating, t0(), Resolution::Hourly, vec![1.0; 48], missing)
                .unwrap();
        let r = reshape_daily(&s).unwrap();
        assert_eq!(r.complete, vec![true, false]);
        assert!(r.rows[1][6].is_nan());
    }

    #[test]
    fn reshape_rejects_partial_days_and_coarse_input() {
        let s = series(Resolution::Hourly, vec![1.0; 30]);
        assert!(matches!(reshape_daily(&s), Err(Error::PartialDays { .. })));
        let s = series(Resolution::Daily, vec![1.0; 3]);
        assert!(matches!(
            reshape_daily(&s),
            Err(Error::ResolutionTooCoarse { .. })
        ));
    }

    #[test]
    fn csv_round_trip_preserves_values_and_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("heating.csv");
        let s = MeteredSeries::new(
            Channel::Heating,
            t0(),
            Resolution::Min15,
            vec![0.25, 0.0, 1.0 / 3.0, 4.5e-3],
            vec![false, true, false, false],
        )
        .unwrap();
        s.write_csv(&path).unwrap();
        let back = MeteredSeries::read_csv(&path, Channel::Heating).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn csv_reader_validates_layout() {
        let dir = tempfile::tempdir().unwrap();
        let bad_header = dir.path().join("a.csv");
        std::fs::write(&bad_header, "time,val\n2022-01-01T00:00:00Z,1\n").unwrap();
        assert!(matches!(
            MeteredSeries::read_csv(&bad_header, Channel::Heating),
            Err(Error::Csv { .. })
        ));

        let irregular = dir.path().join("b.csv");
        std::fs::write(
            &irregular,
            "timestamp,value\n2022-01-01T00:00:00Z,1\n2022-01-01T01:00:00Z,1\n2022-01-01T03:00:00Z,1\n",
        )
        .unwrap();
        assert!(matches!(
            MeteredSeries::read_csv(&irregular, Channel::Heating),
            Err(Error::Csv { .. })
        ));

        let negative = dir.path().join("c.csv");
        std::fs::write(
            &negative,
            "timestamp,value\n2022-01-01T00:00:00Z,-1\n2022-01-01T01:00:00Z,1\n",
        )
        .unwrap();
        assert!(MeteredSeries::read_csv(&negative, Channel::Heating).is_err());
    }

    #[test]
    fn monthly_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("monthly.csv");
        let s = series(Resolution::Monthly, vec![100.0, 90.0, 110.0]);
        s.write_csv(&path).unwrap();
        let back = MeteredSeries::read_csv(&path, Channel::Heating).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.resolution, Resolution::Monthly);
    }
}
