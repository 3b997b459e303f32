//! Deterministic synthetic-site generator: weather for a pair of stations,
//! the true occupant behavior, and noisy gapped meter readings produced by
//! running the built-in model with a known parameter vector. The bundled
//! dataset this produces is the desk-scale stand-in for real metered data,
//! and because the generator lives inside the search family, calibration
//! quality against it has a known answer.

use chrono::{DateTime, Datelike, NaiveDate, TimeZone, Timelike, Utc};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::{RoleSchedule, ScheduleSet};
use crate::sampler::{ParameterSpace, ParameterVector};
use crate::series::{Channel, MeteredSeries, Resolution};
use crate::simulator::{synthesize_ground_truth, GapSpec, ZoneModel};
use crate::util::mix_seed;
use crate::weather::{solar_geometry, Site, WeatherField, WeatherSeries, FIELD_COUNT};

/// Everything the generator needs; the defaults describe the full-year
/// bundled dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub site: Site,
    pub start_date: NaiveDate,
    pub n_days: usize,
    /// Sigma of the mean-one lognormal measurement noise.
    pub noise_level: f64,
    /// Inject missing runs into the primary weather station.
    pub weather_gaps: bool,
    pub measurement_gaps: Vec<GapSpec>,
    /// One value per calibrated variable; `None` means the built-in truth.
    pub true_params: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            site: Site {
                latitude_deg: 47.4,
                longitude_deg: 8.3,
            },
            start_date: NaiveDate::from_ymd_opt(2022, 1, 1).unwrap(),
            n_days: 365,
            noise_level: 0.05,
            weather_gaps: true,
            measurement_gaps: vec![
                // A fillable 2 h electricity gap, a fillable 90 min DHW gap,
                // a 5 h heating gap that stays missing, and a fillable
                // cooling gap in summer.
                GapSpec {
                    channel: Channel::Electricity,
                    start_index: 3 * 1440 + 600,
                    len: 120,
                },
                GapSpec {
                    channel: Channel::Dhw,
                    start_index: 10 * 1440 + 840,
                    len: 90,
                },
                GapSpec {
                    channel: Channel::Heating,
                    start_index: 20 * 1440 + 30,
                    len: 300,
                },
                GapSpec {
                    channel: Channel::Cooling,
                    start_index: 200 * 1440 + 720,
                    len: 100,
                },
            ],
            true_params: None,
            seed: 42,
        }
    }
}

/// The parameter vector the bundled dataset is generated with. Every value
/// sits inside its plausible range, away from the edges.
pub fn default_true_params() -> ParameterVector {
    ParameterVector(vec![
        1.05,   // occupant gain density W/m2
        27.0,   // appliance power density W/m2
        3.2,    // lighting power density W/m2
        28.0,   // appliance radiant fraction %
        42.0,   // lighting radiant fraction %
        5.5e-4, // ventilation rate m3/s/m2
        6.5e-5, // infiltration rate m3/s/m2
        20.5,   // heating set-point degC
        25.5,   // cooling set-point degC
        0.72,   // glass dirt factor
        0.08,   // wall insulation m
        0.28,   // floor/ceiling insulation m
        9.0e-4, // window insulation m
        4.2e-5, // dhw peak flow m3/s
    ])
}

/// Weather as the building experienced it (`actual`), the gappy on-site
/// record (`primary`) and the complete nearby-station record (`secondary`)
/// whose values differ slightly from the actual ones.
#[derive(Debug, Clone)]
pub struct SynthWeather {
    pub actual: WeatherSeries,
    pub primary: WeatherSeries,
    pub secondary: WeatherSeries,
}

/// AR(1) noise at hourly nodes, linearly interpolated to minutes. Unit
/// stationary variance; smooth at the minute scale.
fn smooth_minutes(n_min: usize, rho: f64, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let n_nodes = n_min / 60 + 2;
    let innovation = (1.0 - rho * rho).sqrt();
    let mut nodes = Vec::with_capacity(n_nodes);
    let mut x: f64 = rng.sample(rand_distr::StandardNormal);
    nodes.push(x);
    for _ in 1..n_nodes {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        x = rho * x + innovation * z;
        nodes.push(x);
    }
    (0..n_min)
        .map(|m| {
            let h = m / 60;
            let f = (m % 60) as f64 / 60.0;
            nodes[h] * (1.0 - f) + nodes[h + 1] * f
        })
        .collect()
}

fn gen_station(
    site: Site,
    start: DateTime<Utc>,
    n_min: usize,
    bias_c: f64,
    seed: u64,
) -> Result<WeatherSeries> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let drift = smooth_minutes(n_min, 0.95, &mut rng);
    let cloud_w = smooth_minutes(n_min, 0.98, &mut rng);
    let rh_w = smooth_minutes(n_min, 0.9, &mut rng);
    let wind_w = smooth_minutes(n_min, 0.9, &mut rng);
    let dir_w = smooth_minutes(n_min, 0.97, &mut rng);
    let press_w = smooth_minutes(n_min, 0.99, &mut rng);

    let mut fields: [Vec<f64>; FIELD_COUNT] =
        std::array::from_fn(|_| Vec::with_capacity(n_min));
    for i in 0..n_min {
        let ts = start + chrono::Duration::minutes(i as i64);
        let doy = ts.ordinal() as f64;
        let minute_of_day = (ts.hour() * 60 + ts.minute()) as f64;
        let seasonal = 11.0 + 9.0 * (std::f64::consts::TAU * (doy - 112.0) / 365.25).sin();
        let diurnal = 4.5 * (std::f64::consts::TAU * (minute_of_day - 570.0) / 1440.0).sin();
        let t = seasonal + diurnal + 2.0 * drift[i] + bias_c;

        let geo = solar_geometry(&site, ts);
        let cloud = 0.6 + 0.4 * cloud_w[i].tanh();
        let ghi = 0.75 * geo.extraterrestrial_horizontal * cloud;

        let rh = (62.0 - 2.2 * diurnal + 10.0 * rh_w[i].tanh()).clamp(15.0, 100.0);
        let dew = t - (100.0 - rh) / 5.0;
        let pressure = 96.2 + 0.5 * press_w[i].tanh();
        let wind = 2.2 * (1.0 + wind_w[i].tanh()) + 0.1;
        let wdir = 180.0 + 120.0 * dir_w[i].tanh();

        fields[WeatherField::DryBulb as usize].push(t);
        fields[WeatherField::DewPoint as usize].push(dew);
        fields[WeatherField::RelHumidity as usize].push(rh);
        fields[WeatherField::Pressure as usize].push(pressure);
        fields[WeatherField::WindSpeed as usize].push(wind);
        fields[WeatherField::WindDir as usize].push(wdir);
        fields[WeatherField::Ghi as usize].push(ghi);
    }
    WeatherSeries::new(site, start, Resolution::Min1, fields)
}

/// Knocks a few multi-hour runs out of the dry bulb and irradiance records.
fn with_gaps(w: &WeatherSeries, seed: u64) -> Result<WeatherSeries> {
    let n = w.len();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut fields: [Vec<f64>; FIELD_COUNT] =
        std::array::from_fn(|f| w.field(WeatherField::ALL[f]).to_vec());
    let runs = [
        (WeatherField::DryBulb, 0.10..0.20, 120usize),
        (WeatherField::Ghi, 0.45..0.55, 90),
        (WeatherField::DryBulb, 0.70..0.80, 45),
    ];
    for (field, window, len) in runs {
        let lo = (window.start * n as f64) as usize;
        let hi = ((window.end * n as f64) as usize).min(n.saturating_sub(len));
        if lo >= hi {
            continue; // span too short for this run
        }
        let at = rng.gen_range(lo..hi);
        for v in &mut fields[field as usize][at..at + len] {
            *v = f64::NAN;
        }
    }
    WeatherSeries::new(w.site, w.start, w.resolution, fields)
}

pub fn generate_weather(
    site: Site,
    start_date: NaiveDate,
    n_days: usize,
    inject_gaps: bool,
    seed: u64,
) -> Result<SynthWeather> {
    if n_days == 0 {
        return Err(Error::Config("synthetic span must cover at least one day".into()));
    }
    let start = Utc.from_utc_datetime(&start_date.and_time(chrono::NaiveTime::MIN));
    let n_min = n_days * 1440;
    let actual = gen_station(site, start, n_min, 0.0, mix_seed(seed, 1))?;
    let secondary = gen_station(site, start, n_min, 0.3, mix_seed(seed, 2))?;
    let primary = if inject_gaps {
        with_gaps(&actual, mix_seed(seed, 3))?
    } else {
        actual.clone()
    };
    Ok(SynthWeather {
        actual,
        primary,
        secondary,
    })
}

fn day_profile(base: f64, segments: &[(usize, usize, f64)]) -> Vec<f64> {
    let mut p = vec![base; 1440];
    for &(s, e, v) in segments {
        for slot in &mut p[s..e] {
            *slot = v;
        }
    }
    p
}

/// Minute-resolution behavior with two day types (weekday, weekend) and
/// deliberately sharp sub-hourly events: a coarse calibration cannot see
/// them, which is exactly the effect the experiments measure. Occupancy,
/// lighting and appliances share one shape; hot water has its own draws.
pub fn true_schedule_set(start_date: NaiveDate, n_days: usize) -> ScheduleSet {
    let shared_weekday = day_profile(
        0.18,
        &[
            (390, 435, 0.95),  // 06:30 wake spike
            (435, 480, 0.55),
            (480, 1050, 0.25), // working hours
            (1050, 1080, 0.6),
            (1080, 1170, 0.85),
            (1170, 1200, 1.0), // dinner peak
            (1200, 1305, 0.8),
            (1305, 1380, 0.5),
            (1380, 1440, 0.25),
        ],
    );
    let shared_weekend = day_profile(
        0.22,
        &[
            (465, 540, 0.7),
            (540, 720, 0.85),
            (720, 765, 1.0), // lunch peak
            (765, 990, 0.75),
            (990, 1080, 0.6),
            (1080, 1230, 0.9),
            (1230, 1335, 0.7),
            (1335, 1440, 0.35),
        ],
    );
    let dhw_weekday = day_profile(
        0.0,
        &[
            (405, 430, 1.0), // morning shower
            (470, 485, 0.5),
            (750, 770, 0.3),
            (1155, 1185, 0.6),
            (1320, 1340, 0.35),
        ],
    );
    let dhw_weekend = day_profile(
        0.0,
        &[
            (495, 525, 0.9),
            (540, 560, 0.4),
            (780, 800, 0.35),
            (1185, 1220, 0.65),
            (1350, 1370, 0.4),
        ],
    );

    let assignment: Vec<usize> = (0..n_days)
        .map(|d| {
            let date = start_date + chrono::Days::new(d as u64);
            usize::from(matches!(
                date.weekday(),
                chrono::Weekday::Sat | chrono::Weekday::Sun
            ))
        })
        .collect();
    let two = |weekday: &Vec<f64>, weekend: &Vec<f64>| RoleSchedule {
        profiles: vec![weekday.clone(), weekend.clone()],
        assignment: assignment.clone(),
        chosen_k: 2,
        silhouette: 0.0,
    };
    let shared = two(&shared_weekday, &shared_weekend);
    ScheduleSet::new(
        Resolution::Min1,
        start_date,
        [
            shared.clone(),
            shared.clone(),
            shared,
            two(&dhw_weekday, &dhw_weekend),
            RoleSchedule {
                profiles: vec![vec![1.0; 1440]],
                assignment: vec![0; n_days],
                chosen_k: 1,
                silhouette: 0.0,
            },
        ],
    )
    .expect("built-in truth profiles are valid")
}

/// The complete synthetic site.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub weather: SynthWeather,
    pub schedules: ScheduleSet,
    pub true_params: ParameterVector,
    /// Min1 noisy, gapped meter readings: heating, cooling, electricity, DHW.
    pub measurements: [MeteredSeries; 4],
}

pub fn generate_dataset(spec: &SynthSpec) -> Result<SynthDataset> {
    let true_params = match &spec.true_params {
        Some(v) => ParameterVector(v.clone()),
        None => default_true_params(),
    };
    let space = ParameterSpace::standard();
    space.check(&true_params)?;
    if !(spec.noise_level >= 0.0 && spec.noise_level.is_finite()) {
        return Err(Error::Config(format!(
            "noise_level must be a finite non-negative sigma, got {}",
            spec.noise_level
        )));
    }

    let weather = generate_weather(
        spec.site,
        spec.start_date,
        spec.n_days,
        spec.weather_gaps,
        spec.seed,
    )?;
    let schedules = true_schedule_set(spec.start_date, spec.n_days);
    let model = ZoneModel::standard();
    let measurements = synthesize_ground_truth(
        &model,
        &true_params,
        &weather.actual,
        &schedules,
        spec.noise_level,
        &spec.measurement_gaps,
        mix_seed(spec.seed, 4),
    )?;
    Ok(SynthDataset {
        weather,
        schedules,
        true_params,
        measurements,
    })
}
