//! The built-in building model: a single lumped thermal zone with ideal
//! heating/cooling loads, driven by weather and the mined schedules, exposing
//! exactly the calibrated parameter vector. It stands in for an external
//! simulation engine behind the [`Simulator`] trait.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::{Role, ScheduleSet};
use crate::sampler::{ParamId, ParameterSpace, ParameterVector};
use crate::series::{aggregate, Channel, MeteredSeries, Resolution};
use crate::util::mix_seed;
use crate::weather::WeatherSeries;

pub const WATER_DENSITY: f64 = 1000.0;
pub const WATER_HEAT_CAPACITY: f64 = 4186.0;

/// Time constant of the first-order filter that delays the radiant share of
/// internal gains (surfaces absorb and re-release them).
pub const RADIANT_TIME_CONSTANT_S: f64 = 7200.0;

/// Integration sub-steps never exceed this, whatever the output timestep.
const MAX_SUBSTEP_S: i64 = 360;

/// A free-float prediction beyond this magnitude means the explicit
/// integration has blown up.
const ZONE_TEMP_LIMIT_C: f64 = 100.0;

const J_PER_KWH: f64 = 3.6e6;

/// Fixed "known" geometry and construction of the building; the calibrated
/// variables perturb it (insulation thicknesses change the resistances,
/// densities scale the gains).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildingSpec {
    pub floor_area_m2: f64,
    pub glazed_area_m2: f64,
    pub wall_area_m2: f64,
    pub floor_ceiling_area_m2: f64,
    pub window_area_m2: f64,
    pub capacitance_j_per_k: f64,
    /// Insulation conductivities, W/(m K).
    pub wall_conductivity: f64,
    pub floor_ceiling_conductivity: f64,
    pub window_conductivity: f64,
    /// Construction resistance before insulation, m2 K/W.
    pub wall_base_r: f64,
    pub floor_ceiling_base_r: f64,
    pub window_base_r: f64,
    /// Fraction of incident irradiance transmitted by clean glazing.
    pub solar_transmittance: f64,
    /// Cold-inlet to tap temperature rise, K.
    pub dhw_delta_t_k: f64,
    pub air_density: f64,
    pub air_heat_capacity: f64,
    pub initial_temp_c: f64,
}

impl Default for BuildingSpec {
    fn default() -> Self {
        BuildingSpec {
            floor_area_m2: 80.0,
            glazed_area_m2: 15.0,
            wall_area_m2: 85.0,
            floor_ceiling_area_m2: 160.0,
            window_area_m2: 15.0,
            capacitance_j_per_k: 8.0e6,
            wall_conductivity: 0.035,
            floor_ceiling_conductivity: 0.04,
            window_conductivity: 0.025,
            wall_base_r: 0.5,
            floor_ceiling_base_r: 0.8,
            window_base_r: 0.15,
            solar_transmittance: 0.6,
            dhw_delta_t_k: 35.0,
            air_density: 1.2,
            air_heat_capacity: 1005.0,
            initial_temp_c: 21.0,
        }
    }
}

impl BuildingSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("floor_area_m2", self.floor_area_m2),
            ("glazed_area_m2", self.glazed_area_m2),
            ("wall_area_m2", self.wall_area_m2),
            ("floor_ceiling_area_m2", self.floor_ceiling_area_m2),
            ("window_area_m2", self.window_area_m2),
            ("capacitance_j_per_k", self.capacitance_j_per_k),
            ("wall_conductivity", self.wall_conductivity),
            ("floor_ceiling_conductivity", self.floor_ceiling_conductivity),
            ("window_conductivity", self.window_conductivity),
            ("wall_base_r", self.wall_base_r),
            ("floor_ceiling_base_r", self.floor_ceiling_base_r),
            ("window_base_r", self.window_base_r),
            ("dhw_delta_t_k", self.dhw_delta_t_k),
            ("air_density", self.air_density),
            ("air_heat_capacity", self.air_heat_capacity),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("building {name} must be > 0, got {v}")));
            }
        }
        if !(self.solar_transmittance > 0.0 && self.solar_transmittance <= 1.0) {
            return Err(Error::Config(format!(
                "building solar_transmittance must lie in (0, 1], got {}",
                self.solar_transmittance
            )));
        }
        if !self.initial_temp_c.is_finite() {
            return Err(Error::Config("building initial_temp_c must be finite".into()));
        }
        Ok(())
    }

    /// Envelope conductance UA, W/K, for given insulation thicknesses.
    pub fn envelope_ua(&self, wall_ins: f64, floor_ins: f64, window_ins: f64) -> f64 {
        self.wall_area_m2 / (self.wall_base_r + wall_ins / self.wall_conductivity)
            + self.floor_ceiling_area_m2
                / (self.floor_ceiling_base_r + floor_ins / self.floor_ceiling_conductivity)
            + self.window_area_m2 / (self.window_base_r + window_ins / self.window_conductivity)
    }
}

/// Four simulated channels at the simulation timestep, plus the zone
/// temperature trace for diagnostics. Energies are kWh per step, never
/// negative; at the native timestep a step is either heating or cooling,
/// never both.
#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub heating: MeteredSeries,
    pub cooling: MeteredSeries,
    pub electricity: MeteredSeries,
    pub dhw: MeteredSeries,
    pub zone_temp_c: Vec<f64>,
}

impl SimulationOutput {
    pub fn channel(&self, channel: Channel) -> &MeteredSeries {
        match channel {
            Channel::Heating => &self.heating,
            Channel::Cooling => &self.cooling,
            Channel::Electricity => &self.electricity,
            Channel::Dhw => &self.dhw,
        }
    }
}

/// The black-box contract: identical inputs must yield identical outputs,
/// and the timestep is never coarser than hourly (coarser resolutions are
/// aggregated from hourly runs, not simulated).
///
/// This trait is the extension point for wiring in an external simulation
/// engine: an adapter would serialize the parameter vector, invoke the
/// external process, and read the four channel CSVs back.
pub trait Simulator: Sync {
    fn run(
        &self,
        params: &ParameterVector,
        weather: &WeatherSeries,
        schedules: &ScheduleSet,
        timestep: Resolution,
    ) -> Result<SimulationOutput>;
}

/// The built-in single-zone RC model.
///
/// Zone balance per sub-step: `C dT/dt = UA (T_out - T) + H (T_out - T)
/// + Q_solar + Q_internal + Q_ideal`, where the ideal load clamps the zone
/// into the set-point band and meters as heating or cooling energy.
#[derive(Debug, Clone)]
pub struct ZoneModel {
    pub building: BuildingSpec,
    pub space: ParameterSpace,
}

impl ZoneModel {
    pub fn new(building: BuildingSpec, space: ParameterSpace) -> Result<Self> {
        building.validate()?;
        if space.dims() != ParamId::ALL.len() {
            return Err(Error::DimensionMismatch {
                expected: ParamId::ALL.len(),
                got: space.dims(),
            });
        }
        Ok(ZoneModel { building, space })
    }

    pub fn standard() -> Self {
        ZoneModel {
            building: BuildingSpec::default(),
            space: ParameterSpace::standard(),
        }
    }
}

impl Simulator for ZoneModel {
    fn run(
        &self,
        params: &ParameterVector,
        weather: &WeatherSeries,
        schedules: &ScheduleSet,
        timestep: Resolution,
    ) -> Result<SimulationOutput> {
        self.space.check(params)?;
        let heat_sp = params.get(ParamId::HeatingSetpoint);
        let cool_sp = params.get(ParamId::CoolingSetpoint);
        if heat_sp > cool_sp {
            return Err(Error::SetpointOrder {
                heat: heat_sp,
                cool: cool_sp,
            });
        }
        if weather.resolution != timestep {
            return Err(Error::MetadataMismatch(format!(
                "weather is {}, simulation timestep is {}",
                weather.resolution, timestep
            )));
        }
        if schedules.resolution != timestep {
            return Err(Error::MetadataMismatch(format!(
                "schedules are {}, simulation timestep is {}",
                schedules.resolution, timestep
            )));
        }
        if weather.start.time() != chrono::NaiveTime::MIN
            || weather.start.date_naive() != schedules.start_date
        {
            return Err(Error::MetadataMismatch(format!(
                "weather must start at midnight of the schedule start date {}, got {}",
                schedules.start_date, weather.start
            )));
        }
        let n_steps = weather.len();
        if n_steps == 0 {
            return Err(Error::SeriesInvariant("weather series is empty".into()));
        }

        let b = &self.building;
        let area = b.floor_area_m2;
        let ua = b.envelope_ua(
            params.get(ParamId::WallInsulation),
            params.get(ParamId::FloorCeilingInsulation),
            params.get(ParamId::WindowInsulation),
        );
        let occ_w = params.get(ParamId::OccupantGainDensity) * area;
        let appl_w = params.get(ParamId::AppliancePowerDensity) * area;
        let light_w = params.get(ParamId::LightingPowerDensity) * area;
        let rf_appl = params.get(ParamId::ApplianceRadiantFraction) / 100.0;
        let rf_light = params.get(ParamId::LightingRadiantFraction) / 100.0;
        let vent = params.get(ParamId::VentilationRate);
        let inf = params.get(ParamId::InfiltrationRate);
        let air_per_rate = area * b.air_density * b.air_heat_capacity;
        let solar_gain_per_wm2 =
            b.glazed_area_m2 * b.solar_transmittance * params.get(ParamId::GlassDirtFactor);
        let dhw_w_per_fraction = params.get(ParamId::DhwPeakFlow)
            * WATER_DENSITY
            * WATER_HEAT_CAPACITY
            * b.dhw_delta_t_k;

        let occ_f = schedules.step_values(Role::Occupancy, n_steps)?;
        let light_f = schedules.step_values(Role::Lighting, n_steps)?;
        let appl_f = schedules.step_values(Role::Appliances, n_steps)?;
        let dhw_f = schedules.step_values(Role::Dhw, n_steps)?;
        let inf_f = schedules.step_values(Role::Infiltration, n_steps)?;

        let step_s = timestep.step_seconds().expect("weather is sub-monthly");
        let n_sub = ((step_s + MAX_SUBSTEP_S - 1) / MAX_SUBSTEP_S) as usize;
        let dt = step_s as f64 / n_sub as f64;
        let c = b.capacitance_j_per_k;
        let alpha = dt / RADIANT_TIME_CONSTANT_S;

        let mut temp = b.initial_temp_c;
        let mut radiant_flux = 0.0f64; // W, filter state
        let mut heating = Vec::with_capacity(n_steps);
        let mut cooling = Vec::with_capacity(n_steps);
        let mut electricity = Vec::with_capacity(n_steps);
        let mut dhw = Vec::with_capacity(n_steps);
        let mut zone_temp_c = Vec::with_capacity(n_steps);

        let dry_bulb = weather.dry_bulb();
        let ghi = weather.ghi();
        for i in 0..n_steps {
            let t_out = dry_bulb[i];
            let g = ghi[i];
            if !t_out.is_finite() || !g.is_finite() {
                return Err(Error::SeriesInvariant(format!(
                    "simulation weather has a gap at {}",
                    weather.timestamp_at(i)
                )));
            }

            let light_power = light_w * light_f[i];
            let appl_power = appl_w * appl_f[i];
            let radiant_in = light_power * rf_light + appl_power * rf_appl;
            let convective = occ_w * occ_f[i]
                + light_power * (1.0 - rf_light)
                + appl_power * (1.0 - rf_appl)
                + g * solar_gain_per_wm2;
            let h = (vent + inf * inf_f[i]) * air_per_rate;

            let mut heat_j = 0.0f64;
            let mut cool_j = 0.0f64;
            for sub in 0..n_sub {
                // The radiant filter releases its post-update flux into this
                // sub-step's balance.
                radiant_flux += alpha * (radiant_in - radiant_flux);
                let gains = convective + radiant_flux;
                let free = temp + dt / c * ((ua + h) * (t_out - temp) + gains);
                if free.abs() > ZONE_TEMP_LIMIT_C {
                    return Err(Error::UnstableSimulation {
                        step: i * n_sub + sub,
                        temp: free,
                    });
                }
                if free < heat_sp {
                    heat_j += c * (heat_sp - free);
                    temp = heat_sp;
                } else if free > cool_sp {
                    cool_j += c * (free - cool_sp);
                    temp = cool_sp;
                } else {
                    temp = free;
                }
            }
            heating.push(heat_j / J_PER_KWH);
            cooling.push(cool_j / J_PER_KWH);
            electricity.push((light_power + appl_power) * step_s as f64 / J_PER_KWH);
            dhw.push(dhw_w_per_fraction * dhw_f[i] * step_s as f64 / J_PER_KWH);
            zone_temp_c.push(temp);
        }

        let series = |channel, values| MeteredSeries::complete(channel, weather.start, timestep, values);
        Ok(SimulationOutput {
            heating: series(Channel::Heating, heating)?,
            cooling: series(Channel::Cooling, cooling)?,
            electricity: series(Channel::Electricity, electricity)?,
            dhw: series(Channel::Dhw, dhw)?,
            zone_temp_c,
        })
    }
}

/// Aggregates an hourly simulation to one of the coarser reporting
/// resolutions. The zone temperature trace stays hourly; only energies
/// aggregate.
pub fn post_aggregate(out: &SimulationOutput, target: Resolution) -> Result<SimulationOutput> {
    if out.heating.resolution != Resolution::Hourly {
        return Err(Error::MetadataMismatch(format!(
            "post-aggregation starts from hourly simulations, got {}",
            out.heating.resolution
        )));
    }
    if target <= Resolution::Hourly {
        return Err(Error::MetadataMismatch(format!(
            "post-aggregation targets coarser-than-hourly resolutions, got {target}"
        )));
    }
    Ok(SimulationOutput {
        heating: aggregate(&out.heating, target)?,
        cooling: aggregate(&out.cooling, target)?,
        electricity: aggregate(&out.electricity, target)?,
        dhw: aggregate(&out.dhw, target)?,
        zone_temp_c: out.zone_temp_c.clone(),
    })
}

/// A missing run injected into a synthesized channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapSpec {
    pub channel: Channel,
    pub start_index: usize,
    pub len: usize,
}

/// Simulates the true building at 1-minute resolution and degrades the
/// output into plausible metered data: mean-one multiplicative lognormal
/// noise per step plus injected missing runs. `noise_level` 0 reproduces
/// the simulation bit for bit.
pub fn synthesize_ground_truth(
    sim: &dyn Simulator,
    true_params: &ParameterVector,
    weather: &WeatherSeries,
    schedules: &ScheduleSet,
    noise_level: f64,
    gaps: &[GapSpec],
    seed: u64,
) -> Result<[MeteredSeries; 4]> {
    if weather.resolution != Resolution::Min1 {
        return Err(Error::MetadataMismatch(format!(
            "ground truth is synthesized at min1, got {} weather",
            weather.resolution
        )));
    }
    let out = sim.run(true_params, weather, schedules, Resolution::Min1)?;
    let channels = [out.heating, out.cooling, out.electricity, out.dhw];
    let mut result = Vec::with_capacity(4);
    for (ci, series) in channels.into_iter().enumerate() {
        let n = series.len();
        let mut values = series.values().to_vec();
        if noise_level > 0.0 {
            let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(seed, ci as u64));
            let shift = noise_level * noise_level / 2.0;
            for v in &mut values {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                *v *= (noise_level * z - shift).exp();
            }
        }
        let mut missing = vec![false; n];
        for gap in gaps.iter().filter(|g| g.channel == series.channel) {
            if gap.start_index + gap.len > n {
                return Err(Error::Config(format!(
                    "gap {}..{} exceeds the {n}-step horizon",
                    gap.start_index,
                    gap.start_index + gap.len
                )));
            }
            for m in &mut missing[gap.start_index..gap.start_index + gap.len] {
                *m = true;
            }
        }
        result.push(MeteredSeries::new(
            series.channel,
            series.start,
            series.resolution,
            values,
            missing,
        )?);
    }
    Ok(result.try_into().expect("four channels"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::RoleSchedule;
    use crate::weather::Site;
    use chrono::{NaiveDate, TimeZone, Utc};

    fn test_site() -> Site {
        Site {
            latitude_deg: 47.4,
            longitude_deg: 8.3,
        }
    }

    /// Constant weather: fixed dry bulb and GHI for `n` steps.
    fn const_weather(resolution: Resolution, n: usize, t_out: f64, ghi: f64) -> WeatherSeries {
        let start = Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap();
        let mut fields: [Vec<f64>; 7] = Default::default();
        for (i, f) in fields.iter_mut().enumerate() {
            *f = match i {
                0 => vec![t_out; n],
                6 => vec![ghi; n],
                _ => vec![0.0; n],
            };
        }
        WeatherSeries::new(test_site(), start, resolution, fields).unwrap()
    }

    /// Schedule set with every role constant at the given fraction.
    fn const_schedules(resolution: Resolution, n_days: usize, level: f64) -> ScheduleSet {
        let spd = resolution.steps_per_day().unwrap();
        let role = |v: f64| RoleSchedule {
            profiles: vec![vec![v; spd]],
            assignment: vec![0; n_days],
            chosen_k: 1,
            silhouette: 0.0,
        };
        ScheduleSet::new(
            resolution,
            NaiveDate::from_ymd_opt(2022, 1, 1).unwrap(),
            [role(level), role(level), role(level), role(level), role(1.0)],
        )
        .unwrap()
    }

    /// Baseline parameter vector: mid-range everywhere except where a test
    /// overrides.
    fn base_params() -> ParameterVector {
        let space = ParameterSpace::standard();
        ParameterVector(space.defs().iter().map(|d| (d.lo + d.hi) / 2.0).collect())
    }

    fn set(params: &mut ParameterVector, id: ParamId, v: f64) {
        params.0[id.index()] = v;
    }

    #[test]
    fn equilibrium_produces_all_zeros() {
        // Outdoor air at the heating set-point, no gains, zone already at
        // set-point: nothing to do.
        let mut p = base_params();
        set(&mut p, ParamId::HeatingSetpoint, 21.0);
        set(&mut p, ParamId::CoolingSetpoint, 25.0);
        let model = ZoneModel::standard();
        let weather = const_weather(Resolution::Hourly, 48, 21.0, 0.0);
        let schedules = const_schedules(Resolution::Hourly, 2, 0.0);
        let out = model.run(&p, &weather, &schedules, Resolution::Hourly).unwrap();
        for ch in Channel::ALL {
            assert!(out.channel(ch).values().iter().all(|&v| v == 0.0), "{ch}");
        }
        assert!(out.zone_temp_c.iter().all(|&t| t == 21.0));
    }

    #[test]
    fn dhw_hand_energy_oracle() {
        // 1e-5 m3/s x 1000 x 4186 x 35 K x 3600 s = 5.27436e6 J = 1.46510 kWh.
        let mut p = base_params();
        set(&mut p, ParamId::DhwPeakFlow, 1.0e-5);
        let model = ZoneModel::standard();
        let weather = const_weather(Resolution::Hourly, 24, 21.0, 0.0);
        let schedules = const_schedules(Resolution::Hourly, 1, 1.0);
        let out = model.run(&p, &weather, &schedules, Resolution::Hourly).unwrap();
        let expect: f64 = 1.0e-5 * 1000.0 * 4186.0 * 35.0 * 3600.0 / 3.6e6;
        assert!((expect - 1.46510).abs() < 1e-5);
        for v in out.dhw.values() {
            assert!((v - expect).abs() < 1e-12, "{v} vs {expect}");
        }
    }

    #[test]
    fn steady_state_heating_matches_hand_balance() {
        // Cold constant weather, no gains: once the zone sits at the heating
        // set-point, each step meters exactly (UA + H) x (sp - t_out) W.
        let mut p = base_params();
        set(&mut p, ParamId::HeatingSetpoint, 20.0);
        let model = ZoneModel::standard();
        let weather = const_weather(Resolution::Hourly, 72, 0.0, 0.0);
        let schedules = const_schedules(Resolution::Hourly, 3, 0.0);
        let out = model.run(&p, &weather, &schedules, Resolution::Hourly).unwrap();

        // Independent hand computation of the conductances.
        let b = BuildingSpec::default();
        let ua_hand = 85.0 / (0.5 + 0.075 / 0.035)
            + 160.0 / (0.8 + 0.3 / 0.04)
            + 15.0 / (0.15 + 0.001 / 0.025);
        let h_hand = (6.0e-4 + 6.0e-5) * 80.0 * 1.2 * 1005.0;
        assert!((b.envelope_ua(0.075, 0.3, 0.001) - ua_hand).abs() < 1e-9);
        let expect_kwh = (ua_hand + h_hand) * 20.0 * 3600.0 / 3.6e6;

        // Skip the first day while the zone relaxes from 21 degrees to the
        // set-point.
        for (i, v) in out.heating.values().iter().enumerate().skip(24) {
            assert!((v - expect_kwh).abs() < 1e-9 * expect_kwh, "step {i}: {v}");
            assert_eq!(out.cooling.values()[i], 0.0);
        }
        assert!(out.zone_temp_c[24..].iter().all(|&t| t == 20.0));
    }

    #[test]
    fn steady_state_closure_includes_filtered_radiant_gains() {
        // Constant internal gains with a radiant share: in steady state the
        // filter passes them through unchanged, so heating power drops by
        // exactly the total gain.
        let mut p = base_params();
        set(&mut p, ParamId::HeatingSetpoint, 20.0);
        set(&mut p, ParamId::AppliancePowerDensity, 20.0);
        set(&mut p, ParamId::LightingPowerDensity, 4.0);
        set(&mut p, ParamId::ApplianceRadiantFraction, 30.0);
        set(&mut p, ParamId::LightingRadiantFraction, 50.0);
        set(&mut p, ParamId::OccupantGainDensity, 1.0);
        let model = ZoneModel::standard();
        let weather = const_weather(Resolution::Hourly, 96, 0.0, 0.0);
        let schedules = const_schedules(Resolution::Hourly, 4, 1.0);
        let out = model.run(&p, &weather, &schedules, Resolution::Hourly).unwrap();

        let b = BuildingSpec::default();
        let ua = b.envelope_ua(0.075, 0.3, 0.001);
        let h = (6.0e-4 + 6.0e-5) * 80.0 * 1.2 * 1005.0;
        let gains = (1.0 + 20.0 + 4.0) * 80.0;
        let expect_kwh = ((ua + h) * 20.0 - gains) * 3600.0 / 3.6e6;
        assert!(expect_kwh > 0.0);
        // 48 h warm-up covers both the zone and the 2 h radiant filter.
        for v in &out.heating.values()[48..] {
            assert!((v - expect_kwh).abs() < 1e-6 * expect_kwh, "{v} vs {expect_kwh}");
        }
    }

    #[test]
    fn transient_energy_balance_closes_exactly() {
        // Min1 run (one sub-step per step) with varying weather and gains:
        // re-derive every term from the outputs and close the balance
        // C dT = (conduction + gains + ideal) dt, with the filter's storage
        // term (tau - dt)(q_end - q_start) accounting for the radiant lag.
        let p = base_params();
        let model = ZoneModel::standard();
        let n = 2 * 1440;
        let start = Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap();
        let mut fields: [Vec<f64>; 7] = Default::default();
        for (i, f) in fields.iter_mut().enumerate() {
            *f = match i {
                0 => (0..n)
                    .map(|s| 5.0 + 12.0 * ((s as f64 / 1440.0) * std::f64::consts::TAU).sin())
                    .collect(),
                6 => (0..n)
                    .map(|s| (700.0 * ((s % 1440) as f64 / 1440.0 * std::f64::consts::PI).sin()).max(0.0))
                    .collect(),
                _ => vec![0.0; n],
            };
        }
        let weather = WeatherSeries::new(test_site(), start, Resolution::Min1, fields).unwrap();
        let schedules = const_schedules(Resolution::Min1, 2, 0.7);
        let out = model.run(&p, &weather, &schedules, Resolution::Min1).unwrap();

        let b = BuildingSpec::default();
        let ua = b.envelope_ua(0.075, 0.3, 0.001);
        let h = (6.0e-4 + 6.0e-5) * 80.0 * 1.2 * 1005.0;
        let dt = 60.0;
        let c = b.capacitance_j_per_k;
        let tau = RADIANT_TIME_CONSTANT_S;
        let area = 80.0;
        let radiant_in = (30.0 * area * 0.7) * 0.3 + (3.5 * area * 0.7) * 0.45;
        let convective_fixed = 1.0 * area * 0.7 + (30.0 * area * 0.7) * 0.7 + (3.5 * area * 0.7) * 0.55;

        let mut lhs = 0.0; // sum of C dT
        let mut rhs = 0.0;
        let mut q = 0.0; // replayed filter state
        let mut temp = 21.0;
        let mut radiant_in_total = 0.0;
        let mut radiant_out_total = 0.0;
        for i in 0..n {
            q += dt / tau * (radiant_in - q);
            radiant_in_total += radiant_in * dt;
            radiant_out_total += q * dt;
            let t_end = out.zone_temp_c[i];
            let ideal_w =
                (out.heating.values()[i] - out.cooling.values()[i]) * 3.6e6 / dt;
            let solar = weather.ghi()[i] * 15.0 * 0.6 * 0.7;
            lhs += c * (t_end - temp);
            rhs += dt
                * ((ua + h) * (weather.dry_bulb()[i] - temp)
                    + convective_fixed
                    + solar
                    + q
                    + ideal_w);
            temp = t_end;
        }
        let turnover: f64 = (out.heating.values().iter().sum::<f64>()
            + out.cooling.values().iter().sum::<f64>())
            * 3.6e6;
        assert!((lhs - rhs).abs() < 1e-9 * turnover.max(1.0), "{lhs} vs {rhs}");
        // Filter storage identity: what went in minus what came out equals
        // (tau - dt)(q_end - q_start), with q_start = 0.
        let stored = radiant_in_total - radiant_out_total;
        assert!((stored - (tau - dt) * q).abs() < 1e-9 * radiant_in_total.max(1.0));
    }

    #[test]
    fn heating_and_cooling_are_complementary_per_step() {
        let p = base_params();
        let model = ZoneModel::standard();
        let n = 7 * 24;
        let start = Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap();
        // A cold half-week then a hot sunny half-week: both conditioning
        // modes must engage.
        let mut fields: [Vec<f64>; 7] = Default::default();
        for (i, f) in fields.iter_mut().enumerate() {
            *f = match i {
                0 => (0..n).map(|s| if s < n / 2 { -2.0 } else { 32.0 }).collect(),
                6 => (0..n).map(|s| if s < n / 2 { 0.0 } else { 500.0 }).collect(),
                _ => vec![0.0; n],
            };
        }
        let weather = WeatherSeries::new(test_site(), start, Resolution::Hourly, fields).unwrap();
        let schedules = const_schedules(Resolution::Hourly, 7, 0.5);
        let out = model.run(&p, &weather, &schedules, Resolution::Hourly).unwrap();
        let mut heated = 0;
        let mut cooled = 0;
        for (h, c) in out.heating.values().iter().zip(out.cooling.values()) {
            assert!(*h >= 0.0 && *c >= 0.0);
            assert_eq!(h * c, 0.0, "heating and cooling in the same step");
            heated += usize::from(*h > 0.0);
            cooled += usize::from(*c > 0.0);
        }
        // The swing actually exercises both modes.
        assert!(heated > 0 && cooled > 0);
    }

    #[test]
    fn electricity_and_dhw_ignore_the_envelope() {
        let model = ZoneModel::standard();
        let weather = const_weather(Resolution::Hourly, 48, 5.0, 200.0);
        let schedules = const_schedules(Resolution::Hourly, 2, 0.6);
        let a = base_params();
        let mut b = a.clone();
        set(&mut b, ParamId::WallInsulation, 0.05);
        set(&mut b, ParamId::FloorCeilingInsulation, 0.4);
        set(&mut b, ParamId::WindowInsulation, 1.5e-3);
        set(&mut b, ParamId::HeatingSetpoint, 23.0);
        set(&mut b, ParamId::CoolingSetpoint, 24.0);
        set(&mut b, ParamId::GlassDirtFactor, 0.5);
        set(&mut b, ParamId::VentilationRate, 9.0e-4);
        set(&mut b, ParamId::InfiltrationRate, 3.0e-5);
        set(&mut b, ParamId::OccupantGainDensity, 1.1);
        set(&mut b, ParamId::ApplianceRadiantFraction, 40.0);
        set(&mut b, ParamId::LightingRadiantFraction, 30.0);
        let out_a = model.run(&a, &weather, &schedules, Resolution::Hourly).unwrap();
        let out_b = model.run(&b, &weather, &schedules, Resolution::Hourly).unwrap();
        assert_eq!(out_a.electricity.values(), out_b.electricity.values());
        assert_eq!(out_a.dhw.values(), out_b.dhw.values());
        assert_ne!(out_a.heating.values(), out_b.heating.values());

        // Density changes do move electricity.
        let mut c2 = a.clone();
        set(&mut c2, ParamId::AppliancePowerDensity, 45.0);
        let out_c = model.run(&c2, &weather, &schedules, Resolution::Hourly).unwrap();
        assert_ne!(out_a.electricity.values(), out_c.electricity.values());
        assert_eq!(out_a.dhw.values(), out_c.dhw.values());
    }

    #[test]
    fn simulation_is_bit_reproducible() {
        let p = base_params();
        let model = ZoneModel::standard();
        let weather = const_weather(Resolution::Min30, 96, -2.0, 150.0);
        let schedules = const_schedules(Resolution::Min30, 2, 0.4);
        let a = model.run(&p, &weather, &schedules, Resolution::Min30).unwrap();
        let b = model.run(&p, &weather, &schedules, Resolution::Min30).unwrap();
        assert_eq!(a.heating.values(), b.heating.values());
        assert_eq!(a.cooling.values(), b.cooling.values());
        assert_eq!(a.zone_temp_c, b.zone_temp_c);
    }

    fn annual_heating(p: &ParameterVector) -> f64 {
        let model = ZoneModel::standard();
        let n = 30 * 24;
        let start = Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap();
        let mut fields: [Vec<f64>; 7] = Default::default();
        for (i, f) in fields.iter_mut().enumerate() {
            *f = match i {
                0 => (0..n)
                    .map(|s| 2.0 + 6.0 * ((s as f64 / 24.0) * std::f64::consts::TAU).sin())
                    .collect(),
                6 => (0..n)
                    .map(|s| (300.0 * ((s % 24) as f64 / 24.0 * std::f64::consts::PI).sin()).max(0.0))
                    .collect(),
                _ => vec![0.0; n],
            };
        }
        let weather = WeatherSeries::new(test_site(), start, Resolution::Hourly, fields).unwrap();
        let schedules = const_schedules(Resolution::Hourly, 30, 0.5);
        let out = model.run(p, &weather, &schedules, Resolution::Hourly).unwrap();
        out.heating.values().iter().sum()
    }

    #[test]
    fn heating_monotonicity_probes() {
        let base = base_params();
        let h0 = annual_heating(&base);

        let mut thicker = base.clone();
        set(&mut thicker, ParamId::WallInsulation, 0.10);
        assert!(annual_heating(&thicker) <= h0);

        let mut thinner = base.clone();
        set(&mut thinner, ParamId::WallInsulation, 0.05);
        assert!(annual_heating(&thinner) >= h0);

        let mut warmer = base.clone();
        set(&mut warmer, ParamId::HeatingSetpoint, 24.0);
        assert!(annual_heating(&warmer) >= h0);

        let mut colder = base.clone();
        set(&mut colder, ParamId::HeatingSetpoint, 18.0);
        assert!(annual_heating(&colder) <= h0);
    }

    #[test]
    fn unstable_capacitance_is_reported() {
        let mut building = BuildingSpec::default();
        building.capacitance_j_per_k = 1e3;
        let model = ZoneModel::new(building, ParameterSpace::standard()).unwrap();
        let p = base_params();
        let weather = const_weather(Resolution::Hourly, 24, -5.0, 0.0);
        let schedules = const_schedules(Resolution::Hourly, 1, 0.0);
        match model.run(&p, &weather, &schedules, Resolution::Hourly) {
            Err(Error::UnstableSimulation { temp, .. }) => assert!(temp.abs() > 100.0),
            other => panic!("expected instability, got {other:?}"),
        }
    }

    #[test]
    fn run_validates_inputs() {
        let model = ZoneModel::standard();
        let weather = const_weather(Resolution::Hourly, 24, 5.0, 0.0);
        let schedules = const_schedules(Resolution::Hourly, 1, 0.5);

        let mut bad = base_params();
        set(&mut bad, ParamId::WallInsulation, 0.5);
        assert!(matches!(
            model.run(&bad, &weather, &schedules, Resolution::Hourly),
            Err(Error::OutOfRange { .. })
        ));

        // Mismatched schedule resolution.
        let fine = const_schedules(Resolution::Min30, 1, 0.5);
        assert!(matches!(
            model.run(&base_params(), &weather, &fine, Resolution::Hourly),
            Err(Error::MetadataMismatch(_))
        ));

        // Set-point order violated under widened ranges.
        let mut space = ParameterSpace::standard();
        space.set_range("heating_setpoint", 18.0, 26.0).unwrap();
        let model2 = ZoneModel::new(BuildingSpec::default(), space).unwrap();
        let mut inverted = base_params();
        set(&mut inverted, ParamId::HeatingSetpoint, 26.0);
        set(&mut inverted, ParamId::CoolingSetpoint, 24.5);
        assert!(matches!(
            model2.run(&inverted, &weather, &schedules, Resolution::Hourly),
            Err(Error::SetpointOrder { .. })
        ));
    }

    #[test]
    fn post_aggregate_conserves_energy() {
        let p = base_params();
        let model = ZoneModel::standard();
        let weather = const_weather(Resolution::Hourly, 48, 0.0, 100.0);
        let schedules = const_schedules(Resolution::Hourly, 2, 0.5);
        let out = model.run(&p, &weather, &schedules, Resolution::Hourly).unwrap();
        let daily = post_aggregate(&out, Resolution::Daily).unwrap();
        assert_eq!(daily.heating.len(), 2);
        for ch in Channel::ALL {
            let total: f64 = out.channel(ch).values().iter().sum();
            let agg: f64 = daily.channel(ch).values().iter().sum();
            assert!((total - agg).abs() < 1e-9);
        }
        // Constant 1 kWh hourly -> 6 kWh per 6 h bucket.
        let ones = MeteredSeries::new(
            Channel::Heating,
            out.heating.start,
            Resolution::Hourly,
            vec![1.0; 48],
            vec![false; 48],
        )
        .unwrap();
        let six = aggregate(&ones, Resolution::Hour6).unwrap();
        assert!(six.values().iter().all(|&v| (v - 6.0).abs() < 1e-12));

        assert!(post_aggregate(&daily, Resolution::Monthly).is_err());
        assert!(post_aggregate(&out, Resolution::Hourly).is_err());
    }

    #[test]
    fn ground_truth_zero_noise_is_bitwise_identical() {
        let p = base_params();
        let model = ZoneModel::standard();
        let weather = const_weather(Resolution::Min1, 1440, 10.0, 50.0);
        let schedules = const_schedules(Resolution::Min1, 1, 0.5);
        let truth = synthesize_ground_truth(&model, &p, &weather, &schedules, 0.0, &[], 1).unwrap();
        let direct = model.run(&p, &weather, &schedules, Resolution::Min1).unwrap();
        for (got, want) in truth.iter().zip([
            &direct.heating,
            &direct.cooling,
            &direct.electricity,
            &direct.dhw,
        ]) {
            assert_eq!(got.values(), want.values());
            assert!(got.is_complete());
        }
    }

    #[test]
    fn ground_truth_noise_moment_oracle() {
        let mut p = base_params();
        set(&mut p, ParamId::DhwPeakFlow, 5.0e-5);
        let model = ZoneModel::standard();
        let n: usize = 100_000;
        let days = n.div_ceil(1440);
        let weather = const_weather(Resolution::Min1, days * 1440, 10.0, 0.0);
        let schedules = const_schedules(Resolution::Min1, days, 1.0);
        let sigma = 0.05;
        let truth =
            synthesize_ground_truth(&model, &p, &weather, &schedules, sigma, &[], 7).unwrap();
        let clean = model.run(&p, &weather, &schedules, Resolution::Min1).unwrap();
        let rel: Vec<f64> = truth[3]
            .values()
            .iter()
            .zip(clean.dhw.values())
            .take(n)
            .map(|(noisy, v)| noisy / v - 1.0)
            .collect();
        let mean: f64 = rel.iter().sum::<f64>() / n as f64;
        let var: f64 = rel.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // Mean-one noise: E[r] = 0, sd(r) = sqrt(exp(sigma^2) - 1) ~ sigma.
        assert!(mean.abs() < 0.002, "mean {mean}");
        assert!((var.sqrt() - sigma).abs() < 0.002, "sd {}", var.sqrt());
    }

    #[test]
    fn ground_truth_gap_injection() {
        let p = base_params();
        let model = ZoneModel::standard();
        let weather = const_weather(Resolution::Min1, 1440, 10.0, 0.0);
        let schedules = const_schedules(Resolution::Min1, 1, 0.5);
        let gaps = [GapSpec {
            channel: Channel::Electricity,
            start_index: 100,
            len: 240,
        }];
        let truth =
            synthesize_ground_truth(&model, &p, &weather, &schedules, 0.01, &gaps, 3).unwrap();
        let elec = &truth[2];
        assert_eq!(elec.missing().iter().filter(|&&m| m).count(), 240);
        assert!(elec.missing()[100] && elec.missing()[339]);
        assert!(!elec.missing()[99] && !elec.missing()[340]);
        for other in [&truth[0], &truth[1], &truth[3]] {
            assert!(other.is_complete());
        }
        // Same seed, same noise.
        let again =
            synthesize_ground_truth(&model, &p, &weather, &schedules, 0.01, &gaps, 3).unwrap();
        assert_eq!(again[0].values(), truth[0].values());
    }
}
