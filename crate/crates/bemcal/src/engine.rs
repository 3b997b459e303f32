//! The subset-simulation calibration loop and the multi-resolution
//! experiment drivers.
//!
//! One calibration run seeds a batch by Latin hypercube, simulates it,
//! scores every sample against the calibration targets, then repeatedly
//! fits a truncated Gaussian mixture to the elite samples and resamples
//! until a sample meets every threshold, improvement stalls, or the
//! iteration budget runs out. The best sample found so far (smallest raw
//! violation norm) is re-injected into every new batch, so the best-so-far
//! trajectory is non-increasing even when a batch regresses.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    distance, meets_all, raw_violation_norm, FitReport, ThresholdSet,
};
use crate::profiles::ScheduleSet;
use crate::sampler::{fit_mixture, lhs, sample_truncated, MixtureModel, ParameterSpace, ParameterVector};
use crate::series::{align, Channel, MeteredSeries, Resolution};
use crate::simulator::{post_aggregate, Simulator};
use crate::util::mix_seed;
use crate::weather::WeatherSeries;

/// Knobs of one calibration run.
///
/// Defaults follow common practice: 200 samples per iteration, elites are
/// the best tenth, targets CVRMSE 30 / |NMBE| 10, stop when every metric
/// improves by less than 1% between iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Batch size m of the sampling loop.
    pub samples_per_iteration: usize,
    /// Elite count k; `None` means ceil(m/10).
    pub elite_count: Option<usize>,
    pub thresholds: ThresholdSet,
    /// Relative improvement below which a metric counts as stalled.
    pub improvement_tol: f64,
    pub max_iterations: usize,
    /// Simulations dispatched concurrently per wave.
    pub batch_size: usize,
    /// Cap for BIC model selection when fitting the elite mixture.
    pub max_mixture_components: usize,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            samples_per_iteration: 200,
            elite_count: None,
            thresholds: ThresholdSet::default(),
            improvement_tol: 0.01,
            max_iterations: 50,
            batch_size: 30,
            max_mixture_components: 3,
            seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn elites(&self) -> usize {
        self.elite_count
            .unwrap_or_else(|| self.samples_per_iteration.div_ceil(10))
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.elites();
        if k < 2 || k > self.samples_per_iteration {
            return Err(Error::Config(format!(
                "elite count {k} must lie in 2..={}",
                self.samples_per_iteration
            )));
        }
        if !(self.improvement_tol > 0.0) {
            return Err(Error::Config(format!(
                "improvement_tol must be positive, got {}",
                self.improvement_tol
            )));
        }
        if self.max_iterations == 0 || self.batch_size == 0 || self.max_mixture_components == 0 {
            return Err(Error::Config(
                "max_iterations, batch_size and max_mixture_components must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingReason {
    /// Some sample satisfied every (channel, metric) target.
    ThresholdMet,
    /// Every metric improved by less than `improvement_tol` between two
    /// consecutive iterations.
    Converged,
    MaxIterations,
}

impl fmt::Display for StoppingReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StoppingReason::ThresholdMet => "threshold-met",
            StoppingReason::Converged => "converged",
            StoppingReason::MaxIterations => "max-iterations",
        };
        f.write_str(s)
    }
}

/// Batch-best metric values for one channel in one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelThetas {
    pub channel: Channel,
    /// Smallest CVRMSE in the batch.
    pub min_cvrmse: f64,
    /// Smallest |NMBE| in the batch.
    pub min_abs_nmbe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub thetas: Vec<ChannelThetas>,
    /// Elite vectors of the iteration, best first.
    pub elites: Vec<ParameterVector>,
    /// Mixture fitted to the elites; absent on the stopping iteration.
    pub mixture: Option<MixtureModel>,
    /// Raw violation norm of the best sample found so far.
    pub best_raw_norm: f64,
    /// Samples of the batch the simulator rejected.
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub resolution: Resolution,
    /// Channels the run was scored on.
    pub channels: Vec<Channel>,
    /// Channels dropped up front for lacking usable measurements.
    pub skipped_channels: Vec<Channel>,
    pub iterations: Vec<IterationRecord>,
    /// Elite set of the final iteration.
    pub elites: Vec<ParameterVector>,
    pub best: ParameterVector,
    pub best_report: FitReport,
    pub stopping: StoppingReason,
    pub n_simulations: usize,
    /// Simulation plus fitting time. Excluded from serialized artifacts so
    /// identical runs digest identically.
    #[serde(skip)]
    pub wall_seconds: f64,
}

/// Read-only inputs shared by every simulation of a calibration run.
///
/// `timestep` is the resolution the simulator runs at; when the calibration
/// `resolution` is coarser than hourly the hourly output is aggregated up
/// before scoring.
pub struct EvalContext<'a> {
    pub simulator: &'a dyn Simulator,
    pub weather: &'a WeatherSeries,
    pub schedules: &'a ScheduleSet,
    pub timestep: Resolution,
    pub resolution: Resolution,
    /// Measurements aggregated to `resolution`, one per scored channel.
    pub measurements: &'a [MeteredSeries],
}

fn evaluate_one(ctx: &EvalContext, v: &ParameterVector) -> Result<FitReport> {
    let out = ctx.simulator.run(v, ctx.weather, ctx.schedules, ctx.timestep)?;
    let out = if ctx.resolution == ctx.timestep {
        out
    } else {
        post_aggregate(&out, ctx.resolution)?
    };
    let mut pairs = Vec::with_capacity(ctx.measurements.len());
    for m in ctx.measurements {
        pairs.push(align(m, out.channel(m.channel))?);
    }
    FitReport::from_pairs(&pairs)
}

/// Simulates and scores a batch, `batch_size` vectors at a time, preserving
/// input order. Per-vector failures are collected, not fatal, unless every
/// vector fails.
pub fn evaluate_batch(
    ctx: &EvalContext,
    vectors: &[ParameterVector],
    batch_size: usize,
) -> Result<Vec<Result<FitReport>>> {
    if vectors.is_empty() || batch_size == 0 {
        return Err(Error::Config(
            "evaluate_batch needs at least one vector and a positive batch size".into(),
        ));
    }
    let mut results = Vec::with_capacity(vectors.len());
    for wave in vectors.chunks(batch_size) {
        let mut wave_results: Vec<Result<FitReport>> =
            wave.par_iter().map(|v| evaluate_one(ctx, v)).collect();
        results.append(&mut wave_results);
    }
    if results.iter().all(|r| r.is_err()) {
        let first = results[0].as_ref().err().unwrap().to_string();
        return Err(Error::AllSamplesFailed { first });
    }
    Ok(results)
}

/// Simulation timestep for a calibration resolution: the resolution itself
/// up to hourly, hourly beyond (coarser outputs are aggregated, not
/// simulated).
pub fn simulation_timestep(resolution: Resolution) -> Resolution {
    resolution.min(Resolution::Hourly)
}

/// Runs the full sampling loop at one resolution.
///
/// `measurements` must already be aggregated to `resolution`; `weather`
/// must be at the simulation timestep; `schedules` may be at either the
/// resolution or the timestep and are step-hold expanded when needed.
/// Channels whose measurements cannot support the metrics (fewer than two
/// observed points, or zero mean) are skipped with a warning rather than
/// failing the run.
pub fn calibrate(
    simulator: &dyn Simulator,
    resolution: Resolution,
    measurements: &[MeteredSeries],
    weather: &WeatherSeries,
    schedules: &ScheduleSet,
    space: &ParameterSpace,
    config: &EngineConfig,
) -> Result<CalibrationResult> {
    config.validate()?;
    let timestep = simulation_timestep(resolution);
    if weather.resolution != timestep {
        return Err(Error::MetadataMismatch(format!(
            "calibration at {resolution} simulates at {timestep}, got {} weather",
            weather.resolution
        )));
    }
    let expanded;
    let schedules = if schedules.resolution == timestep {
        schedules
    } else {
        expanded = schedules.expand_to(timestep)?;
        &expanded
    };

    let mut active: Vec<MeteredSeries> = Vec::new();
    let mut skipped: Vec<Channel> = Vec::new();
    for channel in Channel::ALL {
        let Some(m) = measurements.iter().find(|m| m.channel == channel) else {
            continue;
        };
        if m.resolution != resolution {
            return Err(Error::MetadataMismatch(format!(
                "{channel} measurements are at {}, calibration wants {resolution}",
                m.resolution
            )));
        }
        let observed: Vec<f64> = m
            .values()
            .iter()
            .zip(m.missing())
            .filter(|(_, &miss)| !miss)
            .map(|(v, _)| *v)
            .collect();
        let usable = observed.len() >= 2
            && observed.iter().sum::<f64>() / observed.len() as f64 > 0.0;
        if usable {
            active.push(m.clone());
        } else {
            log::warn!("{resolution}: skipping {channel}: measurements cannot support the fit metrics");
            skipped.push(channel);
        }
    }
    if active.is_empty() {
        return Err(Error::Config(format!(
            "no channel has usable measurements at {resolution}"
        )));
    }
    let channels: Vec<Channel> = active.iter().map(|m| m.channel).collect();

    let ctx = EvalContext {
        simulator,
        weather,
        schedules,
        timestep,
        resolution,
        measurements: &active,
    };

    let start = Instant::now();
    let m = config.samples_per_iteration;
    let k = config.elites();
    let mut vectors = lhs(space, m, mix_seed(config.seed, 0));
    let mut iterations: Vec<IterationRecord> = Vec::new();
    let mut best: Option<(ParameterVector, FitReport, f64)> = None;
    let mut prev_thetas: Option<Vec<ChannelThetas>> = None;
    let mut n_simulations = 0usize;
    let mut final_elites: Vec<ParameterVector> = Vec::new();
    let mut stopping = StoppingReason::MaxIterations;

    for iteration in 0..config.max_iterations {
        let outcomes = evaluate_batch(&ctx, &vectors, config.batch_size)?;
        n_simulations += vectors.len();

        let mut ok_idx: Vec<usize> = Vec::with_capacity(outcomes.len());
        let mut reports: Vec<FitReport> = Vec::with_capacity(outcomes.len());
        let mut failures = 0usize;
        for (i, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                Ok(report) => {
                    ok_idx.push(i);
                    reports.push(report);
                }
                Err(e) => {
                    failures += 1;
                    log::warn!(
                        "{resolution} iteration {iteration}: sample {i} rejected ({e}); vector {:?}",
                        vectors[i].as_slice()
                    );
                }
            }
        }

        let thetas: Vec<ChannelThetas> = channels
            .iter()
            .map(|&channel| {
                let mut min_cvrmse = f64::INFINITY;
                let mut min_abs_nmbe = f64::INFINITY;
                for r in &reports {
                    let c = r.channel(channel).expect("report covers scored channels");
                    min_cvrmse = min_cvrmse.min(c.cvrmse);
                    min_abs_nmbe = min_abs_nmbe.min(c.nmbe.abs());
                }
                ChannelThetas { channel, min_cvrmse, min_abs_nmbe }
            })
            .collect();

        for (local, report) in reports.iter().enumerate() {
            let norm = raw_violation_norm(report, &config.thresholds);
            if best.as_ref().is_none_or(|(_, _, b)| norm < *b) {
                best = Some((vectors[ok_idx[local]].clone(), report.clone(), norm));
            }
        }
        let best_raw_norm = best.as_ref().map(|(_, _, n)| *n).unwrap_or(f64::INFINITY);

        let scores = distance(&reports, &config.thresholds)?;
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| {
            scores[a]
                .eta_hat
                .partial_cmp(&scores[b].eta_hat)
                .expect("finite distance scores")
                .then(a.cmp(&b))
        });
        let elites: Vec<ParameterVector> = order
            .iter()
            .take(k)
            .map(|&i| vectors[ok_idx[i]].clone())
            .collect();

        let met = reports.iter().any(|r| meets_all(r, &config.thresholds));
        let stalled = prev_thetas
            .as_ref()
            .is_some_and(|prev| all_stalled(prev, &thetas, config.improvement_tol));
        let last = iteration + 1 == config.max_iterations;
        let stop = if met {
            Some(StoppingReason::ThresholdMet)
        } else if stalled {
            Some(StoppingReason::Converged)
        } else if last {
            Some(StoppingReason::MaxIterations)
        } else {
            None
        };

        if let Some(reason) = stop {
            iterations.push(IterationRecord {
                iteration,
                thetas,
                elites: elites.clone(),
                mixture: None,
                best_raw_norm,
                failures,
            });
            final_elites = elites;
            stopping = reason;
            break;
        }

        let mixture = fit_mixture(
            &elites,
            space,
            config.max_mixture_components,
            mix_seed(config.seed, 2 * iteration as u64 + 1),
        )?;
        let mut next = sample_truncated(&mixture, m - 1, mix_seed(config.seed, 2 * iteration as u64 + 2))?;
        next.push(best.as_ref().expect("some sample succeeded").0.clone());

        iterations.push(IterationRecord {
            iteration,
            thetas,
            elites: elites.clone(),
            mixture: Some(mixture),
            best_raw_norm,
            failures,
        });
        final_elites = elites;
        prev_thetas = Some(iterations.last().unwrap().thetas.clone());
        vectors = next;
    }

    let (best, best_report, _) = best.expect("loop ran at least one iteration");
    Ok(CalibrationResult {
        resolution,
        channels,
        skipped_channels: skipped,
        iterations,
        elites: final_elites,
        best,
        best_report,
        stopping,
        n_simulations,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Relative improvement (prev - new) / prev below tol for every channel and
/// metric; a metric already at zero cannot improve and counts as stalled.
fn all_stalled(prev: &[ChannelThetas], cur: &[ChannelThetas], tol: f64) -> bool {
    fn stalled(prev: f64, new: f64, tol: f64) -> bool {
        prev == 0.0 || (prev - new) / prev < tol
    }
    prev.iter().zip(cur).all(|(p, c)| {
        stalled(p.min_cvrmse, c.min_cvrmse, tol)
            && stalled(p.min_abs_nmbe, c.min_abs_nmbe, tol)
    })
}

/// A completed calibration together with the schedule set it ran with,
/// needed to re-drive the simulator at the finest step.
pub struct CalibratedModel<'a> {
    pub result: &'a CalibrationResult,
    pub schedules: &'a ScheduleSet,
}

/// One row of the cross-resolution comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionRow {
    pub resolution: Resolution,
    /// Fit against measurements at the calibration's own resolution.
    pub in_resolution: FitReport,
    /// Fit of the same model re-simulated at 1-minute steps against
    /// 1-minute measurements.
    pub at_min1: FitReport,
    pub iterations: usize,
    pub n_simulations: usize,
    pub stopping: StoppingReason,
    /// Only reported through the timings artifact.
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionMatrix {
    pub rows: Vec<ResolutionRow>,
}

/// Re-simulates every calibrated model at 1-minute steps (schedules
/// step-hold expanded) and scores it against the 1-minute measurements,
/// pairing each in-resolution fit with its fine-grained counterpart.
pub fn cross_evaluate(
    simulator: &dyn Simulator,
    models: &[CalibratedModel],
    min1_weather: &WeatherSeries,
    min1_measurements: &[MeteredSeries],
) -> Result<ResolutionMatrix> {
    if min1_weather.resolution != Resolution::Min1 {
        return Err(Error::MetadataMismatch(format!(
            "cross evaluation needs min1 weather, got {}",
            min1_weather.resolution
        )));
    }
    let mut rows = Vec::with_capacity(models.len());
    for model in models {
        let result = model.result;
        let schedules = model.schedules.expand_to(Resolution::Min1)?;
        let out = simulator.run(&result.best, min1_weather, &schedules, Resolution::Min1)?;
        let mut pairs = Vec::with_capacity(result.channels.len());
        for &channel in &result.channels {
            let measured = min1_measurements
                .iter()
                .find(|m| m.channel == channel)
                .ok_or_else(|| {
                    Error::MetadataMismatch(format!("no min1 measurements for {channel}"))
                })?;
            pairs.push(align(measured, out.channel(channel))?);
        }
        rows.push(ResolutionRow {
            resolution: result.resolution,
            in_resolution: result.best_report.clone(),
            at_min1: FitReport::from_pairs(&pairs)?,
            iterations: result.iterations.len(),
            n_simulations: result.n_simulations,
            stopping: result.stopping,
            wall_seconds: result.wall_seconds,
        });
    }
    Ok(ResolutionMatrix { rows })
}

/// Elite-set summary of one variable at one resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSummary {
    pub resolution: Resolution,
    pub variable: String,
    pub mean: f64,
    pub std: f64,
    pub p5: f64,
    pub p95: f64,
}

/// Summarizes the final elite set of every calibration as an informed
/// prior per variable: mean, population standard deviation and the 5/95
/// percentiles (linear interpolation).
pub fn prior_report(
    results: &[CalibrationResult],
    space: &ParameterSpace,
) -> Result<Vec<PriorSummary>> {
    let mut out = Vec::new();
    for result in results {
        if result.elites.is_empty() {
            return Err(Error::TooFewElites { got: 0 });
        }
        for e in &result.elites {
            if e.0.len() != space.dims() {
                return Err(Error::DimensionMismatch {
                    expected: space.dims(),
                    got: e.0.len(),
                });
            }
        }
        for (dim, def) in space.defs().iter().enumerate() {
            let mut xs: Vec<f64> = result.elites.iter().map(|v| v.0[dim]).collect();
            xs.sort_by(|a, b| a.partial_cmp(b).expect("finite parameter values"));
            // A constant elite set summarizes exactly; the general path can
            // deviate by a rounding ulp.
            if xs[0] == *xs.last().unwrap() {
                out.push(PriorSummary {
                    resolution: result.resolution,
                    variable: def.name.clone(),
                    mean: xs[0],
                    std: 0.0,
                    p5: xs[0],
                    p95: xs[0],
                });
                continue;
            }
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            out.push(PriorSummary {
                resolution: result.resolution,
                variable: def.name.clone(),
                mean,
                std: var.sqrt(),
                p5: percentile(&xs, 0.05),
                p95: percentile(&xs, 0.95),
            });
        }
    }
    Ok(out)
}

/// Linear-interpolation percentile of a sorted, non-empty slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let r = q * (sorted.len() - 1) as f64;
    let lo = r.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = r - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

impl ResolutionMatrix {
    /// `resolution,channel,cvrmse,nmbe` of each model at its own resolution.
    pub fn write_in_resolution_csv(&self, path: &Path) -> Result<()> {
        write_fit_csv(path, &self.rows, |row| &row.in_resolution)
    }

    /// `resolution,channel,cvrmse,nmbe` of each model re-evaluated at
    /// 1-minute steps.
    pub fn write_min1_csv(&self, path: &Path) -> Result<()> {
        write_fit_csv(path, &self.rows, |row| &row.at_min1)
    }

    /// `resolution,wall_seconds,iterations,n_simulations,stopping`. Wall
    /// time varies run to run, so this artifact is excluded from
    /// reproducibility digests.
    pub fn write_timings_csv(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        writeln!(f, "resolution,wall_seconds,iterations,n_simulations,stopping")?;
        for row in &self.rows {
            writeln!(
                f,
                "{},{:.3},{},{},{}",
                row.resolution, row.wall_seconds, row.iterations, row.n_simulations, row.stopping
            )?;
        }
        Ok(())
    }
}

fn write_fit_csv(
    path: &Path,
    rows: &[ResolutionRow],
    pick: impl Fn(&ResolutionRow) -> &FitReport,
) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "resolution,channel,cvrmse,nmbe")?;
    for row in rows {
        for c in &pick(row).channels {
            writeln!(f, "{},{},{},{}", row.resolution, c.channel, c.cvrmse, c.nmbe)?;
        }
    }
    Ok(())
}

/// `resolution,variable,mean,std,p5,p95`, one row per (resolution, variable).
pub fn write_priors_csv(path: &Path, priors: &[PriorSummary]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "resolution,variable,mean,std,p5,p95")?;
    for p in priors {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            p.resolution, p.variable, p.mean, p.std, p.p5, p.p95
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::SimulationOutput;
    use crate::weather::Site;
    use chrono::{NaiveDate, TimeZone, Utc};

    /// Analytic stand-in for the zone model: every channel is a positive
    /// wave scaled by 1 + (normalized distance of `params` from a target),
    /// so the target reproduces its own measurements exactly and fit
    /// degrades smoothly away from it.
    struct MockSim {
        space: ParameterSpace,
        target: ParameterVector,
    }

    impl MockSim {
        fn standard() -> Self {
            let space = ParameterSpace::standard();
            let target = ParameterVector(
                space
                    .defs()
                    .iter()
                    .map(|d| d.lo + 0.37 * (d.hi - d.lo))
                    .collect(),
            );
            MockSim { space, target }
        }

        fn response(&self, params: &ParameterVector) -> f64 {
            params
                .as_slice()
                .iter()
                .zip(self.target.as_slice())
                .zip(self.space.widths())
                .map(|((p, t), w)| ((p - t) / w).powi(2))
                .sum::<f64>()
                .sqrt()
        }
    }

    impl Simulator for MockSim {
        fn run(
            &self,
            params: &ParameterVector,
            weather: &WeatherSeries,
            _schedules: &ScheduleSet,
            timestep: Resolution,
        ) -> Result<SimulationOutput> {
            if weather.resolution != timestep {
                return Err(Error::MetadataMismatch("mock timestep".into()));
            }
            let n = weather.len();
            let d = self.response(params);
            let series = |ci: usize| {
                let values: Vec<f64> = (0..n)
                    .map(|t| (1.5 + (t as f64 * 0.7).sin()) * (1.0 + d * (1.0 + 0.2 * ci as f64)))
                    .collect();
                MeteredSeries::complete(Channel::ALL[ci], weather.start, timestep, values).unwrap()
            };
            Ok(SimulationOutput {
                heating: series(0),
                cooling: series(1),
                electricity: series(2),
                dhw: series(3),
                zone_temp_c: vec![21.0; n],
            })
        }
    }

    fn test_weather(resolution: Resolution, n_days: usize) -> WeatherSeries {
        let steps = n_days * resolution.steps_per_day().unwrap();
        let fields = [
            vec![10.0; steps],
            vec![5.0; steps],
            vec![50.0; steps],
            vec![96_000.0; steps],
            vec![1.0; steps],
            vec![180.0; steps],
            vec![0.0; steps],
        ];
        WeatherSeries::new(
            Site { latitude_deg: 47.4, longitude_deg: 8.3 },
            Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap(),
            resolution,
            fields,
        )
        .unwrap()
    }

    fn test_schedules(n_days: usize) -> ScheduleSet {
        ScheduleSet::nominal(NaiveDate::from_ymd_opt(2022, 1, 1).unwrap(), n_days)
    }

    fn mock_setup(resolution: Resolution, n_days: usize) -> (MockSim, WeatherSeries, ScheduleSet, Vec<MeteredSeries>) {
        let sim = MockSim::standard();
        let timestep = simulation_timestep(resolution);
        let weather = test_weather(timestep, n_days);
        let schedules = test_schedules(n_days);
        let truth = sim
            .run(&sim.target.clone(), &weather, &schedules, timestep)
            .unwrap();
        let truth = if resolution == timestep {
            truth
        } else {
            post_aggregate(&truth, resolution).unwrap()
        };
        let measurements: Vec<MeteredSeries> =
            Channel::ALL.iter().map(|&c| truth.channel(c).clone()).collect();
        (sim, weather, schedules, measurements)
    }

    fn fast_config() -> EngineConfig {
        EngineConfig {
            samples_per_iteration: 100,
            thresholds: ThresholdSet::uniform(10.0, 10.0),
            improvement_tol: 1e-9,
            max_iterations: 40,
            batch_size: 16,
            seed: 7,
            ..EngineConfig::default()
        }
    }

    #[test]
    fn mock_calibration_meets_thresholds_and_keeps_best_monotone() {
        let (sim, weather, schedules, measurements) = mock_setup(Resolution::Hourly, 2);
        let result = calibrate(
            &sim,
            Resolution::Hourly,
            &measurements,
            &weather,
            &schedules,
            &sim.space,
            &fast_config(),
        )
        .unwrap();
        assert_eq!(result.stopping, StoppingReason::ThresholdMet);
        assert!(meets_all(&result.best_report, &fast_config().thresholds));
        assert!(result.skipped_channels.is_empty());
        assert_eq!(result.channels, Channel::ALL.to_vec());
        // Elitism: best-so-far raw violation norm never increases.
        let norms: Vec<f64> = result.iterations.iter().map(|r| r.best_raw_norm).collect();
        assert!(norms.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(
            result.n_simulations,
            result.iterations.len() * fast_config().samples_per_iteration
        );
        // The winning sample sits close to the generator target.
        assert!(sim.response(&result.best) < 0.2);
        // The stopping iteration fits no mixture; earlier ones do.
        assert!(result.iterations.last().unwrap().mixture.is_none());
        assert!(result.iterations[..result.iterations.len() - 1]
            .iter()
            .all(|r| r.mixture.is_some()));
    }

    #[test]
    fn unreachable_thresholds_never_report_threshold_met() {
        let (sim, weather, schedules, measurements) = mock_setup(Resolution::Hourly, 2);
        let config = EngineConfig {
            samples_per_iteration: 40,
            thresholds: ThresholdSet::uniform(0.0, 0.0),
            improvement_tol: 0.01,
            max_iterations: 12,
            batch_size: 8,
            seed: 3,
            ..EngineConfig::default()
        };
        let result = calibrate(
            &sim,
            Resolution::Hourly,
            &measurements,
            &weather,
            &schedules,
            &sim.space,
            &config,
        )
        .unwrap();
        assert_ne!(result.stopping, StoppingReason::ThresholdMet);
        assert!(matches!(
            result.stopping,
            StoppingReason::Converged | StoppingReason::MaxIterations
        ));
    }

    /// Ignores its parameters: the second iteration cannot improve on the
    /// first, which must trip the stall rule immediately.
    struct ConstSim;

    impl Simulator for ConstSim {
        fn run(
            &self,
            _params: &ParameterVector,
            weather: &WeatherSeries,
            _schedules: &ScheduleSet,
            timestep: Resolution,
        ) -> Result<SimulationOutput> {
            let n = weather.len();
            let series = |ci: usize| {
                MeteredSeries::complete(Channel::ALL[ci], weather.start, timestep, vec![2.0; n])
                    .unwrap()
            };
            Ok(SimulationOutput {
                heating: series(0),
                cooling: series(1),
                electricity: series(2),
                dhw: series(3),
                zone_temp_c: vec![21.0; n],
            })
        }
    }

    #[test]
    fn flat_response_converges_on_the_second_iteration() {
        let weather = test_weather(Resolution::Hourly, 2);
        let schedules = test_schedules(2);
        let measurements: Vec<MeteredSeries> = Channel::ALL
            .iter()
            .map(|&c| {
                let v: Vec<f64> = (0..48).map(|t| 2.0 + 0.5 * (t as f64 * 0.3).cos()).collect();
                MeteredSeries::complete(c, weather.start, Resolution::Hourly, v).unwrap()
            })
            .collect();
        let config = EngineConfig {
            samples_per_iteration: 30,
            thresholds: ThresholdSet::uniform(1.0, 1.0),
            max_iterations: 10,
            seed: 5,
            ..EngineConfig::default()
        };
        let space = ParameterSpace::standard();
        let result = calibrate(
            &ConstSim,
            Resolution::Hourly,
            &measurements,
            &weather,
            &schedules,
            &space,
            &config,
        )
        .unwrap();
        assert_eq!(result.stopping, StoppingReason::Converged);
        assert_eq!(result.iterations.len(), 2);
        assert_eq!(result.iterations[0].thetas, result.iterations[1].thetas);
    }

    #[test]
    fn batch_size_does_not_change_any_result() {
        let (sim, weather, schedules, measurements) = mock_setup(Resolution::Hourly, 2);
        let run = |batch_size: usize| {
            let config = EngineConfig {
                samples_per_iteration: 40,
                max_iterations: 6,
                thresholds: ThresholdSet::uniform(0.5, 0.5),
                improvement_tol: 1e-9,
                batch_size,
                seed: 11,
                ..EngineConfig::default()
            };
            calibrate(
                &sim,
                Resolution::Hourly,
                &measurements,
                &weather,
                &schedules,
                &sim.space,
                &config,
            )
            .unwrap()
        };
        let serial = run(1);
        let chunked = run(7);
        let wide = run(64);
        // Bitwise equality of everything serialized (wall time is skipped).
        let json = |r: &CalibrationResult| serde_json::to_string(r).unwrap();
        assert_eq!(json(&serial), json(&chunked));
        assert_eq!(json(&serial), json(&wide));
    }

    /// Rejects any vector whose first coordinate is above the range middle.
    struct HalfFailSim {
        inner: MockSim,
    }

    impl Simulator for HalfFailSim {
        fn run(
            &self,
            params: &ParameterVector,
            weather: &WeatherSeries,
            schedules: &ScheduleSet,
            timestep: Resolution,
        ) -> Result<SimulationOutput> {
            let def = &self.inner.space.defs()[0];
            if params.0[0] > (def.lo + def.hi) / 2.0 {
                return Err(Error::UnstableSimulation { step: 0, temp: 999.0 });
            }
            self.inner.run(params, weather, schedules, timestep)
        }
    }

    #[test]
    fn evaluate_batch_keeps_order_and_isolates_failures() {
        let (sim, weather, schedules, measurements) = mock_setup(Resolution::Hourly, 2);
        let half = HalfFailSim { inner: sim };
        let ctx = EvalContext {
            simulator: &half,
            weather: &weather,
            schedules: &schedules,
            timestep: Resolution::Hourly,
            resolution: Resolution::Hourly,
            measurements: &measurements,
        };
        let vectors = lhs(&half.inner.space, 24, 9);
        let def = &half.inner.space.defs()[0];
        let mid = (def.lo + def.hi) / 2.0;
        let outcomes = evaluate_batch(&ctx, &vectors, 5).unwrap();
        assert_eq!(outcomes.len(), vectors.len());
        for (v, outcome) in vectors.iter().zip(&outcomes) {
            assert_eq!(v.0[0] > mid, outcome.is_err());
        }
        // Identical across batch sizes, entry by entry.
        let again = evaluate_batch(&ctx, &vectors, 24).unwrap();
        for (a, b) in outcomes.iter().zip(&again) {
            match (a, b) {
                (Ok(x), Ok(y)) => assert_eq!(x, y),
                (Err(_), Err(_)) => {}
                _ => panic!("batch size changed an outcome"),
            }
        }
    }

    /// Always fails.
    struct BrokenSim;

    impl Simulator for BrokenSim {
        fn run(
            &self,
            _: &ParameterVector,
            _: &WeatherSeries,
            _: &ScheduleSet,
            _: Resolution,
        ) -> Result<SimulationOutput> {
            Err(Error::UnstableSimulation { step: 1, temp: 1e6 })
        }
    }

    #[test]
    fn all_failures_abort_with_the_first_error() {
        let (_, weather, schedules, measurements) = mock_setup(Resolution::Hourly, 2);
        let space = ParameterSpace::standard();
        let ctx = EvalContext {
            simulator: &BrokenSim,
            weather: &weather,
            schedules: &schedules,
            timestep: Resolution::Hourly,
            resolution: Resolution::Hourly,
            measurements: &measurements,
        };
        let vectors = lhs(&space, 5, 1);
        match evaluate_batch(&ctx, &vectors, 2) {
            Err(Error::AllSamplesFailed { first }) => assert!(first.contains("unstable")),
            other => panic!("expected AllSamplesFailed, got {other:?}"),
        }
    }

    #[test]
    fn m_equals_k_is_degenerate_but_legal() {
        let (sim, weather, schedules, measurements) = mock_setup(Resolution::Hourly, 2);
        let config = EngineConfig {
            samples_per_iteration: 10,
            elite_count: Some(10),
            thresholds: ThresholdSet::uniform(0.0, 0.0),
            max_iterations: 4,
            seed: 2,
            ..EngineConfig::default()
        };
        let result = calibrate(
            &sim,
            Resolution::Hourly,
            &measurements,
            &weather,
            &schedules,
            &sim.space,
            &config,
        )
        .unwrap();
        assert!(result.iterations.iter().all(|r| r.elites.len() == 10));
        assert!(result.n_simulations >= 10);
    }

    #[test]
    fn coarse_resolutions_aggregate_hourly_runs() {
        let (sim, weather, schedules, measurements) = mock_setup(Resolution::Daily, 6);
        assert_eq!(weather.resolution, Resolution::Hourly);
        assert!(measurements.iter().all(|m| m.resolution == Resolution::Daily));
        let config = EngineConfig {
            samples_per_iteration: 20,
            thresholds: ThresholdSet::uniform(20.0, 20.0),
            max_iterations: 8,
            seed: 13,
            ..EngineConfig::default()
        };
        let result = calibrate(
            &sim,
            Resolution::Daily,
            &measurements,
            &weather,
            &schedules,
            &sim.space,
            &config,
        )
        .unwrap();
        assert_eq!(result.resolution, Resolution::Daily);
        assert!(result
            .best_report
            .channels
            .iter()
            .all(|c| c.n_points == 6));
    }

    #[test]
    fn channels_without_usable_measurements_are_skipped() {
        let (sim, weather, schedules, mut measurements) = mock_setup(Resolution::Hourly, 2);
        let n = measurements[1].len();
        measurements[1] = MeteredSeries::complete(
            Channel::Cooling,
            measurements[1].start,
            Resolution::Hourly,
            vec![0.0; n],
        )
        .unwrap();
        let config = EngineConfig {
            samples_per_iteration: 20,
            thresholds: ThresholdSet::uniform(15.0, 15.0),
            max_iterations: 10,
            seed: 4,
            ..EngineConfig::default()
        };
        let result = calibrate(
            &sim,
            Resolution::Hourly,
            &measurements,
            &weather,
            &schedules,
            &sim.space,
            &config,
        )
        .unwrap();
        assert_eq!(result.skipped_channels, vec![Channel::Cooling]);
        assert_eq!(
            result.channels,
            vec![Channel::Heating, Channel::Electricity, Channel::Dhw]
        );
        assert!(result.best_report.channel(Channel::Cooling).is_none());
    }

    #[test]
    fn cross_evaluate_reuses_the_min1_fit_for_min1_models() {
        let sim = MockSim::standard();
        let n_days = 1;
        let min1_weather = test_weather(Resolution::Min1, n_days);
        let schedules = test_schedules(n_days);
        let truth = sim
            .run(&sim.target.clone(), &min1_weather, &schedules.expand_to(Resolution::Min1).unwrap(), Resolution::Min1)
            .unwrap();
        let min1_measurements: Vec<MeteredSeries> =
            Channel::ALL.iter().map(|&c| truth.channel(c).clone()).collect();
        let hourly_weather = test_weather(Resolution::Hourly, n_days);
        let hourly_measurements: Vec<MeteredSeries> = min1_measurements
            .iter()
            .map(|m| crate::series::aggregate(m, Resolution::Hourly).unwrap())
            .collect();
        let config = EngineConfig {
            samples_per_iteration: 40,
            thresholds: ThresholdSet::uniform(8.0, 8.0),
            improvement_tol: 1e-9,
            max_iterations: 25,
            seed: 17,
            ..EngineConfig::default()
        };
        let at_min1 = calibrate(
            &sim,
            Resolution::Min1,
            &min1_measurements,
            &min1_weather,
            &schedules,
            &sim.space,
            &config,
        )
        .unwrap();
        let at_hourly = calibrate(
            &sim,
            Resolution::Hourly,
            &hourly_measurements,
            &hourly_weather,
            &schedules,
            &sim.space,
            &config,
        )
        .unwrap();
        let models = [
            CalibratedModel { result: &at_min1, schedules: &schedules },
            CalibratedModel { result: &at_hourly, schedules: &schedules },
        ];
        let matrix = cross_evaluate(&sim, &models, &min1_weather, &min1_measurements).unwrap();
        assert_eq!(matrix.rows.len(), 2);
        // A model calibrated at min1 is re-simulated on identical inputs.
        assert_eq!(matrix.rows[0].in_resolution, matrix.rows[0].at_min1);
        // The hourly model still produces a full fine-grained report.
        assert_eq!(matrix.rows[1].at_min1.channels.len(), 4);
        assert!(matrix.rows[1]
            .at_min1
            .channels
            .iter()
            .all(|c| c.cvrmse.is_finite()));
    }

    #[test]
    fn prior_report_summarizes_elites() {
        let space = ParameterSpace::standard();
        let fixed = ParameterVector(space.defs().iter().map(|d| (d.lo + d.hi) / 2.0).collect());
        let report = FitReport { channels: vec![] };
        let degenerate = CalibrationResult {
            resolution: Resolution::Hourly,
            channels: vec![],
            skipped_channels: vec![],
            iterations: vec![],
            elites: vec![fixed.clone(), fixed.clone(), fixed.clone()],
            best: fixed.clone(),
            best_report: report.clone(),
            stopping: StoppingReason::MaxIterations,
            n_simulations: 0,
            wall_seconds: 0.0,
        };
        let summaries = prior_report(&[degenerate.clone()], &space).unwrap();
        assert_eq!(summaries.len(), space.dims());
        for s in &summaries {
            assert_eq!(s.std, 0.0);
            assert_eq!(s.p5, s.mean);
            assert_eq!(s.p95, s.mean);
        }

        let spread = CalibrationResult {
            elites: lhs(&space, 25, 31),
            ..degenerate
        };
        let summaries = prior_report(&[spread], &space).unwrap();
        for (s, def) in summaries.iter().zip(space.defs()) {
            assert_eq!(s.variable, def.name);
            assert!(s.p5 <= s.mean && s.mean <= s.p95);
            assert!(s.p5 >= def.lo && s.p95 <= def.hi);
            assert!(s.std > 0.0);
        }
    }

    #[test]
    fn percentile_interpolates_linearly() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&xs, 0.0), 1.0);
        assert_eq!(percentile(&xs, 1.0), 5.0);
        assert_eq!(percentile(&xs, 0.5), 3.0);
        assert!((percentile(&xs, 0.05) - 1.2).abs() < 1e-12);
        assert!((percentile(&xs, 0.95) - 4.8).abs() < 1e-12);
    }

    #[test]
    fn config_validation_rejects_bad_shapes() {
        let bad_k = EngineConfig { samples_per_iteration: 10, elite_count: Some(11), ..EngineConfig::default() };
        assert!(bad_k.validate().is_err());
        let tiny_k = EngineConfig { samples_per_iteration: 10, elite_count: Some(1), ..EngineConfig::default() };
        assert!(tiny_k.validate().is_err());
        let bad_tol = EngineConfig { improvement_tol: 0.0, ..EngineConfig::default() };
        assert!(bad_tol.validate().is_err());
        let bad_batch = EngineConfig { batch_size: 0, ..EngineConfig::default() };
        assert!(bad_batch.validate().is_err());
        assert!(EngineConfig::default().validate().is_ok());
        assert_eq!(EngineConfig::default().elites(), 20);
    }

    #[test]
    fn csv_writers_emit_documented_headers() {
        let dir = tempfile::tempdir().unwrap();
        let fit = FitReport {
            channels: vec![crate::metrics::ChannelFit {
                channel: Channel::Heating,
                cvrmse: 12.5,
                nmbe: -3.25,
                n_points: 48,
            }],
        };
        let matrix = ResolutionMatrix {
            rows: vec![ResolutionRow {
                resolution: Resolution::Hourly,
                in_resolution: fit.clone(),
                at_min1: fit,
                iterations: 3,
                n_simulations: 120,
                stopping: StoppingReason::ThresholdMet,
                wall_seconds: 1.25,
            }],
        };
        let t4 = dir.path().join("table4.csv");
        let t5 = dir.path().join("table5.csv");
        let tt = dir.path().join("timings.csv");
        matrix.write_in_resolution_csv(&t4).unwrap();
        matrix.write_min1_csv(&t5).unwrap();
        matrix.write_timings_csv(&tt).unwrap();
        let t4 = fs::read_to_string(t4).unwrap();
        assert_eq!(
            t4,
            "resolution,channel,cvrmse,nmbe\nhourly,heating,12.5,-3.25\n"
        );
        assert_eq!(t4, fs::read_to_string(t5).unwrap());
        let tt = fs::read_to_string(tt).unwrap();
        assert!(tt.starts_with("resolution,wall_seconds,iterations,n_simulations,stopping\n"));
        assert!(tt.contains("hourly,1.250,3,120,threshold-met"));

        let priors = vec![PriorSummary {
            resolution: Resolution::Min5,
            variable: "heating_setpoint".into(),
            mean: 20.5,
            std: 0.25,
            p5: 20.0,
            p95: 21.0,
        }];
        let pp = dir.path().join("priors.csv");
        write_priors_csv(&pp, &priors).unwrap();
        assert_eq!(
            fs::read_to_string(pp).unwrap(),
            "resolution,variable,mean,std,p5,p95\nmin5,heating_setpoint,20.5,0.25,20,21\n"
        );
    }
}
