//! Command-line pipeline: `synth` generates the bundled dataset, `prepare`
//! turns raw meter and weather files into a multi-resolution bundle,
//! `calibrate` runs the sampling loop per resolution and writes the result
//! artifacts, `report` prints them.
//!
//! A single TOML file is the source of truth for a run; the few flags that
//! exist override config fields rather than adding new behavior, so a run
//! is reproducible from the config and seed alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{
    calibrate, cross_evaluate, prior_report, simulation_timestep, write_priors_csv,
    CalibratedModel, CalibrationResult, EngineConfig, PriorSummary, ResolutionMatrix,
};
use crate::error::{Error, Result};
use crate::profiles::{ScheduleSet, K_MAX_DEFAULT, K_MIN_DEFAULT};
use crate::sampler::{ParamDef, ParameterSpace};
use crate::series::{aggregate, infill_linear, Channel, MeteredSeries, Resolution, MAX_GAP_SECONDS};
use crate::simulator::{BuildingSpec, ZoneModel};
use crate::synth::{generate_dataset, SynthSpec};
use crate::util::mix_seed;
use crate::weather::{infill_weather, resample_weather, Site, WeatherSeries};

/// Weather files are written for every simulatable timestep.
const WEATHER_RESOLUTIONS: [Resolution; 5] = [
    Resolution::Min1,
    Resolution::Min5,
    Resolution::Min15,
    Resolution::Min30,
    Resolution::Hourly,
];

/// Resolutions fine enough for day-shape mining; the coarser ones fall back
/// to the nominal residential day.
const MINED_RESOLUTIONS: [Resolution; 6] = [
    Resolution::Min1,
    Resolution::Min5,
    Resolution::Min15,
    Resolution::Min30,
    Resolution::Hourly,
    Resolution::Hour6,
];

/// Input and output locations, resolved relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub heating: PathBuf,
    pub cooling: PathBuf,
    pub electricity: PathBuf,
    pub dhw: PathBuf,
    pub weather_primary: PathBuf,
    /// Complete nearby-station record used to patch primary gaps.
    pub weather_secondary: Option<PathBuf>,
    /// Where `synth` records the generating parameter vector.
    pub truth: PathBuf,
}

impl Default for DataPaths {
    fn default() -> Self {
        DataPaths {
            heating: "data/raw/heating.csv".into(),
            cooling: "data/raw/cooling.csv".into(),
            electricity: "data/raw/electricity.csv".into(),
            dhw: "data/raw/dhw.csv".into(),
            weather_primary: "data/raw/weather_primary.csv".into(),
            weather_secondary: Some("data/raw/weather_secondary.csv".into()),
            truth: "data/raw/truth.json".into(),
        }
    }
}

impl DataPaths {
    pub fn channel(&self, channel: Channel) -> &Path {
        match channel {
            Channel::Heating => &self.heating,
            Channel::Cooling => &self.cooling,
            Channel::Electricity => &self.electricity,
            Channel::Dhw => &self.dhw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfilesConfig {
    pub k_min: usize,
    pub k_max: usize,
    /// Only breaks exact clustering ties; kept apart from the engine seed
    /// so seed sweeps reuse one prepared bundle.
    pub seed: u64,
}

impl Default for ProfilesConfig {
    fn default() -> Self {
        ProfilesConfig { k_min: K_MIN_DEFAULT, k_max: K_MAX_DEFAULT, seed: 0 }
    }
}

/// The run configuration. Every field has a default, so the empty file is
/// a valid config; unknown keys are rejected to catch typos.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    /// Resolutions to calibrate; defaults to all eight.
    pub resolutions: Vec<Resolution>,
    /// Coordinates of the building; `synth` generates weather for the same
    /// site so the pipeline stays consistent.
    pub site: Site,
    pub paths: DataPaths,
    pub building: BuildingSpec,
    /// Plausible-range overrides: variable name -> [lo, hi].
    pub space: BTreeMap<String, [f64; 2]>,
    pub engine: EngineConfig,
    pub profiles: ProfilesConfig,
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out_dir: "runs".into(),
            resolutions: Resolution::ALL.to_vec(),
            site: Site { latitude_deg: 47.4, longitude_deg: 8.3 },
            paths: DataPaths::default(),
            building: BuildingSpec::default(),
            space: BTreeMap::new(),
            engine: EngineConfig::default(),
            profiles: ProfilesConfig::default(),
            synth: SynthSpec::default(),
        }
    }
}

impl RunConfig {
    /// Parses the TOML file and resolves every relative path against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.engine.validate()?;
        self.building.validate()?;
        if self.profiles.k_min < 2 || self.profiles.k_max < self.profiles.k_min {
            return Err(Error::Config(format!(
                "profiles cluster range {}..={} is invalid (k_min must be >= 2)",
                self.profiles.k_min, self.profiles.k_max
            )));
        }
        if self.resolutions.is_empty() {
            return Err(Error::Config("resolutions must not be empty".into()));
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        fn resolve(base: &Path, p: &mut PathBuf) {
            if p.is_relative() {
                *p = base.join(&p);
            }
        }
        resolve(base, &mut self.out_dir);
        resolve(base, &mut self.paths.heating);
        resolve(base, &mut self.paths.cooling);
        resolve(base, &mut self.paths.electricity);
        resolve(base, &mut self.paths.dhw);
        resolve(base, &mut self.paths.weather_primary);
        if let Some(p) = &mut self.paths.weather_secondary {
            resolve(base, p);
        }
        resolve(base, &mut self.paths.truth);
    }

    /// The parameter space after applying `[space]` range overrides.
    pub fn parameter_space(&self) -> Result<ParameterSpace> {
        let mut space = ParameterSpace::standard();
        for (name, [lo, hi]) in &self.space {
            space.set_range(name, *lo, *hi)?;
        }
        Ok(space)
    }

    pub fn bundle_dir(&self) -> PathBuf {
        self.out_dir.join("prepared")
    }

    pub fn results_dir(&self) -> PathBuf {
        self.out_dir.join("results")
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "bemcal",
    about = "Black-box calibration of building energy models across measurement resolutions",
    version
)]
pub struct Cli {
    /// Run configuration file.
    #[arg(long, global = true, default_value = "bemcal.toml")]
    pub config: PathBuf,
    /// Overrides the engine and synthesis seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Comma-separated subset of resolutions to calibrate.
    #[arg(long, global = true, value_delimiter = ',')]
    pub resolutions: Option<Vec<String>>,
    /// Worker threads for batch simulation; defaults to all cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate the synthetic raw dataset at the configured input paths.
    Synth,
    /// Build the multi-resolution bundle from the raw inputs.
    Prepare,
    /// Calibrate every requested resolution and write result artifacts.
    Calibrate,
    /// Print the result tables of a finished calibration.
    Report,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Config(format!("could not size the worker pool: {e}")))?;
    }
    let mut config = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.engine.seed = seed;
        config.synth.seed = seed;
    }
    if let Some(names) = &cli.resolutions {
        let mut parsed = Vec::with_capacity(names.len());
        for name in names {
            parsed.push(Resolution::parse(name)?);
        }
        config.resolutions = parsed;
        config.validate()?;
    }
    if let Some(out) = cli.out {
        config.out_dir = out;
    }
    match cli.command {
        Command::Synth => cmd_synth(&config).map(|_| ()),
        Command::Prepare => cmd_prepare(&config).map(|_| ()),
        Command::Calibrate => cmd_calibrate(&config).map(|_| ()),
        Command::Report => cmd_report(&config, &mut io::stdout().lock()),
    }
}

/// The generating parameters of a synthetic dataset, stored next to the
/// raw files so recovery can be scored later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub true_params: BTreeMap<String, f64>,
    pub spec: SynthSpec,
}

/// Generates the synthetic raw dataset and writes it to the configured
/// input paths, so `prepare` consumes it like real metered data.
pub fn cmd_synth(config: &RunConfig) -> Result<TruthFile> {
    let spec = SynthSpec { site: config.site, ..config.synth.clone() };
    let dataset = generate_dataset(&spec)?;

    for series in &dataset.measurements {
        let path = config.paths.channel(series.channel);
        ensure_parent(path)?;
        series.write_csv(path)?;
    }
    ensure_parent(&config.paths.weather_primary)?;
    dataset.weather.primary.write_csv(&config.paths.weather_primary)?;
    match &config.paths.weather_secondary {
        Some(path) => {
            ensure_parent(path)?;
            dataset.weather.secondary.write_csv(path)?;
        }
        None if dataset.weather.primary.missing_count() > 0 => {
            log::warn!("primary weather has gaps but no secondary path is configured; prepare will fail");
        }
        None => {}
    }

    let space = ParameterSpace::standard();
    let truth = TruthFile {
        true_params: space
            .defs()
            .iter()
            .zip(dataset.true_params.as_slice())
            .map(|(def, v)| (def.name.clone(), *v))
            .collect(),
        spec,
    };
    ensure_parent(&config.paths.truth)?;
    write_json(&config.paths.truth, &truth)?;
    println!(
        "synthesized {} days x {} channels at min1 (noise {}, seed {}) into {}",
        dataset.weather.actual.len() / 1440,
        dataset.measurements.len(),
        config.synth.noise_level,
        config.synth.seed,
        config.paths.heating.parent().unwrap_or(Path::new(".")).display()
    );
    Ok(truth)
}

/// A contiguous run of steps that stayed missing after infill.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingRun {
    pub start: String,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FillStats {
    pub filled_steps: usize,
    pub remaining: Vec<MissingRun>,
}

/// Provenance record of a prepared bundle: input digests, what infill did,
/// and the digest of every written artifact. Deterministic, so re-running
/// `prepare` on the same inputs reproduces it byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareManifest {
    pub site: Site,
    pub start: String,
    pub n_days: usize,
    pub profiles: ProfilesConfig,
    pub inputs: BTreeMap<String, String>,
    pub measurement_fill: BTreeMap<String, FillStats>,
    pub weather_filled_points: usize,
    pub artifacts: BTreeMap<String, String>,
}

/// Ingests the raw files, infills small gaps, merges the weather stations,
/// and writes the eight-resolution bundle: measurements, weather with the
/// derived irradiance split, and mined (or nominal) schedules.
pub fn cmd_prepare(config: &RunConfig) -> Result<PrepareManifest> {
    let bundle = config.bundle_dir();
    let mut inputs = BTreeMap::new();

    // Meter channels: read, digest, infill what a short gap can justify.
    let mut filled_series = Vec::with_capacity(Channel::ALL.len());
    let mut measurement_fill = BTreeMap::new();
    for channel in Channel::ALL {
        let path = config.paths.channel(channel);
        inputs.insert(format!("measurements/{channel}"), sha256_file(path)?);
        let raw = MeteredSeries::read_csv(path, channel)?;
        if raw.resolution != Resolution::Min1 {
            return Err(Error::Config(format!(
                "{channel} measurements must be at min1 to build the full bundle, got {}",
                raw.resolution
            )));
        }
        let filled = infill_linear(&raw, MAX_GAP_SECONDS)?;
        let missing_before = raw.len() - raw.observed_count();
        let missing_after = filled.len() - filled.observed_count();
        measurement_fill.insert(
            channel.name().to_string(),
            FillStats {
                filled_steps: missing_before - missing_after,
                remaining: missing_runs(&filled),
            },
        );
        filled_series.push(filled);
    }
    let start = filled_series[0].start;
    let len = filled_series[0].len();
    for s in &filled_series {
        if s.start != start || s.len() != len {
            return Err(Error::MetadataMismatch(format!(
                "{} span differs from heating ({} vs {} steps)",
                s.channel,
                s.len(),
                len
            )));
        }
    }
    if len % 1440 != 0 {
        return Err(Error::PartialDays { len, steps_per_day: 1440 });
    }
    let n_days = len / 1440;

    // Weather: patch primary gaps from the secondary station, then split.
    let primary = WeatherSeries::read_csv(&config.paths.weather_primary, config.site)?;
    inputs.insert("weather/primary".into(), sha256_file(&config.paths.weather_primary)?);
    let (merged, weather_filled_points) = match &config.paths.weather_secondary {
        Some(path) => {
            let secondary = WeatherSeries::read_csv(path, config.site)?;
            inputs.insert("weather/secondary".into(), sha256_file(path)?);
            let (merged, filled) = infill_weather(&primary, &secondary)?;
            (merged, filled.len())
        }
        None if primary.missing_count() > 0 => {
            return Err(Error::Config(
                "primary weather has gaps and no secondary station is configured".into(),
            ));
        }
        None => (primary, 0),
    };
    if merged.resolution != Resolution::Min1 {
        return Err(Error::Config(format!(
            "weather must be at min1 to build the full bundle, got {}",
            merged.resolution
        )));
    }
    if merged.start != start || merged.len() != len {
        return Err(Error::MetadataMismatch(format!(
            "weather span {} x{} does not cover the measurements {} x{}",
            merged.start,
            merged.len(),
            start,
            len
        )));
    }

    let weather_dir = bundle.join("weather");
    fs::create_dir_all(&weather_dir)?;
    for resolution in WEATHER_RESOLUTIONS {
        let w = resample_weather(&merged, resolution)?;
        w.write_csv_with_split(&weather_dir.join(format!("{resolution}.csv")))?;
    }

    for resolution in Resolution::ALL {
        let dir = bundle.join("measurements").join(resolution.name());
        fs::create_dir_all(&dir)?;
        for series in &filled_series {
            let agg = aggregate(series, resolution)?;
            agg.write_csv(&dir.join(format!("{}.csv", series.channel)))?;
        }
    }

    // Day-shape mining per resolution; electricity and DHW carry the shape
    // information.
    for (i, resolution) in MINED_RESOLUTIONS.into_iter().enumerate() {
        let elec = aggregate(&filled_series[2], resolution)?;
        let dhw = aggregate(&filled_series[3], resolution)?;
        let schedules = ScheduleSet::mine(
            &elec,
            &dhw,
            config.profiles.k_min,
            config.profiles.k_max,
            mix_seed(config.profiles.seed, i as u64),
        )?;
        schedules.write_dir(&bundle.join("schedules").join(resolution.name()))?;
    }

    let artifacts = digest_tree(&bundle, &["manifest.json"])?;
    let manifest = PrepareManifest {
        site: config.site,
        start: start.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        n_days,
        profiles: config.profiles,
        inputs,
        measurement_fill,
        weather_filled_points,
        artifacts,
    };
    write_json(&bundle.join("manifest.json"), &manifest)?;
    println!(
        "prepared {} days into {} ({} resolutions, {} weather files)",
        n_days,
        bundle.display(),
        Resolution::ALL.len(),
        WEATHER_RESOLUTIONS.len()
    );
    Ok(manifest)
}

/// Everything a finished calibration wrote, in one deserializable file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub engine: EngineConfig,
    pub space: Vec<ParamDef>,
    pub results: Vec<CalibrationResult>,
    pub matrix: ResolutionMatrix,
    pub priors: Vec<PriorSummary>,
    /// Resolutions that failed, with the error text; they are absent from
    /// `results` and `matrix`.
    pub failures: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrateManifest {
    pub seed: u64,
    pub resolutions: Vec<Resolution>,
    pub bundle_manifest: String,
    pub failures: BTreeMap<String, String>,
    /// Digests of the deterministic artifacts; `timings.csv` is excluded
    /// because wall time varies run to run.
    pub artifacts: BTreeMap<String, String>,
}

/// Calibrates every requested resolution against the prepared bundle, then
/// cross-evaluates all calibrated models at 1-minute steps and writes the
/// result tables. A resolution that fails is reported and skipped; the
/// command fails only when nothing succeeds.
pub fn cmd_calibrate(config: &RunConfig) -> Result<ResultsFile> {
    let bundle = config.bundle_dir();
    let bundle_manifest_path = bundle.join("manifest.json");
    if !bundle_manifest_path.exists() {
        return Err(Error::Config(format!(
            "no prepared bundle at {} (run `bemcal prepare` first)",
            bundle.display()
        )));
    }
    let space = config.parameter_space()?;
    let model = ZoneModel::new(config.building.clone(), space.clone())?;

    let hourly_weather =
        WeatherSeries::read_csv(&bundle.join("weather/hourly.csv"), config.site)?;
    let start_date = hourly_weather.start.date_naive();
    let n_days = hourly_weather.len() / 24;

    let mut calibrated: Vec<(CalibrationResult, ScheduleSet)> = Vec::new();
    let mut failures = BTreeMap::new();
    let mut first_error = None;
    for &resolution in &config.resolutions {
        log::info!("calibrating {resolution} (m={}, seed {})", config.engine.samples_per_iteration, config.engine.seed);
        let attempt = (|| -> Result<(CalibrationResult, ScheduleSet)> {
            let timestep = simulation_timestep(resolution);
            let weather = if timestep == Resolution::Hourly {
                hourly_weather.clone()
            } else {
                WeatherSeries::read_csv(
                    &bundle.join("weather").join(format!("{timestep}.csv")),
                    config.site,
                )?
            };
            let schedules = if MINED_RESOLUTIONS.contains(&resolution) {
                ScheduleSet::read_dir(&bundle.join("schedules").join(resolution.name()))?
            } else {
                log::warn!(
                    "{resolution}: measurements cannot resolve a day shape; using the nominal day"
                );
                ScheduleSet::nominal(start_date, n_days)
            };
            let mut measurements = Vec::with_capacity(Channel::ALL.len());
            for channel in Channel::ALL {
                let path = bundle
                    .join("measurements")
                    .join(resolution.name())
                    .join(format!("{channel}.csv"));
                measurements.push(MeteredSeries::read_csv(&path, channel)?);
            }
            let result = calibrate(
                &model,
                resolution,
                &measurements,
                &weather,
                &schedules,
                &space,
                &config.engine,
            )?;
            log::info!(
                "{resolution}: {} after {} iterations ({} simulations, {:.1} s)",
                result.stopping,
                result.iterations.len(),
                result.n_simulations,
                result.wall_seconds
            );
            Ok((result, schedules))
        })();
        match attempt {
            Ok(pair) => calibrated.push(pair),
            Err(e) => {
                log::error!("{resolution}: calibration failed: {e}");
                failures.insert(resolution.name().to_string(), e.to_string());
                first_error.get_or_insert(e);
            }
        }
    }
    if calibrated.is_empty() {
        return Err(first_error.expect("at least one resolution was requested"));
    }

    let min1_weather = WeatherSeries::read_csv(&bundle.join("weather/min1.csv"), config.site)?;
    let mut min1_measurements = Vec::with_capacity(Channel::ALL.len());
    for channel in Channel::ALL {
        let path = bundle.join("measurements/min1").join(format!("{channel}.csv"));
        min1_measurements.push(MeteredSeries::read_csv(&path, channel)?);
    }
    let models: Vec<CalibratedModel> = calibrated
        .iter()
        .map(|(result, schedules)| CalibratedModel { result, schedules })
        .collect();
    let matrix = cross_evaluate(&model, &models, &min1_weather, &min1_measurements)?;
    let results: Vec<CalibrationResult> = calibrated.into_iter().map(|(r, _)| r).collect();
    let priors = prior_report(&results, &space)?;

    let results_dir = config.results_dir();
    fs::create_dir_all(&results_dir)?;
    matrix.write_in_resolution_csv(&results_dir.join("table4.csv"))?;
    matrix.write_min1_csv(&results_dir.join("table5.csv"))?;
    matrix.write_timings_csv(&results_dir.join("timings.csv"))?;
    write_priors_csv(&results_dir.join("priors.csv"), &priors)?;
    let results_file = ResultsFile {
        engine: config.engine.clone(),
        space: space.defs().to_vec(),
        results,
        matrix,
        priors,
        failures: failures.clone(),
    };
    write_json(&results_dir.join("results.json"), &results_file)?;

    let mut artifacts = BTreeMap::new();
    for name in ["table4.csv", "table5.csv", "priors.csv", "results.json"] {
        artifacts.insert(name.to_string(), sha256_file(&results_dir.join(name))?);
    }
    let manifest = CalibrateManifest {
        seed: config.engine.seed,
        resolutions: config.resolutions.clone(),
        bundle_manifest: sha256_file(&bundle_manifest_path)?,
        failures,
        artifacts,
    };
    write_json(&results_dir.join("manifest.json"), &manifest)?;
    println!(
        "calibrated {}/{} resolutions into {}",
        results_file.results.len(),
        config.resolutions.len(),
        results_dir.display()
    );
    Ok(results_file)
}

/// Prints the fit tables, run cost and elite-set priors of a finished
/// calibration.
pub fn cmd_report(config: &RunConfig, out: &mut impl io::Write) -> Result<()> {
    let results_dir = config.results_dir();
    let path = results_dir.join("results.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("cannot read {} (run `bemcal calibrate` first): {e}", path.display())))?;
    let results: ResultsFile = serde_json::from_str(&text)?;

    writeln!(out, "fit at the calibration resolution")?;
    write_fit_grid(out, &results.matrix, |row| &row.in_resolution)?;
    writeln!(out)?;
    writeln!(out, "re-evaluated against 1-minute measurements")?;
    write_fit_grid(out, &results.matrix, |row| &row.at_min1)?;
    writeln!(out)?;

    writeln!(out, "run cost")?;
    writeln!(out, "  {:<10} {:>10} {:>12} {:>15}", "resolution", "iterations", "simulations", "stopping")?;
    for row in &results.matrix.rows {
        writeln!(
            out,
            "  {:<10} {:>10} {:>12} {:>15}",
            row.resolution.name(),
            row.iterations,
            row.n_simulations,
            row.stopping.to_string()
        )?;
    }
    let timings = results_dir.join("timings.csv");
    if let Ok(text) = fs::read_to_string(&timings) {
        writeln!(out, "  wall seconds ({}):", timings.display())?;
        for line in text.lines().skip(1) {
            let mut cols = line.split(',');
            if let (Some(res), Some(wall)) = (cols.next(), cols.next()) {
                writeln!(out, "  {res:<10} {wall:>10}")?;
            }
        }
    }
    writeln!(out)?;

    writeln!(out, "elite-set priors (mean +/- std [p5, p95])")?;
    let mut by_variable: BTreeMap<&str, Vec<&PriorSummary>> = BTreeMap::new();
    for p in &results.priors {
        by_variable.entry(p.variable.as_str()).or_default().push(p);
    }
    for (variable, rows) in by_variable {
        writeln!(out, "  {variable}")?;
        for p in rows {
            writeln!(
                out,
                "    {:<10} {:.6} +/- {:.6} [{:.6}, {:.6}]",
                p.resolution.name(),
                p.mean,
                p.std,
                p.p5,
                p.p95
            )?;
        }
    }
    if !results.failures.is_empty() {
        writeln!(out)?;
        writeln!(out, "failed resolutions")?;
        for (res, err) in &results.failures {
            writeln!(out, "  {res}: {err}")?;
        }
    }
    Ok(())
}

fn write_fit_grid(
    out: &mut impl io::Write,
    matrix: &ResolutionMatrix,
    pick: impl Fn(&crate::engine::ResolutionRow) -> &crate::metrics::FitReport,
) -> Result<()> {
    let channels: Vec<Channel> = Channel::ALL.to_vec();
    let mut header = format!("  {:<10}", "resolution");
    for c in &channels {
        write!(header, " {:>22}", format!("{c} cvrmse/nmbe")).expect("string write");
    }
    writeln!(out, "{header}")?;
    for row in &matrix.rows {
        let report = pick(row);
        let mut line = format!("  {:<10}", row.resolution.name());
        for c in &channels {
            match report.channel(*c) {
                Some(fit) => write!(line, " {:>22}", format!("{:.2}/{:.2}", fit.cvrmse, fit.nmbe))
                    .expect("string write"),
                None => write!(line, " {:>22}", "-").expect("string write"),
            }
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Digests every file under `root` (sorted relative paths), skipping names
/// in `exclude`.
fn digest_tree(root: &Path, exclude: &[&str]) -> Result<BTreeMap<String, String>> {
    fn walk(dir: &Path, files: &mut Vec<PathBuf>) -> Result<()> {
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(&path, files)?;
            } else {
                files.push(path);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(root, &mut files)?;
    let mut out = BTreeMap::new();
    for path in files {
        let rel = path
            .strip_prefix(root)
            .expect("walked under root")
            .to_string_lossy()
            .replace('\\', "/");
        if exclude.contains(&rel.as_str()) {
            continue;
        }
        out.insert(rel, sha256_file(&path)?);
    }
    Ok(out)
}

/// Contiguous missing runs of a series, as timestamps and step counts.
fn missing_runs(series: &MeteredSeries) -> Vec<MissingRun> {
    let missing = series.missing();
    let mut runs = Vec::new();
    let mut i = 0;
    while i < missing.len() {
        if missing[i] {
            let start = i;
            while i < missing.len() && missing[i] {
                i += 1;
            }
            runs.push(MissingRun {
                start: series
                    .timestamp_at(start)
                    .format("%Y-%m-%dT%H:%M:%SZ")
                    .to_string(),
                steps: i - start,
            });
        } else {
            i += 1;
        }
    }
    runs
}
