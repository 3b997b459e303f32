//! The proposal machinery of the calibration loop: the plausible parameter
//! ranges, Latin hypercube seeding, Gaussian-mixture fits on elite samples
//! and truncated resampling from the fitted mixture.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::mix_seed;

/// The fourteen calibrated variables, in serialization order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamId {
    OccupantGainDensity,
    AppliancePowerDensity,
    LightingPowerDensity,
    ApplianceRadiantFraction,
    LightingRadiantFraction,
    VentilationRate,
    InfiltrationRate,
    HeatingSetpoint,
    CoolingSetpoint,
    GlassDirtFactor,
    WallInsulation,
    FloorCeilingInsulation,
    WindowInsulation,
    DhwPeakFlow,
}

impl ParamId {
    pub const ALL: [ParamId; 14] = [
        ParamId::OccupantGainDensity,
        ParamId::AppliancePowerDensity,
        ParamId::LightingPowerDensity,
        ParamId::ApplianceRadiantFraction,
        ParamId::LightingRadiantFraction,
        ParamId::VentilationRate,
        ParamId::InfiltrationRate,
        ParamId::HeatingSetpoint,
        ParamId::CoolingSetpoint,
        ParamId::GlassDirtFactor,
        ParamId::WallInsulation,
        ParamId::FloorCeilingInsulation,
        ParamId::WindowInsulation,
        ParamId::DhwPeakFlow,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|p| *p == self).unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDef {
    pub name: String,
    pub unit: String,
    pub lo: f64,
    pub hi: f64,
}

/// The plausible ranges the whole calibration is confined to. The standard
/// space has the fourteen [`ParamId`] variables; tests may build smaller
/// spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace {
    defs: Vec<ParamDef>,
}

impl ParameterSpace {
    pub fn new(defs: Vec<ParamDef>) -> Result<Self> {
        if defs.is_empty() {
            return Err(Error::Config("parameter space has no variables".into()));
        }
        for d in &defs {
            if !(d.lo.is_finite() && d.hi.is_finite() && d.lo < d.hi) {
                return Err(Error::Config(format!(
                    "range for {} must satisfy lo < hi, got [{}, {}]",
                    d.name, d.lo, d.hi
                )));
            }
        }
        Ok(ParameterSpace { defs })
    }

    /// The built-in plausible ranges for every calibrated variable.
    pub fn standard() -> Self {
        let def = |name: &str, unit: &str, lo: f64, hi: f64| ParamDef {
            name: name.into(),
            unit: unit.into(),
            lo,
            hi,
        };
        ParameterSpace {
            defs: vec![
                def("occupant_gain_density", "W/m2", 0.9, 1.1),
                def("appliance_power_density", "W/m2", 10.0, 50.0),
                def("lighting_power_density", "W/m2", 2.0, 5.0),
                def("appliance_radiant_fraction", "%", 20.0, 40.0),
                def("lighting_radiant_fraction", "%", 30.0, 60.0),
                def("ventilation_rate", "m3/s/m2", 3.0e-4, 9.0e-4),
                def("infiltration_rate", "m3/s/m2", 3.0e-5, 9.0e-5),
                def("heating_setpoint", "degC", 18.0, 24.0),
                def("cooling_setpoint", "degC", 24.0, 27.0),
                def("glass_dirt_factor", "-", 0.5, 0.9),
                def("wall_insulation", "m", 0.05, 0.10),
                def("floor_ceiling_insulation", "m", 0.2, 0.4),
                def("window_insulation", "m", 5.0e-4, 1.5e-3),
                def("dhw_peak_flow", "m3/s", 1.0e-5, 1.0e-4),
            ],
        }
    }

    pub fn dims(&self) -> usize {
        self.defs.len()
    }

    pub fn defs(&self) -> &[ParamDef] {
        &self.defs
    }

    pub fn set_range(&mut self, name: &str, lo: f64, hi: f64) -> Result<()> {
        let def = self
            .defs
            .iter_mut()
            .find(|d| d.name == name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name:?}")))?;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!(
                "range for {name} must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        def.lo = lo;
        def.hi = hi;
        Ok(())
    }

    pub fn contains(&self, v: &ParameterVector) -> bool {
        v.0.len() == self.dims()
            && v.0
                .iter()
                .zip(&self.defs)
                .all(|(x, d)| *x >= d.lo && *x <= d.hi)
    }

    pub fn widths(&self) -> Vec<f64> {
        self.defs.iter().map(|d| d.hi - d.lo).collect()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.defs.iter().map(|d| (d.lo, d.hi)).collect()
    }

    /// Validates a vector against this space.
    pub fn check(&self, v: &ParameterVector) -> Result<()> {
        if v.0.len() != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                got: v.0.len(),
            });
        }
        for (x, d) in v.0.iter().zip(&self.defs) {
            if !(*x >= d.lo && *x <= d.hi) {
                return Err(Error::OutOfRange {
                    name: d.name.clone(),
                    value: *x,
                    lo: d.lo,
                    hi: d.hi,
                });
            }
        }
        Ok(())
    }
}

/// One candidate value per parameter space variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector(pub Vec<f64>);

impl ParameterVector {
    /// Value of one of the standard fourteen variables; panics on vectors
    /// from non-standard spaces, which never reach the simulator.
    pub fn get(&self, id: ParamId) -> f64 {
        self.0[id.index()]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Latin hypercube draw: for every dimension the m samples hit the m
/// equal-width strata exactly once, in seeded random order.
pub fn lhs(space: &ParameterSpace, m: usize, seed: u64) -> Vec<ParameterVector> {
    assert!(m >= 1, "lhs needs at least one sample");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let d = space.dims();
    let mut coords = vec![vec![0.0f64; d]; m];
    for (dim, def) in space.defs().iter().enumerate() {
        let mut strata: Vec<usize> = (0..m).collect();
        strata.shuffle(&mut rng);
        let width = (def.hi - def.lo) / m as f64;
        for (sample, &stratum) in strata.iter().enumerate() {
            let u: f64 = rng.gen();
            coords[sample][dim] = (def.lo + (stratum as f64 + u) * width).min(def.hi);
        }
    }
    coords.into_iter().map(ParameterVector).collect()
}

/// A Gaussian mixture over the parameter space together with the truncation
/// box resampling must respect.
///
/// Serializes to plain JSON: `weights` (sum 1), `means` (one vector per
/// component), `covariances` (row-major d x d per component, symmetric
/// positive definite) and `bounds` (`[lo, hi]` per dimension). Deserialized
/// models are re-validated before sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<f64>>,
    pub bounds: Vec<(f64, f64)>,
}

impl MixtureModel {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        covariances: Vec<Vec<f64>>,
        bounds: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let model = MixtureModel {
            weights,
            means,
            covariances,
            bounds,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dims(&self) -> usize {
        self.bounds.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.weights.len();
        let d = self.dims();
        if c == 0 || d == 0 || self.means.len() != c || self.covariances.len() != c {
            return Err(Error::Config(
                "mixture needs matching weights/means/covariances and at least one component"
                    .into(),
            ));
        }
        let sum: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "mixture weights must be non-negative and sum to 1, got sum {sum}"
            )));
        }
        for (lo, hi) in &self.bounds {
            if !(lo < hi) {
                return Err(Error::Config(format!(
                    "mixture bounds must satisfy lo < hi, got [{lo}, {hi}]"
                )));
            }
        }
        for (mean, cov) in self.means.iter().zip(&self.covariances) {
            if mean.len() != d || cov.len() != d * d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: mean.len().min(cov.len()),
                });
            }
            if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Config("mixture parameters must be finite".into()));
            }
            let m = DMatrix::from_row_slice(d, d, cov);
            let asym = (&m - m.transpose()).abs().max();
            if asym > 1e-9 * m.abs().max().max(1.0) {
                return Err(Error::Config("mixture covariance is not symmetric".into()));
            }
            if Cholesky::new(m).is_none() {
                return Err(Error::Config(
                    "mixture covariance is not positive definite".into(),
                ));
            }
        }
        Ok(())
    }

    fn component(&self, k: usize) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.dims();
        (
            DVector::from_column_slice(&self.means[k]),
            DMatrix::from_row_slice(d, d, &self.covariances[k]),
        )
    }

    fn in_bounds(&self, x: &DVector<f64>) -> bool {
        x.iter()
            .zip(&self.bounds)
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }
}

/// Fits a Gaussian mixture to the elite samples by EM, choosing the
/// component count by BIC over `1..=max_components`. Covariances are
/// regularized with a `1e-6 x diag(range width^2)` jitter so degenerate
/// elite sets stay positive definite. Deterministic per seed.
pub fn fit_mixture(
    elites: &[ParameterVector],
    space: &ParameterSpace,
    max_components: usize,
    seed: u64,
) -> Result<MixtureModel> {
    let n = elites.len();
    if n < 2 {
        return Err(Error::TooFewElites { got: n });
    }
    let d = space.dims();
    for e in elites {
        if e.0.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: e.0.len(),
            });
        }
    }
    let points: Vec<DVector<f64>> = elites
        .iter()
        .map(|e| DVector::from_column_slice(&e.0))
        .collect();
    let jitter = DVector::from_iterator(d, space.widths().iter().map(|w| 1e-6 * w * w));

    let mut best: Option<(f64, Fitted)> = None;
    for c in 1..=max_components.max(1) {
        // Each extra component needs d+2 samples to be worth estimating; a
        // single component is always admissible.
        if c > 1 && n < c * (d + 2) {
            break;
        }
        let fitted = em_fit(&points, c, &jitter, mix_seed(seed, c as u64))?;
        let p = (c - 1) + c * d + c * d * (d + 1) / 2;
        let bic = -2.0 * fitted.log_likelihood + p as f64 * (n as f64).ln();
        if best.as_ref().map(|(b, _)| bic < *b).unwrap_or(true) {
            best = Some((bic, fitted));
        }
    }
    let (_, fitted) = best.unwrap();

    MixtureModel::new(
        fitted.weights,
        fitted.means.iter().map(|m| m.iter().copied().collect()).collect(),
        fitted
            .covs
            .iter()
            .map(|s| s.transpose().iter().copied().collect())
            .collect(),
        space.bounds(),
    )
}

struct Fitted {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
    log_likelihood: f64,
}

struct GaussParams {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl GaussParams {
    fn build(mean: DVector<f64>, mut cov: DMatrix<f64>, jitter: &DVector<f64>) -> Self {
        let d = mean.len();
        for i in 0..d {
            cov[(i, i)] += jitter[i];
        }
        // Symmetrize rounding noise from the weighted scatter sum.
        cov = (&cov + cov.transpose()) * 0.5;
        let mut boost = 1.0;
        let chol = loop {
            if let Some(c) = Cholesky::new(cov.clone()) {
                break c;
            }
            boost *= 10.0;
            for i in 0..d {
                cov[(i, i)] += boost * jitter[i].max(1e-12);
            }
        };
        let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
        let log_norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        GaussParams {
            mean,
            cov,
            chol,
            log_norm,
        }
    }

    fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.mean;
        let z = self
            .chol
            .l()
            .solve_lower_triangular(&diff)
            .expect("cholesky factor is non-singular");
        self.log_norm - 0.5 * z.norm_squared()
    }
}

fn em_fit(points: &[DVector<f64>], c: usize, jitter: &DVector<f64>, seed: u64) -> Result<Fitted> {
    let n = points.len();
    let d = points[0].len();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    // k-means++ style seeding from the elite set itself.
    let mut centers: Vec<usize> = vec![rng.gen_range(0..n)];
    while centers.len() < c {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| {
                centers
                    .iter()
                    .map(|&ci| (p - &points[ci]).norm_squared())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centers.push(next);
    }

    let global = scatter(points, &vec![1.0; n]);
    let mut comps: Vec<GaussParams> = Vec::with_capacity(c);
    let mut weights = vec![0.0f64; c];
    {
        // Hard-assign to the nearest seed center for the initial estimates.
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); c];
        for (i, p) in points.iter().enumerate() {
            let k = centers
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    let da = (p - &points[*a.1]).norm_squared();
                    let db = (p - &points[*b.1]).norm_squared();
                    da.partial_cmp(&db).unwrap().then(a.0.cmp(&b.0))
                })
                .map(|(k, _)| k)
                .unwrap();
            members[k].push(i);
        }
        for (k, idx) in members.iter().enumerate() {
            let (mean, cov) = if idx.len() >= 2 {
                let sel: Vec<DVector<f64>> = idx.iter().map(|&i| points[i].clone()).collect();
                let mean = &sel.iter().sum::<DVector<f64>>() / sel.len() as f64;
                (mean, scatter(&sel, &vec![1.0; sel.len()]))
            } else {
                (points[centers[k]].clone(), global.clone())
            };
            weights[k] = (idx.len().max(1)) as f64;
            comps.push(GaussParams::build(mean, cov, jitter));
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
    }

    let mut resp = vec![vec![0.0f64; c]; n];
    let mut prev_ll = f64::NEG_INFINITY;
    let mut ll = prev_ll;
    for _ in 0..200 {
        // E step.
        ll = 0.0;
        for (i, p) in points.iter().enumerate() {
            let logs: Vec<f64> = comps
                .iter()
                .zip(&weights)
                .map(|(g, w)| w.max(1e-300).ln() + g.log_pdf(p))
                .collect();
            let max = logs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
            let lse = max + sum.ln();
            ll += lse;
            for k in 0..c {
                resp[i][k] = (logs[k] - lse).exp();
            }
        }
        // Not asserting monotone likelihood: the per-step covariance jitter
        // and collapsed-component restarts both break exact monotonicity.
        if (ll - prev_ll).abs() <= 1e-8 * ll.abs().max(1.0) {
            break;
        }
        prev_ll = ll;

        // M step.
        for k in 0..c {
            let rk: Vec<f64> = (0..n).map(|i| resp[i][k]).collect();
            let total: f64 = rk.iter().sum();
            if total < 1e-10 {
                // Collapsed component: restart it on a random elite.
                let pick = rng.gen_range(0..n);
                weights[k] = 1.0 / n as f64;
                comps[k] = GaussParams::build(points[pick].clone(), global.clone(), jitter);
                continue;
            }
            weights[k] = total / n as f64;
            let mean = points
                .iter()
                .zip(&rk)
                .fold(DVector::zeros(d), |acc, (p, r)| acc + p * *r)
                / total;
            let mut cov = DMatrix::zeros(d, d);
            for (p, r) in points.iter().zip(&rk) {
                let diff = p - &mean;
                cov.syger(*r / total, &diff, &diff, 1.0);
            }
            comps[k] = GaussParams::build(mean, cov, jitter);
        }
        let wsum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= wsum;
        }
    }

    Ok(Fitted {
        weights,
        means: comps.iter().map(|g| g.mean.clone()).collect(),
        covs: comps.iter().map(|g| g.cov.clone()).collect(),
        log_likelihood: ll,
    })
}

/// Unweighted or weighted sample covariance (weights need not be normalized).
fn scatter(points: &[DVector<f64>], weights: &[f64]) -> DMatrix<f64> {
    let d = points[0].len();
    let total: f64 = weights.iter().sum();
    let mean = points
        .iter()
        .zip(weights)
        .fold(DVector::zeros(d), |acc, (p, w)| acc + p * *w)
        / total;
    let mut cov = DMatrix::zeros(d, d);
    for (p, w) in points.iter().zip(weights) {
        let diff = p - &mean;
        cov.syger(*w / total, &diff, &diff, 1.0);
    }
    (&cov + cov.transpose()) * 0.5
}

const MAX_DRAWS_BEFORE_GUARD: u64 = 1_000_000;
const MIN_ACCEPTANCE: f64 = 1e-4;

/// Draws exactly `m` samples from the mixture truncated to its bounds box,
/// by rejection. Errors once the running acceptance rate falls below 1e-4
/// after a million draws, which signals a fit that has collapsed outside
/// the plausible ranges.
pub fn sample_truncated(model: &MixtureModel, m: usize, seed: u64) -> Result<Vec<ParameterVector>> {
    model.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let comps: Vec<(DVector<f64>, DMatrix<f64>)> = (0..model.n_components())
        .map(|k| {
            let (mean, cov) = model.component(k);
            let chol = Cholesky::new(cov).expect("validated covariance");
            (mean, chol.l().into())
        })
        .collect();
    let pick = WeightedIndex::new(&model.weights)
        .map_err(|e| Error::Config(format!("mixture weights: {e}")))?;
    let d = model.dims();

    let mut out = Vec::with_capacity(m);
    let mut draws: u64 = 0;
    while out.len() < m {
        let (mean, l) = &comps[pick.sample(&mut rng)];
        let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)));
        let x = mean + l * z;
        draws += 1;
        if model.in_bounds(&x) {
            out.push(ParameterVector(x.iter().copied().collect()));
        } else if draws >= MAX_DRAWS_BEFORE_GUARD
            && (out.len() as f64) < MIN_ACCEPTANCE * draws as f64
        {
            return Err(Error::DegenerateMixture { draws });
        }
    }
    Ok(out)
}
