//! Typical-day profile mining and the schedule sets the simulator consumes.
//!
//! Sub-daily measurements are folded into day rows and clustered with
//! k-medoids (PAM); the cluster count is picked by mean silhouette width.
//! Each cluster's profile is the element-wise mean of its member days,
//! normalized by the peak across all clusters so relative magnitude between
//! day types survives: profiles are fractions of one shared peak, and the
//! calibration recovers that peak as a power density.
//!
//! Electricity drives one clustering shared by occupancy, lighting and
//! appliances; domestic hot water gets its own; infiltration is a constant
//! profile year round. Daily and monthly data cannot resolve a day shape, so
//! those calibrations fall back to the built-in nominal residential profiles.

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{reshape_daily, MeteredSeries, Resolution};
use crate::util::mix_seed;

pub const K_MIN_DEFAULT: usize = 2;
pub const K_MAX_DEFAULT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Occupancy,
    Lighting,
    Appliances,
    Dhw,
    Infiltration,
}

impl Role {
    pub const ALL: [Role; 5] = [
        Role::Occupancy,
        Role::Lighting,
        Role::Appliances,
        Role::Dhw,
        Role::Infiltration,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Role::Occupancy => "occupancy",
            Role::Lighting => "lighting",
            Role::Appliances => "appliances",
            Role::Dhw => "dhw",
            Role::Infiltration => "infiltration",
        }
    }

    fn index(self) -> usize {
        Role::ALL.iter().position(|r| *r == self).unwrap()
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Day rows of one metered channel, split into clustering input (complete
/// days) and flagged days with NaN holes that only rejoin for assignment.
#[derive(Debug, Clone)]
pub struct DailyMatrix {
    pub resolution: Resolution,
    pub steps_per_day: usize,
    /// Every calendar day of the span, in order.
    pub dates: Vec<NaiveDate>,
    /// Complete day rows; `row_days[i]` maps `rows[i]` back into `dates`.
    pub rows: Vec<Vec<f64>>,
    pub row_days: Vec<usize>,
    /// Incomplete days as (day index, row with NaN holes).
    pub holed: Vec<(usize, Vec<f64>)>,
}

impl DailyMatrix {
    pub fn from_series(series: &MeteredSeries) -> Result<Self> {
        let r = reshape_daily(series)?;
        let mut rows = Vec::new();
        let mut row_days = Vec::new();
        let mut holed = Vec::new();
        for (d, row) in r.rows.into_iter().enumerate() {
            if r.complete[d] {
                row_days.push(d);
                rows.push(row);
            } else {
                holed.push((d, row));
            }
        }
        Ok(DailyMatrix {
            resolution: r.resolution,
            steps_per_day: r.steps_per_day,
            dates: r.dates,
            rows,
            row_days,
            holed,
        })
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmedoidsFit {
    /// Indices into the clustered rows.
    pub medoids: Vec<usize>,
    /// Row index -> cluster (position in `medoids`).
    pub assignments: Vec<usize>,
    pub cost: f64,
    /// Total cost after BUILD and after each accepted swap; never increases.
    pub cost_history: Vec<f64>,
}

struct DistMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistMatrix {
    fn compute(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let width = rows.first().map(|r| r.len()).unwrap_or(0);
        for row in rows {
            if row.len() != width {
                return Err(Error::DimensionMismatch {
                    expected: width,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::SeriesInvariant(
                    "clustering input contains non-finite values".into(),
                ));
            }
        }
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let dist = euclidean(&rows[i], &rows[j]);
                d[i * n + j] = dist;
                d[j * n + i] = dist;
            }
        }
        Ok(DistMatrix { n, d })
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// PAM: greedy BUILD initialization followed by best-improvement SWAP until
/// no single medoid exchange lowers the total cost. Deterministic; `seed`
/// only arbitrates exact cost ties.
pub fn kmedoids(rows: &[Vec<f64>], k: usize, seed: u64) -> Result<KmedoidsFit> {
    let dist = DistMatrix::compute(rows)?;
    pam(&dist, k, seed)
}

fn pam(dist: &DistMatrix, k: usize, seed: u64) -> Result<KmedoidsFit> {
    use rand::Rng;
    use rand::SeedableRng;
    let n = dist.n;
    if k == 0 || k > n {
        return Err(Error::BadClusterCount { k, n });
    }
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);

    // BUILD: first the most central point, then whichever point removes the
    // most cost. Ties go to the lower index.
    let mut medoids: Vec<usize> = Vec::with_capacity(k);
    let first = (0..n)
        .map(|i| (0..n).map(|j| dist.get(i, j)).sum::<f64>())
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .unwrap();
    medoids.push(first);
    let mut nearest: Vec<f64> = (0..n).map(|j| dist.get(first, j)).collect();
    while medoids.len() < k {
        let mut best = usize::MAX;
        let mut best_gain = f64::NEG_INFINITY;
        for c in 0..n {
            if medoids.contains(&c) {
                continue;
            }
            let gain: f64 = (0..n).map(|j| (nearest[j] - dist.get(c, j)).max(0.0)).sum();
            if gain > best_gain {
                best_gain = gain;
                best = c;
            }
        }
        medoids.push(best);
        for j in 0..n {
            nearest[j] = nearest[j].min(dist.get(best, j));
        }
    }

    // Nearest and second-nearest medoid per point, kept current across swaps.
    let mut n1 = vec![0usize; n]; // position in `medoids`
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    let recompute = |medoids: &[usize], n1: &mut [usize], d1: &mut [f64], d2: &mut [f64]| {
        for j in 0..n {
            // A medoid belongs to its own cluster even when other medoids
            // are at distance zero (duplicate points).
            let own = medoids.iter().position(|&m| m == j);
            let mut best = (f64::INFINITY, 0usize);
            let mut second = f64::INFINITY;
            for (pos, &m) in medoids.iter().enumerate() {
                if own == Some(pos) {
                    continue;
                }
                let d = dist.get(m, j);
                if d < best.0 {
                    second = best.0;
                    best = (d, pos);
                } else if d < second {
                    second = d;
                }
            }
            if let Some(pos) = own {
                n1[j] = pos;
                d1[j] = 0.0;
                d2[j] = best.0;
            } else {
                n1[j] = best.1;
                d1[j] = best.0;
                // With one medoid there is no fallback: removal costs are
                // unbounded, not zero.
                d2[j] = if medoids.len() > 1 { second } else { f64::INFINITY };
            }
        }
    };
    recompute(&medoids, &mut n1, &mut d1, &mut d2);
    let mut cost: f64 = d1.iter().sum();
    let mut cost_history = vec![cost];

    loop {
        let mut best_delta = 0.0;
        let mut best_swap: Option<(usize, usize)> = None;
        for pos in 0..medoids.len() {
            for o in 0..n {
                if medoids.contains(&o) {
                    continue;
                }
                let mut delta = 0.0;
                for j in 0..n {
                    let d_o = dist.get(o, j);
                    delta += if n1[j] == pos {
                        d_o.min(d2[j]) - d1[j]
                    } else {
                        (d_o - d1[j]).min(0.0)
                    };
                }
                let take = if delta < best_delta - 1e-12 {
                    true
                } else if (delta - best_delta).abs() <= 1e-12 && best_swap.is_some() {
                    rng.gen_bool(0.5)
                } else {
                    false
                };
                if take {
                    best_delta = delta;
                    best_swap = Some((pos, o));
                }
            }
        }
        let Some((pos, o)) = best_swap else { break };
        if best_delta >= -1e-12 {
            break;
        }
        medoids[pos] = o;
        recompute(&medoids, &mut n1, &mut d1, &mut d2);
        let new_cost: f64 = d1.iter().sum();
        debug_assert!(new_cost <= cost + 1e-9, "swap increased cost");
        cost = new_cost;
        cost_history.push(cost);
    }

    Ok(KmedoidsFit {
        medoids,
        assignments: n1,
        cost,
        cost_history,
    })
}

/// Mean silhouette width over all points. Singleton clusters score zero by
/// convention, as does a point whose both mean distances vanish.
pub fn silhouette(rows: &[Vec<f64>], assignments: &[usize]) -> Result<f64> {
    let dist = DistMatrix::compute(rows)?;
    silhouette_with(&dist, assignments)
}

fn silhouette_with(dist: &DistMatrix, assignments: &[usize]) -> Result<f64> {
    let n = dist.n;
    if assignments.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: assignments.len(),
        });
    }
    let k = assignments.iter().max().map(|m| m + 1).unwrap_or(0);
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    if k < 2 || sizes.iter().any(|&s| s == 0) {
        return Err(Error::SingleCluster);
    }
    let mut total = 0.0;
    for i in 0..n {
        let own = assignments[i];
        if sizes[own] == 1 {
            continue; // contributes 0
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if j != i {
                sums[assignments[j]] += dist.get(i, j);
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedK {
    pub k: usize,
    pub silhouette: f64,
    pub fit: KmedoidsFit,
}

/// Fits every k in the range and keeps the one with the widest mean
/// silhouette; exact ties go to the smaller k.
pub fn select_k(rows: &[Vec<f64>], k_min: usize, k_max: usize, seed: u64) -> Result<SelectedK> {
    let n = rows.len();
    if k_min < 2 {
        return Err(Error::BadClusterCount { k: k_min, n });
    }
    let hi = k_max.min(n.saturating_sub(1));
    if k_min > hi {
        return Err(Error::EmptyKRange { k_min, k_max: hi });
    }
    let dist = DistMatrix::compute(rows)?;
    let mut best: Option<SelectedK> = None;
    for k in k_min..=hi {
        let fit = pam(&dist, k, mix_seed(seed, k as u64))?;
        let score = silhouette_with(&dist, &fit.assignments)?;
        if best.as_ref().map(|b| score > b.silhouette).unwrap_or(true) {
            best = Some(SelectedK {
                k,
                silhouette: score,
                fit,
            });
        }
    }
    Ok(best.unwrap())
}

/// One role's typical-day description: `k` profiles as fractions of a peak
/// shared across the whole set, and a cluster for every calendar day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleSchedule {
    pub profiles: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub chosen_k: usize,
    pub silhouette: f64,
}

impl RoleSchedule {
    fn constant(steps_per_day: usize, n_days: usize) -> Self {
        RoleSchedule {
            profiles: vec![vec![1.0; steps_per_day]],
            assignment: vec![0; n_days],
            chosen_k: 1,
            silhouette: 0.0,
        }
    }
}

/// Mines one role group from a day matrix: cluster, average each cluster's
/// member days, normalize by the peak across all clusters, then give every
/// calendar day a cluster (days that were excluded for gaps go to the
/// nearest medoid over their observed steps).
pub fn build_schedules(
    matrix: &DailyMatrix,
    k_min: usize,
    k_max: usize,
    seed: u64,
) -> Result<RoleSchedule> {
    if matrix.rows.is_empty() {
        return Err(Error::TooFewPoints {
            op: "build_schedules",
            need: 1,
            got: 0,
        });
    }
    let (fit, chosen_k, score) = if matrix.rows.len() < 3 {
        // Too few complete days to rank cluster counts; one cluster of all.
        let fit = kmedoids(&matrix.rows, 1, seed)?;
        (fit, 1, 0.0)
    } else {
        let sel = select_k(&matrix.rows, k_min, k_max, seed)?;
        let k = sel.k;
        let score = sel.silhouette;
        (sel.fit, k, score)
    };

    let mut profiles = vec![vec![0.0; matrix.steps_per_day]; chosen_k];
    let mut counts = vec![0usize; chosen_k];
    for (row, &cluster) in matrix.rows.iter().zip(&fit.assignments) {
        counts[cluster] += 1;
        for (acc, v) in profiles[cluster].iter_mut().zip(row) {
            *acc += v;
        }
    }
    for (profile, &count) in profiles.iter_mut().zip(&counts) {
        for v in profile.iter_mut() {
            *v /= count as f64;
        }
    }
    let peak = profiles
        .iter()
        .flatten()
        .fold(0.0f64, |a, &b| a.max(b));
    if peak > 0.0 {
        for v in profiles.iter_mut().flatten() {
            *v /= peak;
        }
    }

    let mut assignment = vec![usize::MAX; matrix.n_days()];
    for (row_idx, &day) in matrix.row_days.iter().enumerate() {
        assignment[day] = fit.assignments[row_idx];
    }
    let largest = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(c, _)| c)
        .unwrap_or(0);
    for (day, row) in &matrix.holed {
        assignment[*day] = nearest_medoid_partial(row, &fit.medoids, &matrix.rows)
            .unwrap_or(largest);
    }
    debug_assert!(assignment.iter().all(|&a| a < chosen_k));

    Ok(RoleSchedule {
        profiles,
        assignment,
        chosen_k,
        silhouette: score,
    })
}

/// Nearest medoid by Euclidean distance over the row's observed steps; None
/// when nothing is observed.
fn nearest_medoid_partial(row: &[f64], medoids: &[usize], rows: &[Vec<f64>]) -> Option<usize> {
    if !row.iter().any(|v| v.is_finite()) {
        return None;
    }
    medoids
        .iter()
        .enumerate()
        .map(|(pos, &m)| {
            let d: f64 = row
                .iter()
                .zip(&rows[m])
                .filter(|(v, _)| v.is_finite())
                .map(|(v, w)| (v - w) * (v - w))
                .sum();
            (pos, d)
        })
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
        .map(|(pos, _)| pos)
}

/// The full set of operational schedules at one resolution.
///
/// Invariants: every profile value lies in [0, 1], every profile spans
/// exactly one day, and every role assigns a cluster to every calendar day
/// of the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSet {
    pub resolution: Resolution,
    pub start_date: NaiveDate,
    pub steps_per_day: usize,
    roles: Vec<RoleSchedule>,
}

impl ScheduleSet {
    pub fn new(
        resolution: Resolution,
        start_date: NaiveDate,
        roles: [RoleSchedule; 5],
    ) -> Result<Self> {
        let steps_per_day = resolution
            .steps_per_day()
            .filter(|&s| s > 1)
            .ok_or(Error::ResolutionTooCoarse {
                op: "schedules",
                limit: Resolution::Daily,
                got: resolution,
            })?;
        let n_days = roles[0].assignment.len();
        for (role, rs) in Role::ALL.iter().zip(&roles) {
            if rs.profiles.len() != rs.chosen_k || rs.profiles.is_empty() {
                return Err(Error::SeriesInvariant(format!(
                    "{role}: profile count does not match chosen_k"
                )));
            }
            for p in &rs.profiles {
                if p.len() != steps_per_day {
                    return Err(Error::SeriesInvariant(format!(
                        "{role}: profile length {} != steps per day {steps_per_day}",
                        p.len()
                    )));
                }
                if p.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
                    return Err(Error::SeriesInvariant(format!(
                        "{role}: profile values must lie in [0, 1]"
                    )));
                }
            }
            if rs.assignment.len() != n_days {
                return Err(Error::SeriesInvariant(format!(
                    "{role}: assignment length {} != horizon days {n_days}",
                    rs.assignment.len()
                )));
            }
            if rs.assignment.iter().any(|&c| c >= rs.chosen_k) {
                return Err(Error::SeriesInvariant(format!(
                    "{role}: assignment references a missing cluster"
                )));
            }
        }
        Ok(ScheduleSet {
            resolution,
            start_date,
            steps_per_day,
            roles: roles.to_vec(),
        })
    }

    pub fn role(&self, role: Role) -> &RoleSchedule {
        &self.roles[role.index()]
    }

    pub fn n_days(&self) -> usize {
        self.roles[0].assignment.len()
    }

    /// Profile value for every simulation step of the horizon.
    pub fn step_values(&self, role: Role, n_steps: usize) -> Result<Vec<f64>> {
        let rs = self.role(role);
        let mut out = Vec::with_capacity(n_steps);
        for step in 0..n_steps {
            let day = step / self.steps_per_day;
            let cluster = *rs.assignment.get(day).ok_or_else(|| {
                Error::SeriesInvariant(format!(
                    "step {step} lies beyond the {}-day schedule horizon",
                    self.n_days()
                ))
            })?;
            out.push(rs.profiles[cluster][step % self.steps_per_day]);
        }
        Ok(out)
    }

    /// Step-hold expansion to a finer resolution: each value repeats across
    /// the finer steps it covers.
    pub fn expand_to(&self, target: Resolution) -> Result<ScheduleSet> {
        if target == self.resolution {
            return Ok(self.clone());
        }
        if target > self.resolution {
            return Err(Error::DisaggregationRefused {
                have: target,
                want: self.resolution,
            });
        }
        let target_steps = target.steps_per_day().unwrap();
        let factor = target_steps / self.steps_per_day;
        let roles: Vec<RoleSchedule> = self
            .roles
            .iter()
            .map(|rs| RoleSchedule {
                profiles: rs
                    .profiles
                    .iter()
                    .map(|p| {
                        p.iter()
                            .flat_map(|v| std::iter::repeat(*v).take(factor))
                            .collect()
                    })
                    .collect(),
                assignment: rs.assignment.clone(),
                chosen_k: rs.chosen_k,
                silhouette: rs.silhouette,
            })
            .collect();
        Ok(ScheduleSet {
            resolution: target,
            start_date: self.start_date,
            steps_per_day: target_steps,
            roles,
        })
    }

    /// Mines schedules from metered electricity and hot water. Both series
    /// must share start and resolution; occupancy, lighting and appliances
    /// share the electricity clustering.
    pub fn mine(
        electricity: &MeteredSeries,
        dhw: &MeteredSeries,
        k_min: usize,
        k_max: usize,
        seed: u64,
    ) -> Result<ScheduleSet> {
        if electricity.start != dhw.start
            || electricity.resolution != dhw.resolution
            || electricity.len() != dhw.len()
        {
            return Err(Error::MetadataMismatch(
                "electricity and dhw series must share start, resolution and length".into(),
            ));
        }
        let elec = DailyMatrix::from_series(electricity)?;
        let hot = DailyMatrix::from_series(dhw)?;
        let shared = build_schedules(&elec, k_min, k_max, mix_seed(seed, 0))?;
        let dhw_schedule = build_schedules(&hot, k_min, k_max, mix_seed(seed, 1))?;
        let n_days = elec.n_days();
        let spd = elec.steps_per_day;
        ScheduleSet::new(
            electricity.resolution,
            elec.dates[0],
            [
                shared.clone(),
                shared.clone(),
                shared,
                dhw_schedule,
                RoleSchedule::constant(spd, n_days),
            ],
        )
    }

    /// The built-in nominal residential day (hourly shape, constant across
    /// days), used where the measurements cannot resolve a day shape.
    pub fn nominal(start_date: NaiveDate, n_days: usize) -> ScheduleSet {
        let role = |profile: [f64; 24]| RoleSchedule {
            profiles: vec![profile.to_vec()],
            assignment: vec![0; n_days],
            chosen_k: 1,
            silhouette: 0.0,
        };
        ScheduleSet::new(
            Resolution::Hourly,
            start_date,
            [
                role(NOMINAL_OCCUPANCY),
                role(NOMINAL_LIGHTING),
                role(NOMINAL_APPLIANCES),
                role(NOMINAL_DHW),
                RoleSchedule::constant(24, n_days),
            ],
        )
        .expect("nominal profiles are valid")
    }

    /// Writes `<group>_profiles.csv` (`step,cluster_<i>`), `<group>_days.csv`
    /// (`day,cluster`) and a `meta.csv` per role group. Occupancy, lighting
    /// and appliances share the electricity group.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut meta = BufWriter::new(std::fs::File::create(dir.join("meta.csv"))?);
        writeln!(meta, "group,chosen_k,silhouette")?;
        for (group, role) in GROUPS {
            let rs = self.role(role);
            writeln!(meta, "{group},{},{}", rs.chosen_k, rs.silhouette)?;
            let mut w =
                BufWriter::new(std::fs::File::create(dir.join(format!("{group}_profiles.csv")))?);
            let header: Vec<String> = (0..rs.chosen_k).map(|i| format!("cluster_{i}")).collect();
            writeln!(w, "step,{}", header.join(","))?;
            for step in 0..self.steps_per_day {
                let row: Vec<String> = rs
                    .profiles
                    .iter()
                    .map(|p| p[step].to_string())
                    .collect();
                writeln!(w, "{step},{}", row.join(","))?;
            }
            w.flush()?;
            let mut w =
                BufWriter::new(std::fs::File::create(dir.join(format!("{group}_days.csv")))?);
            writeln!(w, "day,cluster")?;
            for (d, cluster) in rs.assignment.iter().enumerate() {
                let date = self
                    .start_date
                    .checked_add_days(chrono::Days::new(d as u64))
                    .expect("date overflow");
                writeln!(w, "{date},{cluster}")?;
            }
            w.flush()?;
        }
        meta.flush()?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<ScheduleSet> {
        let mut groups = Vec::new();
        for (group, _) in GROUPS {
            groups.push(read_group(dir, group)?);
        }
        let (elec, dhw, inf) = (groups[0].clone(), groups[1].clone(), groups[2].clone());
        let steps_per_day = elec.1.profiles[0].len();
        let resolution = Resolution::ALL
            .into_iter()
            .find(|r| r.steps_per_day() == Some(steps_per_day))
            .ok_or_else(|| {
                Error::SeriesInvariant(format!("no resolution has {steps_per_day} steps per day"))
            })?;
        ScheduleSet::new(
            resolution,
            elec.0,
            [elec.1.clone(), elec.1.clone(), elec.1, dhw.1, inf.1],
        )
    }
}

const GROUPS: [(&str, Role); 3] = [
    ("electricity", Role::Occupancy),
    ("dhw", Role::Dhw),
    ("infiltration", Role::Infiltration),
];

fn read_group(dir: &Path, group: &str) -> Result<(NaiveDate, RoleSchedule)> {
    let read_lines = |name: String| -> Result<Vec<String>> {
        let path = dir.join(&name);
        let file = std::fs::File::open(&path).map_err(|e| Error::Csv {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
        BufReader::new(file)
            .lines()
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(Error::from)
    };
    let err = |msg: String| Error::Csv {
        path: dir.join(format!("{group}_profiles.csv")).display().to_string(),
        line: 0,
        msg,
    };

    let lines = read_lines(format!("{group}_profiles.csv"))?;
    let mut rows = lines.iter().filter(|l| !l.trim().is_empty());
    let header = rows.next().ok_or_else(|| err("empty profiles file".into()))?;
    let k = header.split(',').count() - 1;
    if k == 0 || !header.starts_with("step,") {
        return Err(err(format!("unexpected header {header:?}")));
    }
    let mut profiles = vec![Vec::new(); k];
    for line in rows {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != k + 1 {
            return Err(err(format!("expected {} columns, got {}", k + 1, cols.len())));
        }
        for (i, cell) in cols[1..].iter().enumerate() {
            profiles[i].push(
                cell.parse::<f64>()
                    .map_err(|e| err(format!("bad profile value {cell:?}: {e}")))?,
            );
        }
    }

    let lines = read_lines(format!("{group}_days.csv"))?;
    let mut assignment = Vec::new();
    let mut start_date = None;
    for (i, line) in lines.iter().filter(|l| !l.trim().is_empty()).enumerate() {
        if i == 0 {
            continue; // day,cluster header
        }
        let (day, cluster) = line
            .split_once(',')
            .ok_or_else(|| err("days file needs two columns".into()))?;
        let date: NaiveDate = day
            .parse()
            .map_err(|e| err(format!("bad date {day:?}: {e}")))?;
        if start_date.is_none() {
            start_date = Some(date);
        }
        assignment.push(
            cluster
                .parse::<usize>()
                .map_err(|e| err(format!("bad cluster {cluster:?}: {e}")))?,
        );
    }
    let start_date = start_date.ok_or_else(|| err("days file has no rows".into()))?;

    let mut silhouette = 0.0;
    for line in read_lines("meta.csv".to_string())?.iter().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() == 3 && cols[0] == group {
            silhouette = cols[2].parse().unwrap_or(0.0);
        }
    }

    Ok((
        start_date,
        RoleSchedule {
            chosen_k: profiles.len(),
            profiles,
            assignment,
            silhouette,
        },
    ))
}

/// Nominal residential profiles (fraction of peak per hour of day). Flat
/// documented shapes: overnight presence with a working-hours dip, lighting
/// concentrated in dark hours, appliance peaks around meals, and morning /
/// evening hot-water draws.
pub const NOMINAL_OCCUPANCY: [f64; 24] = [
    1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.9, 0.7, 0.5, 0.35, 0.35, 0.35, 0.4, 0.4, 0.35, 0.35, 0.5,
    0.7, 0.85, 0.95, 1.0, 1.0, 1.0, 1.0,
];

pub const NOMINAL_LIGHTING: [f64; 24] = [
    0.05, 0.05, 0.05, 0.05, 0.05, 0.1, 0.3, 0.5, 0.3, 0.1, 0.05, 0.05, 0.05, 0.05, 0.05, 0.1,
    0.2, 0.4, 0.7, 0.9, 1.0, 0.8, 0.4, 0.1,
];

pub const NOMINAL_APPLIANCES: [f64; 24] = [
    0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.3, 0.5, 0.4, 0.3, 0.3, 0.4, 0.5, 0.4, 0.3, 0.3, 0.4, 0.6,
    0.8, 1.0, 0.8, 0.6, 0.4, 0.3,
];

pub const NOMINAL_DHW: [f64; 24] = [
    0.0, 0.0, 0.0, 0.0, 0.0, 0.05, 0.3, 1.0, 0.6, 0.2, 0.1, 0.1, 0.2, 0.15, 0.1, 0.1, 0.15,
    0.25, 0.4, 0.6, 0.7, 0.5, 0.2, 0.05,
];
