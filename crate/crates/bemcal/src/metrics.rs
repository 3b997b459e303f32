//! Goodness-of-fit measures and the batch distance score.
//!
//! Both measures are percentages normalized by the mean of the measurement:
//!
//! - `CVRMSE = 100 * sqrt(sum((m-s)^2)/n) / mean(m)`
//! - `NMBE   = 100 * (sum(m-s)/n) / mean(m)` (positive = model under-predicts)
//!
//! A sample's distance from the calibration targets is assembled per
//! (channel, metric): the raw violation is how far the metric sits above its
//! threshold (zero when inside), each component is min-max rescaled across
//! the batch so no channel dominates by units, and the score is the Euclidean
//! norm of the rescaled components.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::series::{AlignedPair, Channel};

pub fn cvrmse(pair: &AlignedPair) -> Result<f64> {
    let (mean, n) = measured_mean(pair)?;
    let sq_sum: f64 = pair
        .measured
        .iter()
        .zip(&pair.simulated)
        .map(|(m, s)| (m - s) * (m - s))
        .sum();
    Ok(100.0 * (sq_sum / n).sqrt() / mean)
}

pub fn nmbe(pair: &AlignedPair) -> Result<f64> {
    let (mean, n) = measured_mean(pair)?;
    let bias: f64 = pair
        .measured
        .iter()
        .zip(&pair.simulated)
        .map(|(m, s)| m - s)
        .sum();
    Ok(100.0 * (bias / n) / mean)
}

fn measured_mean(pair: &AlignedPair) -> Result<(f64, f64)> {
    let n = pair.count();
    if n < 2 {
        return Err(Error::TooFewPoints {
            op: "goodness of fit",
            need: 2,
            got: n,
        });
    }
    let mean = pair.measured.iter().sum::<f64>() / n as f64;
    if mean == 0.0 {
        return Err(Error::NotCalibratable {
            channel: pair.channel,
            reason: "measured mean is zero".into(),
        });
    }
    Ok((mean, n as f64))
}

/// Fit of one channel: both metrics plus the point count they were computed
/// over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelFit {
    pub channel: Channel,
    pub cvrmse: f64,
    pub nmbe: f64,
    pub n_points: usize,
}

/// Per-channel goodness of fit for one simulated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub channels: Vec<ChannelFit>,
}

impl FitReport {
    pub fn from_pairs(pairs: &[AlignedPair]) -> Result<FitReport> {
        let mut channels = Vec::with_capacity(pairs.len());
        for pair in pairs {
            channels.push(ChannelFit {
                channel: pair.channel,
                cvrmse: cvrmse(pair)?,
                nmbe: nmbe(pair)?,
                n_points: pair.count(),
            });
        }
        Ok(FitReport { channels })
    }

    pub fn channel(&self, channel: Channel) -> Option<&ChannelFit> {
        self.channels.iter().find(|c| c.channel == channel)
    }
}

/// Calibration targets for one channel. NMBE is judged by absolute value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub cvrmse: f64,
    pub nmbe: f64,
}

/// Per-channel targets; hourly acceptance practice is CVRMSE 30, |NMBE| 10.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet(BTreeMap<Channel, Thresholds>);

impl ThresholdSet {
    pub fn uniform(cvrmse: f64, nmbe: f64) -> Self {
        ThresholdSet(
            Channel::ALL
                .into_iter()
                .map(|c| (c, Thresholds { cvrmse, nmbe }))
                .collect(),
        )
    }

    pub fn get(&self, channel: Channel) -> Thresholds {
        self.0
            .get(&channel)
            .copied()
            .unwrap_or(Thresholds { cvrmse: 30.0, nmbe: 10.0 })
    }

    pub fn set(&mut self, channel: Channel, t: Thresholds) {
        self.0.insert(channel, t);
    }
}

impl Default for ThresholdSet {
    fn default() -> Self {
        ThresholdSet::uniform(30.0, 10.0)
    }
}

/// True when every channel of the report sits inside both of its targets.
pub fn meets_all(report: &FitReport, thresholds: &ThresholdSet) -> bool {
    report.channels.iter().all(|c| {
        let t = thresholds.get(c.channel);
        c.cvrmse <= t.cvrmse && c.nmbe.abs() <= t.nmbe
    })
}

/// Raw per-(channel, metric) violations: distance above the threshold, zero
/// inside. Component order is (cvrmse, |nmbe|) per channel in report order.
pub fn raw_violations(report: &FitReport, thresholds: &ThresholdSet) -> Vec<f64> {
    let mut raw = Vec::with_capacity(report.channels.len() * 2);
    for c in &report.channels {
        let t = thresholds.get(c.channel);
        raw.push((c.cvrmse - t.cvrmse).max(0.0));
        raw.push((c.nmbe.abs() - t.nmbe).max(0.0));
    }
    raw
}

/// Euclidean norm of the raw (unscaled) violations. Unlike [`DistanceScore`]
/// this is comparable across batches, so the engine uses it to track the
/// best sample found so far.
pub fn raw_violation_norm(report: &FitReport, thresholds: &ThresholdSet) -> f64 {
    raw_violations(report, thresholds)
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Batch-relative distance of one sample from the calibration targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceScore {
    /// Min-max rescaled violations, each in [0, 1].
    pub components: Vec<f64>,
    /// Euclidean norm of `components`.
    pub eta_hat: f64,
}

/// Scores a batch of fit reports against the thresholds. Every report must
/// cover the same channels in the same order. A component that is constant
/// across the batch carries no ranking information and maps to zero.
pub fn distance(reports: &[FitReport], thresholds: &ThresholdSet) -> Result<Vec<DistanceScore>> {
    if reports.is_empty() {
        return Ok(Vec::new());
    }
    let key: Vec<Channel> = reports[0].channels.iter().map(|c| c.channel).collect();
    for r in reports {
        let k: Vec<Channel> = r.channels.iter().map(|c| c.channel).collect();
        if k != key {
            return Err(Error::MetadataMismatch(
                "fit reports in a batch must cover the same channels".into(),
            ));
        }
    }
    let mut rows: Vec<Vec<f64>> = reports
        .iter()
        .map(|r| raw_violations(r, thresholds))
        .collect();
    min_max_rescale(&mut rows);
    Ok(rows
        .into_iter()
        .map(|components| {
            let eta_hat = components.iter().map(|v| v * v).sum::<f64>().sqrt();
            DistanceScore { components, eta_hat }
        })
        .collect())
}

/// In-place column-wise min-max rescale to [0, 1]; constant columns map to 0.
fn min_max_rescale(rows: &mut [Vec<f64>]) {
    if rows.is_empty() {
        return;
    }
    let width = rows[0].len();
    for col in 0..width {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for row in rows.iter() {
            lo = lo.min(row[col]);
            hi = hi.max(row[col]);
        }
        let span = hi - lo;
        for row in rows.iter_mut() {
            row[col] = if span > 0.0 { (row[col] - lo) / span } else { 0.0 };
        }
    }
}
