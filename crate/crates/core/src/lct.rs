//! Absolute percentage error and last-crossing-time machinery over any
//! sampled scalar process, plus the cohort aggregates built from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::velocity::{ScalarProcessSeries, WEEK_S};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApeSample {
    pub tau: f64,
    pub ape: f64,
}

/// APE of a process against its terminal value, one sample per process
/// sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApeSeries {
    samples: Vec<ApeSample>,
    horizon: f64,
}

impl ApeSeries {
    pub fn new(samples: Vec<ApeSample>, horizon: f64) -> Result<Self> {
        if samples.windows(2).any(|w| w[1].tau <= w[0].tau) {
            return Err(Error::InvalidParameter("APE taus must be strictly increasing".into()));
        }
        if samples.iter().any(|s| !(s.ape >= 0.0)) {
            return Err(Error::InvalidParameter("APE values must be nonnegative".into()));
        }
        Ok(ApeSeries { samples, horizon })
    }

    pub fn samples(&self) -> &[ApeSample] {
        &self.samples
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Step-interpolated APE at `tau`: the last sample at or before `tau`,
    /// or 1.0 before the first sample.
    pub fn value_at(&self, tau: f64) -> f64 {
        match self.samples.partition_point(|s| s.tau <= tau) {
            0 => 1.0,
            i => self.samples[i - 1].ape,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LctResult {
    pub gamma: f64,
    /// Seconds; 0 when no sample exceeds `gamma`.
    pub lct: f64,
}

impl LctResult {
    pub fn weeks(&self) -> f64 {
        self.lct / WEEK_S
    }
}

pub fn ape_series(z: &ScalarProcessSeries) -> Result<ApeSeries> {
    let terminal = z.terminal_value().ok_or(Error::EmptySeries)?;
    if terminal == 0.0 {
        return Err(Error::ZeroTerminalValue);
    }
    let samples = z
        .samples()
        .iter()
        .map(|s| ApeSample {
            tau: s.tau,
            ape: (s.value - terminal).abs() / terminal,
        })
        .collect();
    ApeSeries::new(samples, z.horizon())
}

/// Latest sample time whose APE strictly exceeds `gamma`. `gamma` is
/// expected to be positive; callers validate it.
pub fn last_crossing_time(ape: &ApeSeries, gamma: f64) -> LctResult {
    let lct = ape
        .samples
        .iter()
        .rev()
        .find(|s| s.ape > gamma)
        .map_or(0.0, |s| s.tau);
    LctResult { gamma, lct }
}

/// Mean APE across participants at common evaluation times.
///
/// Each participant's APE is step-interpolated (last observation carried
/// forward, 1.0 before their first sample). Feed the result to
/// [`last_crossing_time`] to obtain LCT-MAPE.
pub fn mape(apes: &[ApeSeries], eval_taus: &[f64]) -> Result<ApeSeries> {
    if apes.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let k = apes.len() as f64;
    let samples = eval_taus
        .iter()
        .map(|&tau| ApeSample {
            tau,
            ape: apes.iter().map(|a| a.value_at(tau)).sum::<f64>() / k,
        })
        .collect();
    let horizon = apes.iter().map(|a| a.horizon).fold(0.0, f64::max);
    ApeSeries::new(samples, horizon)
}

/// Weekly evaluation ticks `7d, 14d, ...` up to `horizon`.
pub fn weekly_ticks(horizon: f64) -> Vec<f64> {
    (1..)
        .map(|k| k as f64 * WEEK_S)
        .take_while(|&tau| tau <= horizon)
        .collect()
}

/// Average of per-participant last crossing times, in seconds.
pub fn mean_lct(lcts: &[LctResult]) -> Result<f64> {
    let first = lcts.first().ok_or(Error::EmptyCohort)?;
    if lcts.iter().any(|l| l.gamma != first.gamma) {
        return Err(Error::MixedGamma);
    }
    Ok(lcts.iter().map(|l| l.lct).sum::<f64>() / lcts.len() as f64)
}
