//! Activity distributions over grid cells and their estimators.
//!
//! Distributions are sparse: only cells with positive mass are stored, so a
//! 4000 x 4000 grid never needs a dense vector.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{CellIndex, GridSpec, ReferenceFrame, Trajectory};

/// Proportion of time spent in each grid cell.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ActivityDistribution {
    mass: BTreeMap<CellIndex, f64>,
    n_cells_total: u64,
}

impl ActivityDistribution {
    /// Normalizes nonnegative weights to unit mass. Zero weights are dropped.
    pub fn from_weights(weights: BTreeMap<CellIndex, f64>, n_cells_total: u64) -> Result<Self> {
        let total: f64 = weights.values().sum();
        Self::from_weights_with_total(weights, total, n_cells_total)
    }

    fn from_weights_with_total(
        weights: BTreeMap<CellIndex, f64>,
        total: f64,
        n_cells_total: u64,
    ) -> Result<Self> {
        if weights.values().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter("cell weights must be finite and >= 0".into()));
        }
        if !(total > 0.0) {
            return Err(Error::InvalidParameter("total weight must be positive".into()));
        }
        let mass = weights
            .into_iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|(c, w)| (c, w / total))
            .collect();
        Ok(ActivityDistribution {
            mass,
            n_cells_total,
        })
    }

    /// Builds a distribution from masses that already sum to one.
    pub fn from_masses(mass: BTreeMap<CellIndex, f64>, n_cells_total: u64) -> Result<Self> {
        let dist = Self::from_weights_with_total(mass, 1.0, n_cells_total)?;
        let sum = dist.total_mass();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("masses sum to {sum}, not 1")));
        }
        Ok(dist)
    }

    pub fn get(&self, cell: &CellIndex) -> f64 {
        self.mass.get(cell).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CellIndex, &f64)> {
        self.mass.iter()
    }

    pub fn masses(&self) -> &BTreeMap<CellIndex, f64> {
        &self.mass
    }

    /// Number of cells with positive mass.
    pub fn support_len(&self) -> usize {
        self.mass.len()
    }

    pub fn n_cells_total(&self) -> u64 {
        self.n_cells_total
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.values().sum()
    }

    /// L1 distance over the union of supports.
    pub fn l1_distance(&self, other: &ActivityDistribution) -> f64 {
        let mut d: f64 = self
            .mass
            .iter()
            .map(|(c, m)| (m - other.get(c)).abs())
            .sum();
        d += other
            .mass
            .iter()
            .filter(|(c, _)| !self.mass.contains_key(c))
            .map(|(_, m)| m)
            .sum::<f64>();
        d
    }

    /// Arithmetic mean of several distributions.
    pub fn mean<'a>(dists: impl IntoIterator<Item = &'a ActivityDistribution>) -> Result<Self> {
        let mut acc: BTreeMap<CellIndex, f64> = BTreeMap::new();
        let mut k = 0usize;
        let mut n_cells_total = 0;
        for d in dists {
            k += 1;
            n_cells_total = d.n_cells_total;
            for (c, m) in &d.mass {
                *acc.entry(*c).or_insert(0.0) += m;
            }
        }
        if k == 0 {
            return Err(Error::EmptyCohort);
        }
        let mass = acc.into_iter().map(|(c, m)| (c, m / k as f64)).collect();
        Ok(ActivityDistribution {
            mass,
            n_cells_total,
        })
    }
}

/// Time-ordered grid cells visited within a reference frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSequence {
    entries: Vec<(f64, CellIndex)>,
    frame: ReferenceFrame,
    n_cells_total: u64,
}

impl CellSequence {
    pub fn new(entries: Vec<(f64, CellIndex)>, frame: ReferenceFrame, n_cells_total: u64) -> Result<Self> {
        if entries.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidSequence("times must be strictly increasing".into()));
        }
        if entries.iter().any(|(t, _)| !frame.contains(*t)) {
            return Err(Error::InvalidSequence("times must lie inside the frame".into()));
        }
        Ok(CellSequence {
            entries,
            frame,
            n_cells_total,
        })
    }

    /// Maps a clipped trajectory onto the grid. Fixes outside the window or
    /// frame are rejected; clip first.
    pub fn from_trajectory(traj: &Trajectory, grid: &GridSpec, frame: ReferenceFrame) -> Result<Self> {
        let entries = traj
            .fixes()
            .iter()
            .map(|f| {
                grid.cell_of(f.lon, f.lat)
                    .map(|c| (f.t, c))
                    .ok_or_else(|| Error::InvalidSequence("fix outside the grid window".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries, frame, grid.n_cells())
    }

    pub(crate) fn from_parts_unchecked(
        entries: Vec<(f64, CellIndex)>,
        frame: ReferenceFrame,
        n_cells_total: u64,
    ) -> Self {
        CellSequence {
            entries,
            frame,
            n_cells_total,
        }
    }

    pub fn entries(&self) -> &[(f64, CellIndex)] {
        &self.entries
    }

    pub fn frame(&self) -> ReferenceFrame {
        self.frame
    }

    pub fn n_cells_total(&self) -> u64 {
        self.n_cells_total
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Time of entry `i` with the conventions `t_0 = t_min`,
    /// `t_{n+1} = t_max` (entries are 1-based here).
    fn bracket_time(&self, i: usize) -> f64 {
        match i {
            0 => self.frame.t_min,
            i if i > self.entries.len() => self.frame.t_max,
            i => self.entries[i - 1].0,
        }
    }
}

/// Per-entry sampling density values, aligned with a [`CellSequence`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingDensity {
    weights: Vec<f64>,
}

impl SamplingDensity {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::NonpositiveDensity);
        }
        Ok(SamplingDensity { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Which proportional-time estimator to use inside periods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    #[default]
    Ordinary,
    Conservative,
}

impl Estimator {
    pub fn estimate(self, seq: &CellSequence) -> Result<ActivityDistribution> {
        match self {
            Estimator::Ordinary => ordinary_estimator(seq),
            Estimator::Conservative => conservative_estimator(seq),
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ordinary" => Ok(Estimator::Ordinary),
            "conservative" => Ok(Estimator::Conservative),
            other => Err(Error::InvalidParameter(format!("unknown estimator {other:?}"))),
        }
    }
}

/// Relative visit frequency of each cell.
pub fn naive_estimator(seq: &CellSequence) -> Result<ActivityDistribution> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut counts: BTreeMap<CellIndex, f64> = BTreeMap::new();
    for (_, c) in &seq.entries {
        *counts.entry(*c).or_insert(0.0) += 1.0;
    }
    ActivityDistribution::from_weights_with_total(counts, seq.len() as f64, seq.n_cells_total)
}

/// Inverse-density weighted visit frequencies.
pub fn weighted_estimator(seq: &CellSequence, rho: &SamplingDensity) -> Result<ActivityDistribution> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    if rho.weights.len() != seq.len() {
        return Err(Error::InvalidParameter(format!(
            "{} density values for {} entries",
            rho.weights.len(),
            seq.len()
        )));
    }
    if rho.weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::NonpositiveDensity);
    }
    let mut acc: BTreeMap<CellIndex, f64> = BTreeMap::new();
    let mut total = 0.0;
    for ((_, c), w) in seq.entries.iter().zip(&rho.weights) {
        let inv = 1.0 / w;
        *acc.entry(*c).or_insert(0.0) += inv;
        total += inv;
    }
    ActivityDistribution::from_weights_with_total(acc, total, seq.n_cells_total)
}

/// Raw piecewise-uniform weights `1 / (t_{i+1} - t_{i-1})`.
pub fn bracket_weights(seq: &CellSequence) -> Vec<f64> {
    (1..=seq.len())
        .map(|i| 1.0 / (seq.bracket_time(i + 1) - seq.bracket_time(i - 1)))
        .collect()
}

/// Piecewise-uniform estimate of the sampling density at each entry,
/// normalized to sum to one over the entries.
pub fn estimate_density_weights(seq: &CellSequence) -> Result<SamplingDensity> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let omega = bracket_weights(seq);
    let total: f64 = omega.iter().sum();
    SamplingDensity::new(omega.into_iter().map(|w| w / total).collect())
}

/// Ordinary proportional time estimator: each fix is credited with the gap
/// between its neighbours.
pub fn ordinary_estimator(seq: &CellSequence) -> Result<ActivityDistribution> {
    let n = seq.len();
    if n == 0 {
        return Err(Error::EmptySequence);
    }
    let mut acc: BTreeMap<CellIndex, f64> = BTreeMap::new();
    for i in 1..=n {
        let span = seq.bracket_time(i + 1) - seq.bracket_time(i - 1);
        *acc.entry(seq.entries[i - 1].1).or_insert(0.0) += span;
    }
    // the spans telescope to T + t_n - t_1; dividing by their computed sum
    // keeps a single-cell sequence at exactly 1
    ActivityDistribution::from_weights(acc, seq.n_cells_total)
}

/// Conservative proportional time estimator: only intervals whose two
/// endpoints fall in the same cell count.
pub fn conservative_estimator(seq: &CellSequence) -> Result<ActivityDistribution> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut acc: BTreeMap<CellIndex, f64> = BTreeMap::new();
    let mut total = 0.0;
    for w in seq.entries.windows(2) {
        let ((t0, c0), (t1, c1)) = (w[0], w[1]);
        if c0 == c1 {
            *acc.entry(c1).or_insert(0.0) += t1 - t0;
            total += t1 - t0;
        }
    }
    if acc.is_empty() {
        return Err(Error::NoStationaryPairs);
    }
    ActivityDistribution::from_weights_with_total(acc, total, seq.n_cells_total)
}
