//! Period activity distributions, ranking distributions, level sets and
//! their last crossing times.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::activity::{ActivityDistribution, CellSequence, Estimator};
use crate::error::{Error, Result};
use crate::geo::{CellIndex, ReferenceFrame};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Period {
    /// 1-based period number.
    pub index: usize,
    pub start: f64,
    pub end: f64,
}

/// Equal-length periods tiling the start of a reference frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodPartition {
    pub period_length: f64,
    pub periods: Vec<Period>,
    /// Entries that fell into the dropped trailing partial period.
    pub dropped_tail_entries: usize,
}

impl PeriodPartition {
    pub fn d_max(&self) -> usize {
        self.periods.len()
    }
}

/// Splits a sequence into `floor(T / period_length)` periods. Each period's
/// sequence carries its own sub-frame, which the within-period estimators use
/// as `t_min`/`t_max`. A trailing partial period is dropped.
pub fn split_periods(
    seq: &CellSequence,
    period_length: f64,
) -> Result<(PeriodPartition, Vec<CellSequence>)> {
    if !(period_length > 0.0 && period_length.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "period length {period_length} must be positive"
        )));
    }
    let frame = seq.frame();
    let ratio = frame.duration() / period_length;
    // tolerate rounding when the frame is an exact multiple of the period
    let d_max = (ratio + 1e-9).floor() as usize;
    if d_max == 0 {
        return Err(Error::FrameTooShort {
            frame: frame.duration(),
            period: period_length,
        });
    }
    let periods: Vec<Period> = (0..d_max)
        .map(|d| Period {
            index: d + 1,
            start: frame.t_min + d as f64 * period_length,
            end: if d + 1 == d_max && (ratio - d_max as f64).abs() < 1e-9 {
                frame.t_max
            } else {
                frame.t_min + (d + 1) as f64 * period_length
            },
        })
        .collect();

    let mut buckets: Vec<Vec<(f64, CellIndex)>> = vec![Vec::new(); d_max];
    let mut dropped_tail_entries = 0;
    let last_end = periods[d_max - 1].end;
    for &(t, cell) in seq.entries() {
        // the final period is closed on the right so that t_max is kept
        if t > last_end || (t == last_end && last_end < frame.t_max) {
            dropped_tail_entries += 1;
            continue;
        }
        let d = (((t - frame.t_min) / period_length).floor() as usize).min(d_max - 1);
        // guard against rounding at period boundaries
        let d = if t < periods[d].start {
            d - 1
        } else if d + 1 < d_max && t >= periods[d + 1].start {
            d + 1
        } else {
            d
        };
        buckets[d].push((t, cell));
    }
    let seqs = buckets
        .into_iter()
        .zip(&periods)
        .map(|(entries, p)| {
            let sub = ReferenceFrame {
                t_min: p.start,
                t_max: p.end,
            };
            CellSequence::from_parts_unchecked(entries, sub, seq.n_cells_total())
        })
        .collect();
    Ok((
        PeriodPartition {
            period_length,
            periods,
            dropped_tail_entries,
        },
        seqs,
    ))
}

/// How running-mean positions are numbered when some periods cannot be
/// estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PeriodIndexing {
    /// `D` counts only periods that contributed an estimate.
    #[default]
    WithData,
    /// `D` counts calendar periods; periods before the first estimable one
    /// count as unstable.
    Calendar,
}

/// Per-period estimates and their running means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanActivitySeries {
    pub per_period: Vec<ActivityDistribution>,
    pub running_means: Vec<ActivityDistribution>,
    /// Calendar (1-based) index of each contributing period.
    pub period_labels: Vec<usize>,
    pub n_calendar_periods: usize,
    pub skipped: usize,
    pub indexing: PeriodIndexing,
}

impl MeanActivitySeries {
    pub fn d_max(&self) -> usize {
        self.running_means.len()
    }

    /// The full-observation estimate `pi_bar(D_max)`.
    pub fn terminal(&self) -> &ActivityDistribution {
        self.running_means
            .last()
            .expect("series holds at least one period")
    }

    /// Largest period number whose running mean is flagged by `exceeds`
    /// (given the 0-based position), or 0.
    fn last_crossing(&self, exceeds: impl Fn(usize) -> bool) -> usize {
        let k_max = self.running_means.len();
        match self.indexing {
            PeriodIndexing::WithData => (0..k_max).rev().find(|&k| exceeds(k)).map_or(0, |k| k + 1),
            PeriodIndexing::Calendar => {
                let leading = self.period_labels[0] - 1;
                (0..k_max)
                    .rev()
                    .find(|&k| exceeds(k))
                    .map_or(leading, |k| {
                        // the running mean stays constant until the next
                        // contributing period
                        let through = self
                            .period_labels
                            .get(k + 1)
                            .map_or(self.n_calendar_periods, |next| next - 1);
                        through.max(leading)
                    })
            }
        }
    }
}

pub fn period_mean_series(
    per_period_seqs: &[CellSequence],
    estimator: Estimator,
) -> Result<MeanActivitySeries> {
    period_mean_series_with(per_period_seqs, estimator, PeriodIndexing::default())
}

/// Running means of per-period estimates. Periods that are empty or have no
/// stationary pairs are skipped and counted.
pub fn period_mean_series_with(
    per_period_seqs: &[CellSequence],
    estimator: Estimator,
    indexing: PeriodIndexing,
) -> Result<MeanActivitySeries> {
    let mut per_period = Vec::new();
    let mut period_labels = Vec::new();
    let mut skipped = 0;
    for (d, seq) in per_period_seqs.iter().enumerate() {
        match estimator.estimate(seq) {
            Ok(dist) => {
                per_period.push(dist);
                period_labels.push(d + 1);
            }
            Err(Error::EmptySequence | Error::NoStationaryPairs) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if per_period.is_empty() {
        return Err(Error::AllPeriodsEmpty);
    }

    let n_cells_total = per_period[0].n_cells_total();
    let mut sum: BTreeMap<CellIndex, f64> = BTreeMap::new();
    let running_means = per_period
        .iter()
        .enumerate()
        .map(|(k, dist)| {
            for (c, m) in dist.iter() {
                *sum.entry(*c).or_insert(0.0) += m;
            }
            let d = (k + 1) as f64;
            let mass = sum.iter().map(|(c, s)| (*c, s / d)).collect();
            ActivityDistribution::from_masses(mass, n_cells_total)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(MeanActivitySeries {
        per_period,
        running_means,
        period_labels,
        n_calendar_periods: per_period_seqs.len(),
        skipped,
        indexing,
    })
}

/// Last period `D` with `||pi_bar(D) - pi_bar(D_max)||_1 > gamma`, or 0.
pub fn lct_distribution(series: &MeanActivitySeries, gamma: f64) -> usize {
    let terminal = series.terminal();
    let distances: Vec<f64> = series
        .running_means
        .iter()
        .map(|m| m.l1_distance(terminal))
        .collect();
    series.last_crossing(|k| distances[k] > gamma)
}

/// Each cell's cumulative mass over all cells with no larger mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingDistribution {
    pub rank_mass: BTreeMap<CellIndex, f64>,
}

impl RankingDistribution {
    pub fn get(&self, cell: &CellIndex) -> f64 {
        self.rank_mass.get(cell).copied().unwrap_or(0.0)
    }
}

/// Ranking transform of a distribution. Tied cells all receive the mass of
/// the whole tie group; zero-mass cells are absent. Values are divided by
/// the total mass so the top rank is exactly 1.
pub fn ranking_distribution(pi_bar: &ActivityDistribution) -> RankingDistribution {
    let mut cells: Vec<(f64, CellIndex)> = pi_bar.iter().map(|(c, m)| (*m, *c)).collect();
    cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut ranks = Vec::with_capacity(cells.len());
    let mut cumulative = 0.0;
    let mut i = 0;
    while i < cells.len() {
        let mut j = i;
        while j < cells.len() && cells[j].0 == cells[i].0 {
            cumulative += cells[j].0;
            j += 1;
        }
        for &(_, c) in &cells[i..j] {
            ranks.push((c, cumulative));
        }
        i = j;
    }
    let total = cumulative;
    RankingDistribution {
        rank_mass: ranks.into_iter().map(|(c, r)| (c, r / total)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSet {
    pub alpha: f64,
    pub cells: BTreeSet<CellIndex>,
}

impl LevelSet {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Total mass of `pi_bar` over the level set.
    pub fn coverage(&self, pi_bar: &ActivityDistribution) -> f64 {
        self.cells.iter().map(|c| pi_bar.get(c)).sum()
    }
}

/// Cells whose ranking value is at least `alpha`.
pub fn level_set(r: &RankingDistribution, alpha: f64) -> LevelSet {
    LevelSet {
        alpha,
        cells: r
            .rank_mass
            .iter()
            .filter(|(_, rank)| **rank >= alpha)
            .map(|(c, _)| *c)
            .collect(),
    }
}

/// Level sets of every running mean.
pub fn level_sets(series: &MeanActivitySeries, alpha: f64) -> Vec<LevelSet> {
    series
        .running_means
        .iter()
        .map(|m| level_set(&ranking_distribution(m), alpha))
        .collect()
}

/// Last period `D` whose level set differs from the terminal one by more than
/// `gamma`, measured as `|L(D) sym-diff L(D_max)| / |L(D_max)|`.
pub fn lct_level_set(series: &MeanActivitySeries, alpha: f64, gamma: f64) -> Result<usize> {
    let sets = level_sets(series, alpha);
    let terminal = sets.last().expect("series holds at least one period");
    if terminal.is_empty() {
        return Err(Error::EmptyTerminalLevelSet);
    }
    let size = terminal.len() as f64;
    let ratios: Vec<f64> = sets
        .iter()
        .map(|s| s.cells.symmetric_difference(&terminal.cells).count() as f64 / size)
        .collect();
    Ok(series.last_crossing(|k| ratios[k] > gamma))
}
