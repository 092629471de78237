//! Synthetic itineraries with exactly known ground truth, sampling schemes,
//! named presets and the estimator convergence check.
//!
//! An itinerary tiles its frame with dwells at fixed points and
//! constant-velocity legs between points. Time spent in each cell is exact
//! for dwells and integrated by the midpoint rule on legs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activity::{conservative_estimator, ordinary_estimator, ActivityDistribution, CellSequence};
use crate::cohort::{AgeGroup, ParticipantMeta, Sex};
use crate::error::{Error, Result};
use crate::geo::{GpsFix, GridSpec, ReferenceFrame, Trajectory};

/// Leg integration step used by [`ground_truth_distribution`], in seconds.
pub const DEFAULT_STEP_S: f64 = 0.1;

pub const DAY_S: f64 = 86_400.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Segment {
    Dwell {
        start: f64,
        end: f64,
        lon: f64,
        lat: f64,
    },
    Leg {
        start: f64,
        end: f64,
        from: (f64, f64),
        to: (f64, f64),
    },
}

impl Segment {
    pub fn start(&self) -> f64 {
        match *self {
            Segment::Dwell { start, .. } | Segment::Leg { start, .. } => start,
        }
    }

    pub fn end(&self) -> f64 {
        match *self {
            Segment::Dwell { end, .. } | Segment::Leg { end, .. } => end,
        }
    }

    /// Lon/lat at `t`, interpolated linearly along legs.
    pub fn position_at(&self, t: f64) -> (f64, f64) {
        match *self {
            Segment::Dwell { lon, lat, .. } => (lon, lat),
            Segment::Leg {
                start,
                end,
                from,
                to,
            } => {
                let f = ((t - start) / (end - start)).clamp(0.0, 1.0);
                (from.0 + f * (to.0 - from.0), from.1 + f * (to.1 - from.1))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseItinerary {
    segments: Vec<Segment>,
    frame: ReferenceFrame,
    repeat_period: Option<f64>,
}

impl PiecewiseItinerary {
    /// Segments must have positive length and tile their span without gaps.
    pub fn new(segments: Vec<Segment>, repeat_period: Option<f64>) -> Result<Self> {
        let (first, last) = match (segments.first(), segments.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(Error::InvalidParameter("itinerary has no segments".into())),
        };
        if segments.iter().any(|s| !(s.end() > s.start())) {
            return Err(Error::InvalidParameter("segments must have positive duration".into()));
        }
        if segments.windows(2).any(|w| w[1].start() != w[0].end()) {
            return Err(Error::InvalidParameter("segments must tile the frame".into()));
        }
        if let Some(p) = repeat_period {
            if !(p > 0.0) {
                return Err(Error::InvalidParameter("repeat period must be positive".into()));
            }
        }
        let frame = ReferenceFrame::new(first.start(), last.end())?;
        Ok(PiecewiseItinerary {
            segments,
            frame,
            repeat_period,
        })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn frame(&self) -> ReferenceFrame {
        self.frame
    }

    pub fn repeat_period(&self) -> Option<f64> {
        self.repeat_period
    }

    /// Position at `t`, clamped to the frame.
    pub fn position_at(&self, t: f64) -> (f64, f64) {
        let t = t.clamp(self.frame.t_min, self.frame.t_max);
        let i = self
            .segments
            .partition_point(|s| s.end() <= t)
            .min(self.segments.len() - 1);
        self.segments[i].position_at(t)
    }
}

/// Appends segments one after another.
#[derive(Debug, Clone)]
pub struct ItineraryBuilder {
    t: f64,
    pos: (f64, f64),
    segments: Vec<Segment>,
}

impl ItineraryBuilder {
    pub fn new(t_start: f64, pos: (f64, f64)) -> Self {
        ItineraryBuilder {
            t: t_start,
            pos,
            segments: Vec::new(),
        }
    }

    pub fn now(&self) -> f64 {
        self.t
    }

    /// Stays at the current position until `t_end`. No-op if `t_end` is not
    /// in the future.
    pub fn dwell_until(&mut self, t_end: f64) -> &mut Self {
        if t_end > self.t {
            self.segments.push(Segment::Dwell {
                start: self.t,
                end: t_end,
                lon: self.pos.0,
                lat: self.pos.1,
            });
            self.t = t_end;
        }
        self
    }

    /// Moves to `to` at constant velocity over `duration` seconds. A zero
    /// duration jumps.
    pub fn travel_to(&mut self, to: (f64, f64), duration: f64) -> &mut Self {
        if duration > 0.0 && to != self.pos {
            self.segments.push(Segment::Leg {
                start: self.t,
                end: self.t + duration,
                from: self.pos,
                to,
            });
            self.t += duration;
        }
        self.pos = to;
        self
    }

    pub fn build(self, repeat_period: Option<f64>) -> Result<PiecewiseItinerary> {
        PiecewiseItinerary::new(self.segments, repeat_period)
    }
}

pub fn ground_truth_distribution(itinerary: &PiecewiseItinerary, grid: &GridSpec) -> Result<ActivityDistribution> {
    ground_truth_with_step(itinerary, grid, DEFAULT_STEP_S)
}

pub fn ground_truth_with_step(
    itinerary: &PiecewiseItinerary,
    grid: &GridSpec,
    step: f64,
) -> Result<ActivityDistribution> {
    let f = itinerary.frame();
    ground_truth_window(itinerary, grid, f.t_min, f.t_max, step)
}

/// Exact share of `[t0, t1]` spent in each cell. Errors if the itinerary
/// leaves the grid window during the interval.
pub fn ground_truth_window(
    itinerary: &PiecewiseItinerary,
    grid: &GridSpec,
    t0: f64,
    t1: f64,
    step: f64,
) -> Result<ActivityDistribution> {
    if !(step > 0.0) || !(t1 > t0) {
        return Err(Error::InvalidParameter("need step > 0 and t1 > t0".into()));
    }
    let outside = || Error::InvalidParameter("itinerary leaves the grid window".into());
    let mut acc = BTreeMap::new();
    for seg in itinerary.segments() {
        let (a, b) = (seg.start().max(t0), seg.end().min(t1));
        if b <= a {
            continue;
        }
        match *seg {
            Segment::Dwell { lon, lat, .. } => {
                let cell = grid.cell_of(lon, lat).ok_or_else(outside)?;
                *acc.entry(cell).or_insert(0.0) += b - a;
            }
            Segment::Leg { .. } => {
                let n = ((b - a) / step).ceil().max(1.0) as usize;
                let h = (b - a) / n as f64;
                for k in 0..n {
                    let (lon, lat) = seg.position_at(a + (k as f64 + 0.5) * h);
                    let cell = grid.cell_of(lon, lat).ok_or_else(outside)?;
                    *acc.entry(cell).or_insert(0.0) += h;
                }
            }
        }
    }
    ActivityDistribution::from_weights(acc, grid.n_cells())
}

/// Ground truth of each consecutive period of length `period_length`; a
/// trailing partial period is dropped.
pub fn per_period_ground_truth(
    itinerary: &PiecewiseItinerary,
    grid: &GridSpec,
    period_length: f64,
) -> Result<Vec<ActivityDistribution>> {
    let f = itinerary.frame();
    let d_max = (f.duration() / period_length + 1e-9).floor() as usize;
    (0..d_max)
        .map(|d| {
            let start = f.t_min + d as f64 * period_length;
            let end = (start + period_length).min(f.t_max);
            ground_truth_window(itinerary, grid, start, end, DEFAULT_STEP_S)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "law")]
pub enum SamplingLaw {
    Uniform,
    /// Beta(a, b) on the frame rescaled to [0, 1].
    Beta { a: f64, b: f64 },
    /// Piecewise-constant density over equal-width bins of the frame.
    Custom { bins: Vec<f64> },
    /// Deterministic midpoints of `n` equal slices of the frame.
    Regular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingScheme {
    pub law: SamplingLaw,
    pub n: usize,
}

impl SamplingScheme {
    pub fn new(law: SamplingLaw, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("sample count must be at least 1".into()));
        }
        match &law {
            SamplingLaw::Beta { a, b } if !(*a > 0.0 && *b > 0.0) => {
                return Err(Error::InvalidParameter("beta parameters must be positive".into()))
            }
            SamplingLaw::Custom { bins }
                if bins.is_empty()
                    || bins.iter().any(|w| !(*w >= 0.0 && w.is_finite()))
                    || !(bins.iter().sum::<f64>() > 0.0) =>
            {
                return Err(Error::InvalidParameter(
                    "custom density needs nonnegative bins with positive total".into(),
                ))
            }
            _ => {}
        }
        Ok(SamplingScheme { law, n })
    }

    pub fn uniform(n: usize) -> Self {
        SamplingScheme {
            law: SamplingLaw::Uniform,
            n,
        }
    }

    /// Sorted, distinct sampling times inside `frame`.
    pub fn sample_times(&self, frame: &ReferenceFrame, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let (t0, span) = (frame.t_min, frame.duration());
        let mut times: Vec<f64> = match &self.law {
            SamplingLaw::Uniform => (0..self.n).map(|_| t0 + rng.random::<f64>() * span).collect(),
            SamplingLaw::Beta { a, b } => {
                let beta = Beta::new(*a, *b).expect("validated parameters");
                (0..self.n).map(|_| t0 + beta.sample(rng) * span).collect()
            }
            SamplingLaw::Custom { bins } => {
                let index = WeightedIndex::new(bins).expect("validated bins");
                let width = span / bins.len() as f64;
                (0..self.n)
                    .map(|_| t0 + (index.sample(rng) as f64 + rng.random::<f64>()) * width)
                    .collect()
            }
            SamplingLaw::Regular => (0..self.n)
                .map(|i| t0 + (i as f64 + 0.5) * span / self.n as f64)
                .collect(),
        };
        times.sort_by(f64::total_cmp);
        times.dedup();
        times
    }

    /// Sampling density at `t` up to a constant factor.
    pub fn relative_density(&self, frame: &ReferenceFrame, t: f64) -> f64 {
        let x = ((t - frame.t_min) / frame.duration()).clamp(0.0, 1.0);
        match &self.law {
            SamplingLaw::Uniform | SamplingLaw::Regular => 1.0,
            SamplingLaw::Beta { a, b } => x.powf(a - 1.0) * (1.0 - x).powf(b - 1.0),
            SamplingLaw::Custom { bins } => {
                let i = ((x * bins.len() as f64) as usize).min(bins.len() - 1);
                bins[i]
            }
        }
    }
}

/// Draws fixes at the scheme's times with exact itinerary positions.
pub fn sample_fixes(itinerary: &PiecewiseItinerary, scheme: &SamplingScheme, seed: u64) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fixes = scheme
        .sample_times(&itinerary.frame(), &mut rng)
        .into_iter()
        .map(|t| {
            let (lon, lat) = itinerary.position_at(t);
            GpsFix { t, lon, lat }
        })
        .collect();
    Trajectory::from_fixes("synthetic", fixes).0
}

/// SplitMix64 finalizer applied to a running combination of `parts`.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(base, |acc, p| {
        let mut z = acc ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    })
}

/// The 11.2 km square window all presets live in.
pub fn preset_grid() -> GridSpec {
    GridSpec {
        origin_lon: 6.55,
        origin_lat: 46.50,
        n_cols: 400,
        n_rows: 400,
        cell_size_m: 28.0,
    }
}

fn anchor(grid: &GridSpec, row: u32, col: u32) -> (f64, f64) {
    grid.cell_center(crate::geo::CellIndex::new(row, col))
}

fn leg_duration(period: f64) -> f64 {
    60.0_f64.min(0.01 * period)
}

/// Visits `stops` in order within each period, leaving stop `i` at
/// `start + fractions[i] * period`, and returns to the first stop.
fn periodic_tour(
    frame: ReferenceFrame,
    period: f64,
    stops: &[(f64, f64)],
    leave_at: &[f64],
) -> Result<PiecewiseItinerary> {
    let leg = leg_duration(period);
    let mut b = ItineraryBuilder::new(frame.t_min, stops[0]);
    let mut start = frame.t_min;
    while start + leg < frame.t_max {
        for (i, frac) in leave_at.iter().enumerate() {
            let next = stops[(i + 1) % stops.len()];
            b.dwell_until((start + frac * period).min(frame.t_max - leg));
            b.travel_to(next, leg);
        }
        start += period;
    }
    b.dwell_until(frame.t_max);
    b.build(Some(period))
}

/// Named synthetic agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Parked in one cell for the whole frame.
    Stationary,
    /// Home and work, one round trip per period.
    Commuter,
    /// Four places visited in a fixed cycle each period.
    Cycle4,
    /// Fixed home and work plus an evening place that moves every two
    /// periods.
    Drifting,
    /// Jumps between two neighbouring cells every hundredth of the frame.
    Alternator,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Stationary,
        Preset::Commuter,
        Preset::Cycle4,
        Preset::Drifting,
        Preset::Alternator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Stationary => "stationary",
            Preset::Commuter => "commuter",
            Preset::Cycle4 => "cycle4",
            Preset::Drifting => "drifting",
            Preset::Alternator => "alternator",
        }
    }

    /// Whether uniform sampling of this preset meets the density, coverage
    /// and finite-transition assumptions the convergence check relies on.
    /// The alternator is built to break the density assumption at low rates.
    pub fn regular_assumptions(self) -> bool {
        self != Preset::Alternator
    }

    pub fn default_law(self) -> SamplingLaw {
        match self {
            Preset::Alternator => SamplingLaw::Regular,
            _ => SamplingLaw::Uniform,
        }
    }

    pub fn itinerary(self, frame: ReferenceFrame, period: f64) -> Result<PiecewiseItinerary> {
        let grid = preset_grid();
        match self {
            Preset::Stationary => {
                let mut b = ItineraryBuilder::new(frame.t_min, anchor(&grid, 200, 200));
                b.dwell_until(frame.t_max);
                b.build(None)
            }
            Preset::Commuter => {
                let stops = [anchor(&grid, 200, 200), anchor(&grid, 210, 211)];
                periodic_tour(frame, period, &stops, &[0.35, 0.70])
            }
            Preset::Cycle4 => {
                let stops = [
                    anchor(&grid, 200, 200),
                    anchor(&grid, 200, 214),
                    anchor(&grid, 214, 214),
                    anchor(&grid, 214, 200),
                ];
                periodic_tour(frame, period, &stops, &[0.30, 0.55, 0.75, 0.95])
            }
            Preset::Drifting => drifting_itinerary(frame, period, 2, 0),
            Preset::Alternator => {
                let cells = [anchor(&grid, 200, 200), anchor(&grid, 200, 201)];
                let slot = frame.duration() / 100.0;
                let mut b = ItineraryBuilder::new(frame.t_min, cells[0]);
                for k in 0..100 {
                    b.travel_to(cells[k % 2], 0.0);
                    let end = if k == 99 {
                        frame.t_max
                    } else {
                        frame.t_min + (k + 1) as f64 * slot
                    };
                    b.dwell_until(end);
                }
                b.build(None)
            }
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown preset {s:?}")))
    }
}

/// An agent with a fixed home and work place whose evening place is
/// redrawn every `k` periods.
pub fn drifting_itinerary(frame: ReferenceFrame, period: f64, k: usize, seed: u64) -> Result<PiecewiseItinerary> {
    if k == 0 {
        return Err(Error::InvalidParameter("drift interval must be at least one period".into()));
    }
    let grid = preset_grid();
    let leg = leg_duration(period);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xD21F]));
    let (r0, c0) = (rng.random_range(100..300i32), rng.random_range(100..300i32));
    let near = |rng: &mut ChaCha8Rng| {
        let (dr, dc) = (rng.random_range(-60i32..=60), rng.random_range(-60i32..=60));
        anchor(&grid, (r0 + dr) as u32, (c0 + dc) as u32)
    };
    let home = anchor(&grid, r0 as u32, c0 as u32);
    let work = near(&mut rng);
    let mut evening = near(&mut rng);
    let mut b = ItineraryBuilder::new(frame.t_min, home);
    let mut d = 0;
    let mut start = frame.t_min;
    while start + leg < frame.t_max {
        if d > 0 && d % k == 0 {
            evening = near(&mut rng);
        }
        for (leave, next) in [(0.30, work), (0.62, evening), (0.82, home)] {
            b.dwell_until((start + leave * period).min(frame.t_max - leg));
            b.travel_to(next, leg);
        }
        start += period;
        d += 1;
    }
    b.dwell_until(frame.t_max);
    b.build(None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub presets: Vec<Preset>,
    pub rates: Vec<usize>,
    pub n_seeds: usize,
    pub base_seed: u64,
    pub frame_length: f64,
    pub period_length: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            presets: Preset::ALL.to_vec(),
            rates: vec![100, 1_000, 10_000],
            n_seeds: 50,
            base_seed: 7,
            frame_length: DAY_S,
            period_length: DAY_S / 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub preset: Preset,
    pub n: usize,
    pub seeds: usize,
    /// Seeds where the conservative estimator had no stationary pairs.
    pub conservative_failures: usize,
    pub median_ordinary_vs_conservative: Option<f64>,
    pub median_ordinary_vs_truth: f64,
    pub median_conservative_vs_truth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetCheck {
    pub preset: Preset,
    pub regular_assumptions: bool,
    pub ordinary_vs_truth_decreasing: bool,
    pub ordinary_vs_conservative_decreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
}

/// True if the values strictly decrease, or are all exactly zero.
pub fn strictly_decreasing_or_zero(values: &[Option<f64>]) -> bool {
    let Some(v) = values.iter().copied().collect::<Option<Vec<f64>>>() else {
        return false;
    };
    v.iter().all(|x| *x == 0.0) || v.windows(2).all(|w| w[1] < w[0])
}

impl ConvergenceReport {
    pub fn rows_for(&self, preset: Preset) -> Vec<&ConvergenceRow> {
        self.rows.iter().filter(|r| r.preset == preset).collect()
    }

    pub fn checks(&self) -> Vec<PresetCheck> {
        let mut presets: Vec<Preset> = self.rows.iter().map(|r| r.preset).collect();
        presets.dedup();
        presets
            .into_iter()
            .map(|preset| {
                let rows = self.rows_for(preset);
                let o: Vec<Option<f64>> = rows.iter().map(|r| Some(r.median_ordinary_vs_truth)).collect();
                let oc: Vec<Option<f64>> = rows.iter().map(|r| r.median_ordinary_vs_conservative).collect();
                PresetCheck {
                    preset,
                    regular_assumptions: preset.regular_assumptions(),
                    ordinary_vs_truth_decreasing: strictly_decreasing_or_zero(&o),
                    ordinary_vs_conservative_decreasing: strictly_decreasing_or_zero(&oc),
                }
            })
            .collect()
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

struct RunErrors {
    o_truth: f64,
    oc: Option<(f64, f64)>,
}

fn run_once(
    itinerary: &PiecewiseItinerary,
    truth: &ActivityDistribution,
    scheme: &SamplingScheme,
    seed: u64,
) -> Result<RunErrors> {
    let grid = preset_grid();
    let traj = sample_fixes(itinerary, scheme, seed);
    let seq = CellSequence::from_trajectory(&traj, &grid, itinerary.frame())?;
    let o = ordinary_estimator(&seq)?;
    let oc = match conservative_estimator(&seq) {
        Ok(c) => Some((o.l1_distance(&c), c.l1_distance(truth))),
        Err(Error::NoStationaryPairs) => None,
        Err(e) => return Err(e),
    };
    Ok(RunErrors {
        o_truth: o.l1_distance(truth),
        oc,
    })
}

/// Medians over seeds of the estimator errors, per preset and sampling rate.
pub fn verify_convergence(cfg: &VerifyConfig) -> Result<ConvergenceReport> {
    if cfg.rates.windows(2).any(|w| w[1] <= w[0]) || cfg.rates.first().is_some_and(|&n| n == 0) {
        return Err(Error::InvalidParameter("rates must be positive and increasing".into()));
    }
    if cfg.n_seeds == 0 {
        return Err(Error::InvalidParameter("need at least one seed".into()));
    }
    let frame = ReferenceFrame::new(0.0, cfg.frame_length)?;
    let grid = preset_grid();
    let mut rows = Vec::new();
    for (p_idx, &preset) in cfg.presets.iter().enumerate() {
        let itinerary = preset.itinerary(frame, cfg.period_length)?;
        let truth = ground_truth_distribution(&itinerary, &grid)?;
        for &n in &cfg.rates {
            let scheme = SamplingScheme::new(preset.default_law(), n)?;
            let runs = (0..cfg.n_seeds)
                .into_par_iter()
                .map(|s| {
                    let seed = derive_seed(cfg.base_seed, &[p_idx as u64, n as u64, s as u64]);
                    run_once(&itinerary, &truth, &scheme, seed)
                })
                .collect::<Result<Vec<_>>>()?;
            let ok: Vec<(f64, f64)> = runs.iter().filter_map(|r| r.oc).collect();
            rows.push(ConvergenceRow {
                preset,
                n,
                seeds: cfg.n_seeds,
                conservative_failures: runs.len() - ok.len(),
                median_ordinary_vs_conservative: median(ok.iter().map(|x| x.0).collect()),
                median_ordinary_vs_truth: median(runs.iter().map(|r| r.o_truth).collect())
                    .expect("at least one seed"),
                median_conservative_vs_truth: median(ok.iter().map(|x| x.1).collect()),
            });
        }
    }
    Ok(ConvergenceReport { rows })
}

/// How strongly an agent keeps to the same places from period to period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutineProfile {
    /// Probability that a flexible slot goes to the agent's usual place.
    pub p_usual: f64,
    /// Number of occasional places the agent picks from otherwise.
    pub pool_size: usize,
    /// Probability that an occasional visit goes to a place never seen
    /// before instead of the pool.
    pub p_novel: f64,
    /// Share of each period spent at home.
    pub home_share: f64,
    /// Share of the time away from home spent in the first slot.
    pub first_slot_share: f64,
}

impl RoutineProfile {
    /// Draws a profile for an age group. Older agents keep to their usual
    /// places more often and have fewer occasional places.
    pub fn draw(age: AgeGroup, rng: &mut ChaCha8Rng) -> Self {
        let (p_usual, pool_size, p_novel) = match age {
            AgeGroup::Young => (rng.random_range(0.0..0.2), 30, 0.8),
            AgeGroup::Middle => (rng.random_range(0.5..0.8), 5, 0.1),
            AgeGroup::Old | AgeGroup::Unknown => (rng.random_range(0.9..1.0), 3, 0.0),
        };
        RoutineProfile {
            p_usual,
            pool_size,
            p_novel,
            home_share: rng.random_range(0.38..0.45),
            first_slot_share: rng.random_range(0.58..0.62),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.p_usual)
            && self.pool_size > 0
            && (0.0..=1.0).contains(&self.p_novel)
            && (0.05..=0.9).contains(&self.home_share)
            && (0.1..=0.9).contains(&self.first_slot_share);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter("invalid routine profile".into()))
        }
    }
}

/// Daily-routine agent: home, then two flexible slots, then home again.
/// Each slot is spent at its usual place with probability `p_usual` and at a
/// random place from the agent's pool otherwise; slot boundaries jitter by
/// two percent of the period.
pub fn routine_itinerary(
    profile: RoutineProfile,
    frame: ReferenceFrame,
    period: f64,
    seed: u64,
) -> Result<PiecewiseItinerary> {
    profile.validate()?;
    let grid = preset_grid();
    let leg = leg_duration(period);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x2007]));
    let (r0, c0) = (rng.random_range(130..270u32), rng.random_range(130..270u32));
    let near = |rng: &mut ChaCha8Rng, reach: i32| {
        let dr = rng.random_range(-reach..=reach);
        let dc = rng.random_range(-reach..=reach);
        anchor(&grid, (r0 as i32 + dr) as u32, (c0 as i32 + dc) as u32)
    };
    let home = anchor(&grid, r0, c0);
    let usual = [near(&mut rng, 40), near(&mut rng, 40)];
    let pool: Vec<(f64, f64)> = (0..profile.pool_size).map(|_| near(&mut rng, 70)).collect();

    let leave_home = 0.6 * profile.home_share;
    let back_home = 1.0 - 0.4 * profile.home_share;
    let switch = leave_home + (back_home - leave_home) * profile.first_slot_share;
    let mut b = ItineraryBuilder::new(frame.t_min, home);
    let mut start = frame.t_min;
    while start + period <= frame.t_max + 1e-9 {
        let bounds = [leave_home, switch, back_home]
            .map(|f: f64| start + (f + rng.random_range(-0.02..0.02)) * period);
        for (slot, leave) in bounds.iter().enumerate() {
            b.dwell_until(*leave);
            let next = match slot {
                2 => home,
                s if rng.random::<f64>() < profile.p_usual => usual[s],
                _ if rng.random::<f64>() < profile.p_novel => near(&mut rng, 120),
                _ => pool[rng.random_range(0..pool.len())],
            };
            b.travel_to(next, leg);
        }
        start += period;
    }
    b.dwell_until(frame.t_max);
    b.build(Some(period))
}

/// Layout of a synthetic demographic cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub per_age_group: usize,
    pub n_periods: usize,
    pub period_length: f64,
    pub fixes_per_period: usize,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            per_age_group: 10,
            n_periods: 28,
            period_length: DAY_S,
            fixes_per_period: 288,
            seed: 1,
        }
    }
}

impl CohortSpec {
    pub fn frame(&self) -> ReferenceFrame {
        ReferenceFrame {
            t_min: 0.0,
            t_max: self.n_periods as f64 * self.period_length,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParticipant {
    pub meta: ParticipantMeta,
    pub trajectory: Trajectory,
}

/// Young, middle and old agents whose routine strength grows with age.
/// Sex alternates within each age group. Ids are `young-00`, `middle-00`...
pub fn synthetic_cohort(spec: &CohortSpec) -> Result<Vec<SyntheticParticipant>> {
    if spec.n_periods == 0 || spec.fixes_per_period == 0 || !(spec.period_length > 0.0) {
        return Err(Error::InvalidParameter("cohort spec needs periods and fixes".into()));
    }
    let frame = spec.frame();
    let scheme = SamplingScheme::uniform(spec.n_periods * spec.fixes_per_period);
    let mut jobs = Vec::new();
    for (g, (age, name)) in [(AgeGroup::Young, "young"), (AgeGroup::Middle, "middle"), (AgeGroup::Old, "old")]
        .into_iter()
        .enumerate()
    {
        for i in 0..spec.per_age_group {
            jobs.push((g as u64, i, age, format!("{name}-{i:02}")));
        }
    }
    jobs.into_par_iter()
        .map(|(g, i, age, id)| {
            let seed = derive_seed(spec.seed, &[g, i as u64]);
            let profile = RoutineProfile::draw(age, &mut ChaCha8Rng::seed_from_u64(seed));
            let itinerary = routine_itinerary(profile, frame, spec.period_length, seed)?;
            let traj = sample_fixes(&itinerary, &scheme, derive_seed(seed, &[1]));
            let sex = if i % 2 == 0 { Sex::Female } else { Sex::Male };
            Ok(SyntheticParticipant {
                meta: ParticipantMeta {
                    participant_id: id.clone(),
                    sex,
                    age_group: age,
                },
                trajectory: Trajectory::new(id, traj.into_fixes())?,
            })
        })
        .collect()
}

/// Cohort of drifting agents, each with its own anchors, sampled uniformly.
pub fn drifting_cohort(
    n_agents: usize,
    n_periods: usize,
    period_length: f64,
    fixes_per_period: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let frame = ReferenceFrame::new(0.0, n_periods as f64 * period_length)?;
    let scheme = SamplingScheme::new(SamplingLaw::Uniform, n_periods * fixes_per_period)?;
    (0..n_agents)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, &[i as u64]);
            let itinerary = drifting_itinerary(frame, period_length, 2, s)?;
            let traj = sample_fixes(&itinerary, &scheme, derive_seed(s, &[1]));
            Trajectory::new(format!("drift-{i:03}"), traj.into_fixes())
        })
        .collect()
}
