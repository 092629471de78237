//! Average-velocity process estimated from observed fixes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{DistanceFormula, ReferenceFrame, Trajectory};

/// Seconds in one week.
pub const WEEK_S: f64 = 7.0 * 24.0 * 3600.0;

/// Conversion factor from m/s to km/week.
pub const MPS_TO_KM_PER_WEEK: f64 = WEEK_S / 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessSample {
    /// Seconds elapsed since `t_min`.
    pub tau: f64,
    pub value: f64,
}

/// A sampled scalar process `Z(tau)` over `(0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarProcessSeries {
    samples: Vec<ProcessSample>,
    horizon: f64,
}

impl ScalarProcessSeries {
    pub fn new(samples: Vec<ProcessSample>, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon {horizon} must be positive")));
        }
        if samples.windows(2).any(|w| w[1].tau <= w[0].tau) {
            return Err(Error::InvalidParameter("sample taus must be strictly increasing".into()));
        }
        if samples
            .iter()
            .any(|s| !(s.tau > 0.0 && s.tau <= horizon) || !s.value.is_finite())
        {
            return Err(Error::InvalidParameter(
                "sample taus must lie in (0, horizon] with finite values".into(),
            ));
        }
        Ok(ScalarProcessSeries { samples, horizon })
    }

    pub fn samples(&self) -> &[ProcessSample] {
        &self.samples
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Value at the last sample, used as `Z(horizon)`.
    pub fn terminal_value(&self) -> Option<f64> {
        self.samples.last().map(|s| s.value)
    }
}

/// Straight-line path length over consecutive fixes with `t_{i+1} <= up_to`.
pub fn path_length(traj: &Trajectory, up_to: f64) -> f64 {
    path_length_with(traj, up_to, DistanceFormula::default())
}

pub fn path_length_with(traj: &Trajectory, up_to: f64, formula: DistanceFormula) -> f64 {
    traj.fixes()
        .windows(2)
        .take_while(|w| w[1].t <= up_to)
        .map(|w| formula.distance(&w[0], &w[1]))
        .sum()
}

/// Sample estimator of the average velocity, in m/s, evaluated at every
/// observation time after the first.
pub fn average_velocity_series(
    traj: &Trajectory,
    frame: &ReferenceFrame,
) -> Result<ScalarProcessSeries> {
    average_velocity_series_with(traj, frame, DistanceFormula::default())
}

pub fn average_velocity_series_with(
    traj: &Trajectory,
    frame: &ReferenceFrame,
    formula: DistanceFormula,
) -> Result<ScalarProcessSeries> {
    let fixes = traj.fixes();
    if fixes.len() < 2 {
        return Err(Error::TooFewFixes(fixes.len()));
    }
    let times: Vec<f64> = fixes.iter().map(|f| f.t).collect();
    let segments: Vec<f64> = fixes
        .windows(2)
        .map(|w| formula.distance(&w[0], &w[1]))
        .collect();
    velocity_from_segments(&times, &segments, frame)
}

/// Velocity series from fix times and the lengths of the segments between
/// consecutive fixes (`segments.len() == times.len() - 1`).
pub(crate) fn velocity_from_segments(
    times: &[f64],
    segments: &[f64],
    frame: &ReferenceFrame,
) -> Result<ScalarProcessSeries> {
    if times.len() < 2 {
        return Err(Error::TooFewFixes(times.len()));
    }
    debug_assert_eq!(segments.len(), times.len() - 1);
    let mut length = 0.0;
    let samples = times[1..]
        .iter()
        .zip(segments)
        .map(|(&t, &seg)| {
            length += seg;
            let tau = t - frame.t_min;
            ProcessSample {
                tau,
                value: length / tau,
            }
        })
        .collect();
    ScalarProcessSeries::new(samples, frame.duration())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{GpsFix, EARTH_MEAN_RADIUS_M};
    use proptest::prelude::*;

    // A point `meters` east of (0, 0) along the equator.
    fn east(t: f64, meters: f64) -> GpsFix {
        GpsFix::new(t, (meters / EARTH_MEAN_RADIUS_M).to_degrees(), 0.0).unwrap()
    }

    #[test]
    fn path_length_hand_sums() {
        let single = Trajectory::new("p", vec![east(0.0, 0.0)]).unwrap();
        assert_eq!(path_length(&single, 10.0), 0.0);

        let two = Trajectory::new("p", vec![east(0.0, 0.0), east(1.0, 100.0)]).unwrap();
        assert!((path_length(&two, 5.0) - 100.0).abs() < 1e-6);

        let three =
            Trajectory::new("p", vec![east(0.0, 0.0), east(1.0, 100.0), east(2.0, 250.0)]).unwrap();
        assert!((path_length(&three, 5.0) - 250.0).abs() < 1e-6);
        assert!((path_length(&three, 1.5) - 100.0).abs() < 1e-6);
        assert_eq!(path_length(&three, 0.5), 0.0);
    }

    #[test]
    fn too_few_fixes() {
        let frame = ReferenceFrame::new(0.0, 10.0).unwrap();
        let one = Trajectory::new("p", vec![east(1.0, 0.0)]).unwrap();
        assert_eq!(average_velocity_series(&one, &frame), Err(Error::TooFewFixes(1)));
    }

    #[test]
    fn stationary_participant_has_zero_velocity() {
        let frame = ReferenceFrame::new(0.0, 100.0).unwrap();
        let fixes = (0..10).map(|i| east(i as f64 * 10.0, 500.0)).collect();
        let series = average_velocity_series(&Trajectory::new("p", fixes).unwrap(), &frame).unwrap();
        assert_eq!(series.len(), 9);
        assert!(series.samples().iter().all(|s| s.value == 0.0));
    }

    #[test]
    fn constant_speed_recovers_speed_and_never_exceeds_it() {
        let v = 1.4;
        let frame = ReferenceFrame::new(0.0, 3600.0).unwrap();
        let fixes = (0..=60).map(|i| east(i as f64 * 60.0, v * i as f64 * 60.0)).collect();
        let series = average_velocity_series(&Trajectory::new("p", fixes).unwrap(), &frame).unwrap();
        for s in series.samples() {
            assert!((s.value - v).abs() / v <= 1e-3, "{s:?}");
            assert!(s.value <= v * (1.0 + 1e-9));
        }
    }

    #[test]
    fn moving_then_stopped_decays_as_inverse_tau() {
        let frame = ReferenceFrame::new(0.0, 2000.0).unwrap();
        // moves 1 m/s for 1000 s then stays put
        let fixes = (0..=20)
            .map(|i| {
                let t = i as f64 * 100.0;
                east(t, t.min(1000.0))
            })
            .collect();
        let series = average_velocity_series(&Trajectory::new("p", fixes).unwrap(), &frame).unwrap();
        for tau in [1200.0, 1500.0, 2000.0] {
            let s = series.samples().iter().find(|s| s.tau == tau).unwrap();
            assert!((s.value - 1000.0 / tau).abs() < 1e-6, "{s:?}");
        }
    }

    proptest! {
        #[test]
        fn path_length_is_nondecreasing(steps in proptest::collection::vec(0.0..500.0f64, 2..30), a in 0.0..40.0f64, b in 0.0..40.0f64) {
            let mut pos = 0.0;
            let fixes = steps.iter().enumerate().map(|(i, s)| { pos += s; east(i as f64, pos) }).collect();
            let traj = Trajectory::new("p", fixes).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(path_length(&traj, lo) <= path_length(&traj, hi));
        }

        #[test]
        fn velocity_is_scale_equivariant(
            gaps in proptest::collection::vec(1.0..100.0f64, 1..30),
            lens in proptest::collection::vec(0.0..1000.0f64, 30),
            c in 0.01..100.0f64,
        ) {
            let mut t = 5.0;
            let mut times = vec![t];
            for g in &gaps { t += g; times.push(t); }
            let frame = ReferenceFrame::new(0.0, t + 1.0).unwrap();
            let segs = &lens[..gaps.len()];
            let scaled: Vec<f64> = segs.iter().map(|s| s * c).collect();
            let base = velocity_from_segments(&times, segs, &frame).unwrap();
            let up = velocity_from_segments(&times, &scaled, &frame).unwrap();
            for (x, y) in base.samples().iter().zip(up.samples()) {
                prop_assert!(x.value >= 0.0);
                prop_assert!((y.value - c * x.value).abs() <= 1e-9 * (1.0 + y.value.abs()));
            }
        }
    }
}
