//! Trajectories, reference frames, the metric grid and geodesic distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius of the WGS84 ellipsoid, in meters.
pub const EARTH_MEAN_RADIUS_M: f64 = 6_371_008.8;

const WGS84_A: f64 = 6_378_137.0;
const WGS84_F: f64 = 1.0 / 298.257_223_563;

/// A single timestamped GPS fix. `t` is in seconds of an absolute epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsFix {
    pub t: f64,
    pub lon: f64,
    pub lat: f64,
}

impl GpsFix {
    pub fn new(t: f64, lon: f64, lat: f64) -> Result<Self> {
        if !t.is_finite() {
            return Err(Error::NonFiniteTime);
        }
        if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
            return Err(Error::InvalidCoordinate { lon, lat });
        }
        Ok(GpsFix { t, lon, lat })
    }
}

/// Observed fixes of one participant, strictly increasing in time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub participant_id: String,
    fixes: Vec<GpsFix>,
}

impl Trajectory {
    /// Builds a trajectory from fixes in arbitrary order.
    ///
    /// Fixes are stably sorted by time; of several fixes sharing a timestamp
    /// the first one in input order is kept. Returns the number of dropped
    /// duplicates alongside the trajectory.
    pub fn from_fixes(participant_id: impl Into<String>, mut fixes: Vec<GpsFix>) -> (Self, usize) {
        fixes.sort_by(|a, b| a.t.total_cmp(&b.t));
        let before = fixes.len();
        fixes.dedup_by(|later, first| later.t == first.t);
        let dropped = before - fixes.len();
        (
            Trajectory {
                participant_id: participant_id.into(),
                fixes,
            },
            dropped,
        )
    }

    /// Builds a trajectory from fixes already strictly increasing in time.
    pub fn new(participant_id: impl Into<String>, fixes: Vec<GpsFix>) -> Result<Self> {
        if fixes.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(Error::InvalidSequence(
                "fix times must be strictly increasing".into(),
            ));
        }
        Ok(Trajectory {
            participant_id: participant_id.into(),
            fixes,
        })
    }

    pub fn fixes(&self) -> &[GpsFix] {
        &self.fixes
    }

    pub fn len(&self) -> usize {
        self.fixes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixes.is_empty()
    }

    pub fn into_fixes(self) -> Vec<GpsFix> {
        self.fixes
    }
}

/// The interval `[t_min, t_max]` over which all processes and proportions
/// are defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFrame {
    pub t_min: f64,
    pub t_max: f64,
}

impl ReferenceFrame {
    pub fn new(t_min: f64, t_max: f64) -> Result<Self> {
        if !(t_min.is_finite() && t_max.is_finite()) || t_min >= t_max {
            return Err(Error::InvalidFrame { t_min, t_max });
        }
        Ok(ReferenceFrame { t_min, t_max })
    }

    /// Frame length `t_max - t_min` in seconds.
    pub fn duration(&self) -> f64 {
        self.t_max - self.t_min
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_min && t <= self.t_max
    }
}

/// Which geodesic formula backs distance computations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceFormula {
    /// Haversine on a sphere of the WGS84 mean radius.
    #[default]
    Haversine,
    /// Vincenty's inverse solution on the WGS84 ellipsoid.
    Ellipsoid,
}

impl DistanceFormula {
    pub fn distance(self, a: &GpsFix, b: &GpsFix) -> f64 {
        match self {
            DistanceFormula::Haversine => haversine_m(a.lon, a.lat, b.lon, b.lat),
            DistanceFormula::Ellipsoid => vincenty_m(a.lon, a.lat, b.lon, b.lat),
        }
    }
}

/// Great-circle distance in meters using the default (haversine) formula.
pub fn great_circle_distance(a: &GpsFix, b: &GpsFix) -> f64 {
    DistanceFormula::Haversine.distance(a, b)
}

pub(crate) fn haversine_m(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    let (phi1, phi2) = (lat1.to_radians(), lat2.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (lon2 - lon1).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_MEAN_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Vincenty inverse on WGS84. Falls back to haversine when the iteration
/// does not converge (nearly antipodal points).
pub(crate) fn vincenty_m(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    if lon1 == lon2 && lat1 == lat2 {
        return 0.0;
    }
    let b = WGS84_A * (1.0 - WGS84_F);
    let l = (lon2 - lon1).to_radians();
    let u1 = ((1.0 - WGS84_F) * lat1.to_radians().tan()).atan();
    let u2 = ((1.0 - WGS84_F) * lat2.to_radians().tan()).atan();
    let (sin_u1, cos_u1) = u1.sin_cos();
    let (sin_u2, cos_u2) = u2.sin_cos();

    let mut lambda = l;
    for _ in 0..200 {
        let (sin_lambda, cos_lambda) = lambda.sin_cos();
        let sin_sigma = ((cos_u2 * sin_lambda).powi(2)
            + (cos_u1 * sin_u2 - sin_u1 * cos_u2 * cos_lambda).powi(2))
        .sqrt();
        if sin_sigma == 0.0 {
            return 0.0;
        }
        let cos_sigma = sin_u1 * sin_u2 + cos_u1 * cos_u2 * cos_lambda;
        let sigma = sin_sigma.atan2(cos_sigma);
        let sin_alpha = cos_u1 * cos_u2 * sin_lambda / sin_sigma;
        let cos_sq_alpha = 1.0 - sin_alpha * sin_alpha;
        // equatorial line: cos_sq_alpha = 0
        let cos_2sigma_m = if cos_sq_alpha != 0.0 {
            cos_sigma - 2.0 * sin_u1 * sin_u2 / cos_sq_alpha
        } else {
            0.0
        };
        let c = WGS84_F / 16.0 * cos_sq_alpha * (4.0 + WGS84_F * (4.0 - 3.0 * cos_sq_alpha));
        let lambda_prev = lambda;
        lambda = l
            + (1.0 - c)
                * WGS84_F
                * sin_alpha
                * (sigma
                    + c * sin_sigma
                        * (cos_2sigma_m + c * cos_sigma * (-1.0 + 2.0 * cos_2sigma_m.powi(2))));
        if (lambda - lambda_prev).abs() < 1e-12 {
            let u_sq = cos_sq_alpha * (WGS84_A * WGS84_A - b * b) / (b * b);
            let big_a =
                1.0 + u_sq / 16384.0 * (4096.0 + u_sq * (-768.0 + u_sq * (320.0 - 175.0 * u_sq)));
            let big_b = u_sq / 1024.0 * (256.0 + u_sq * (-128.0 + u_sq * (74.0 - 47.0 * u_sq)));
            let delta_sigma = big_b
                * sin_sigma
                * (cos_2sigma_m
                    + big_b / 4.0
                        * (cos_sigma * (-1.0 + 2.0 * cos_2sigma_m.powi(2))
                            - big_b / 6.0
                                * cos_2sigma_m
                                * (-3.0 + 4.0 * sin_sigma.powi(2))
                                * (-3.0 + 4.0 * cos_2sigma_m.powi(2))));
            return b * big_a * (sigma - delta_sigma);
        }
    }
    haversine_m(lon1, lat1, lon2, lat2)
}

/// Row/column of a grid cell. Row 0 is the southernmost row, column 0 the
/// westernmost column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub row: u32,
    pub col: u32,
}

impl CellIndex {
    pub const fn new(row: u32, col: u32) -> Self {
        CellIndex { row, col }
    }
}

/// Square metric grid anchored at the southwest corner of the observation
/// window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin_lon: f64,
    pub origin_lat: f64,
    pub n_cols: u32,
    pub n_rows: u32,
    pub cell_size_m: f64,
}

impl GridSpec {
    pub fn new(
        origin_lon: f64,
        origin_lat: f64,
        n_cols: u32,
        n_rows: u32,
        cell_size_m: f64,
    ) -> Result<Self> {
        let grid = GridSpec {
            origin_lon,
            origin_lat,
            n_cols,
            n_rows,
            cell_size_m,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cols == 0 || self.n_rows == 0 {
            return Err(Error::InvalidGrid("grid must have at least one cell".into()));
        }
        if !(self.cell_size_m > 0.0 && self.cell_size_m.is_finite()) {
            return Err(Error::InvalidGrid("cell size must be positive".into()));
        }
        if !(-180.0..=180.0).contains(&self.origin_lon) || !(-90.0..90.0).contains(&self.origin_lat)
        {
            return Err(Error::InvalidGrid("origin outside WGS84 range".into()));
        }
        Ok(())
    }

    /// Total number of cells `N`.
    pub fn n_cells(&self) -> u64 {
        self.n_cols as u64 * self.n_rows as u64
    }

    pub fn contains(&self, cell: CellIndex) -> bool {
        cell.row < self.n_rows && cell.col < self.n_cols
    }

    /// Meters east and north of the origin (local equirectangular projection).
    pub fn project(&self, lon: f64, lat: f64) -> (f64, f64) {
        let east = (lon - self.origin_lon).to_radians()
            * EARTH_MEAN_RADIUS_M
            * self.origin_lat.to_radians().cos();
        let north = (lat - self.origin_lat).to_radians() * EARTH_MEAN_RADIUS_M;
        (east, north)
    }

    /// Inverse of [`GridSpec::project`].
    pub fn unproject(&self, east: f64, north: f64) -> (f64, f64) {
        let lon = self.origin_lon
            + (east / (EARTH_MEAN_RADIUS_M * self.origin_lat.to_radians().cos())).to_degrees();
        let lat = self.origin_lat + (north / EARTH_MEAN_RADIUS_M).to_degrees();
        (lon, lat)
    }

    /// Cell containing a lon/lat point, or `None` outside the window.
    /// Cells are half-open: `[low, high)` along both axes.
    pub fn cell_of(&self, lon: f64, lat: f64) -> Option<CellIndex> {
        let (east, north) = self.project(lon, lat);
        if !(east >= 0.0 && north >= 0.0) {
            return None;
        }
        let col = (east / self.cell_size_m).floor();
        let row = (north / self.cell_size_m).floor();
        if col >= self.n_cols as f64 || row >= self.n_rows as f64 {
            return None;
        }
        Some(CellIndex::new(row as u32, col as u32))
    }

    /// Lon/lat of a cell's center.
    pub fn cell_center(&self, cell: CellIndex) -> (f64, f64) {
        self.unproject(
            (cell.col as f64 + 0.5) * self.cell_size_m,
            (cell.row as f64 + 0.5) * self.cell_size_m,
        )
    }
}

/// Maps a fix to its grid cell; `None` is the outside-window sentinel.
pub fn map_to_cell(fix: &GpsFix, grid: &GridSpec) -> Option<CellIndex> {
    grid.cell_of(fix.lon, fix.lat)
}

/// Result of [`clip_to_window`].
#[derive(Debug, Clone, PartialEq)]
pub struct Clipped {
    pub trajectory: Trajectory,
    pub dropped_outside_frame: usize,
    pub dropped_outside_window: usize,
}

impl Clipped {
    pub fn dropped(&self) -> usize {
        self.dropped_outside_frame + self.dropped_outside_window
    }

    /// Nothing survived clipping. Not an error: callers decide whether to
    /// skip the participant.
    pub fn is_empty_after_clip(&self) -> bool {
        self.trajectory.is_empty()
    }
}

/// Keeps fixes inside both the time frame and the spatial window.
pub fn clip_to_window(traj: &Trajectory, grid: &GridSpec, frame: &ReferenceFrame) -> Clipped {
    let mut dropped_outside_frame = 0;
    let mut dropped_outside_window = 0;
    let fixes = traj
        .fixes
        .iter()
        .filter(|fix| {
            if !frame.contains(fix.t) {
                dropped_outside_frame += 1;
                false
            } else if map_to_cell(fix, grid).is_none() {
                dropped_outside_window += 1;
                false
            } else {
                true
            }
        })
        .copied()
        .collect();
    Clipped {
        trajectory: Trajectory {
            participant_id: traj.participant_id.clone(),
            fixes,
        },
        dropped_outside_frame,
        dropped_outside_window,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fix(t: f64, lon: f64, lat: f64) -> GpsFix {
        GpsFix::new(t, lon, lat).unwrap()
    }

    // Independent oracle: meridian arc by Simpson quadrature of the WGS84
    // meridional radius of curvature.
    fn meridian_arc_oracle(lat_deg: f64) -> f64 {
        let e2 = WGS84_F * (2.0 - WGS84_F);
        let m = |phi: f64| WGS84_A * (1.0 - e2) / (1.0 - e2 * phi.sin().powi(2)).powf(1.5);
        let n = 2000;
        let h = lat_deg.to_radians() / n as f64;
        let mut s = m(0.0) + m(lat_deg.to_radians());
        for i in 1..n {
            s += m(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn identical_points_are_zero() {
        let a = fix(0.0, 8.5, 47.3);
        assert_eq!(great_circle_distance(&a, &a), 0.0);
        assert_eq!(DistanceFormula::Ellipsoid.distance(&a, &a), 0.0);
    }

    #[test]
    fn one_degree_of_latitude_on_the_ellipsoid() {
        let oracle = meridian_arc_oracle(1.0);
        assert!((oracle - 110_574.0).abs() < 50.0, "oracle {oracle}");
        let d = DistanceFormula::Ellipsoid.distance(&fix(0.0, 0.0, 0.0), &fix(0.0, 0.0, 1.0));
        assert!((d - 110_574.0).abs() < 50.0, "{d}");
        assert!((d - oracle).abs() < 0.01);
    }

    #[test]
    fn one_degree_of_longitude_on_the_equator() {
        // equatorial arc: a * dlambda
        let oracle = WGS84_A * 1f64.to_radians();
        let d = DistanceFormula::Ellipsoid.distance(&fix(0.0, 0.0, 0.0), &fix(0.0, 1.0, 0.0));
        assert!((d - 111_319.0).abs() < 50.0, "{d}");
        assert!((d - oracle).abs() < 0.01);
    }

    #[test]
    fn haversine_matches_spherical_arc() {
        let d = great_circle_distance(&fix(0.0, 0.0, 0.0), &fix(0.0, 0.0, 1.0));
        assert!((d - EARTH_MEAN_RADIUS_M * 1f64.to_radians()).abs() < 1e-6);
    }

    #[test]
    fn antipodal_points_do_not_hang() {
        let d = DistanceFormula::Ellipsoid.distance(&fix(0.0, 0.0, 0.0), &fix(0.0, 180.0, 0.0));
        assert!(d > 1.9e7 && d < 2.1e7, "{d}");
    }

    #[test]
    fn invalid_coordinates_are_rejected() {
        assert!(GpsFix::new(0.0, 181.0, 0.0).is_err());
        assert!(GpsFix::new(0.0, 0.0, -90.5).is_err());
        assert!(GpsFix::new(f64::NAN, 0.0, 0.0).is_err());
    }

    fn grid() -> GridSpec {
        GridSpec::new(8.5, 47.3, 100, 80, 28.0).unwrap()
    }

    #[test]
    fn origin_maps_to_first_cell() {
        let g = grid();
        assert_eq!(g.cell_of(8.5, 47.3), Some(CellIndex::new(0, 0)));
    }

    #[test]
    fn one_and_a_half_cells_east_is_column_one() {
        let g = grid();
        let (lon, lat) = g.unproject(1.5 * g.cell_size_m, 0.0);
        assert_eq!(map_to_cell(&fix(0.0, lon, lat), &g), Some(CellIndex::new(0, 1)));
    }

    #[test]
    fn west_of_origin_is_outside() {
        let g = grid();
        let (lon, lat) = g.unproject(-1.0, 0.0);
        assert_eq!(g.cell_of(lon, lat), None);
        let (lon, lat) = g.unproject(100.0 * 28.0 + 1.0, 5.0);
        assert_eq!(g.cell_of(lon, lat), None);
    }

    #[test]
    fn duplicate_timestamps_keep_first() {
        let (traj, dups) = Trajectory::from_fixes(
            "p",
            vec![fix(2.0, 1.0, 1.0), fix(1.0, 0.0, 0.0), fix(2.0, 5.0, 5.0)],
        );
        assert_eq!(dups, 1);
        assert_eq!(traj.fixes(), &[fix(1.0, 0.0, 0.0), fix(2.0, 1.0, 1.0)]);
    }

    #[test]
    fn clipping_counts_drops() {
        let g = grid();
        let frame = ReferenceFrame::new(0.0, 100.0).unwrap();
        let inside = g.cell_center(CellIndex::new(3, 4));
        let outside = g.unproject(-50.0, 10.0);
        let fixes = vec![
            fix(1.0, inside.0, inside.1),
            fix(2.0, outside.0, outside.1),
            fix(3.0, inside.0, inside.1),
            fix(150.0, inside.0, inside.1),
            fix(4.0, outside.0, outside.1),
        ];
        let (traj, _) = Trajectory::from_fixes("p", fixes);
        let clipped = clip_to_window(&traj, &g, &frame);
        assert_eq!(clipped.trajectory.len(), 2);
        assert_eq!(clipped.dropped_outside_window, 2);
        assert_eq!(clipped.dropped_outside_frame, 1);
        assert!(!clipped.is_empty_after_clip());

        let all_in = Trajectory::new("q", vec![fix(1.0, inside.0, inside.1)]).unwrap();
        assert_eq!(clip_to_window(&all_in, &g, &frame).trajectory, all_in);

        let all_out = Trajectory::new("r", vec![fix(1.0, outside.0, outside.1)]).unwrap();
        assert!(clip_to_window(&all_out, &g, &frame).is_empty_after_clip());
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(
            lon1 in -179.0..179.0f64, lat1 in -80.0..80.0f64,
            lon2 in -179.0..179.0f64, lat2 in -80.0..80.0f64,
            lon3 in -179.0..179.0f64, lat3 in -80.0..80.0f64,
        ) {
            let (a, b, c) = (fix(0.0, lon1, lat1), fix(0.0, lon2, lat2), fix(0.0, lon3, lat3));
            for formula in [DistanceFormula::Haversine, DistanceFormula::Ellipsoid] {
                let ab = formula.distance(&a, &b);
                let ba = formula.distance(&b, &a);
                let bc = formula.distance(&b, &c);
                let ac = formula.distance(&a, &c);
                prop_assert!(ab >= 0.0);
                prop_assert!((ab - ba).abs() <= 1e-6 * ab.max(1.0));
                prop_assert!(ac <= (ab + bc) * (1.0 + 1e-6) + 1e-6);
            }
        }

        #[test]
        fn perturbation_inside_a_cell_keeps_its_index(
            row in 0u32..80, col in 0u32..100, u in 0.01..0.99f64, v in 0.01..0.99f64,
        ) {
            let g = grid();
            let (lon, lat) = g.unproject((col as f64 + u) * g.cell_size_m, (row as f64 + v) * g.cell_size_m);
            prop_assert_eq!(g.cell_of(lon, lat), Some(CellIndex::new(row, col)));
        }

        #[test]
        fn clipping_is_idempotent(ts in proptest::collection::vec((0.0..200.0f64, -10.0..3000.0f64, -10.0..2500.0f64), 0..40)) {
            let g = grid();
            let frame = ReferenceFrame::new(10.0, 150.0).unwrap();
            let fixes = ts.iter().map(|&(t, e, n)| { let (lon, lat) = g.unproject(e, n); fix(t, lon, lat) }).collect();
            let (traj, _) = Trajectory::from_fixes("p", fixes);
            let once = clip_to_window(&traj, &g, &frame);
            let twice = clip_to_window(&once.trajectory, &g, &frame);
            prop_assert_eq!(twice.dropped(), 0);
            prop_assert_eq!(twice.trajectory, once.trajectory);
        }
    }
}
