//! C ABI over the mobstab library.
//!
//! Every fallible function returns an [`MsStatus`]; on failure a message is
//! available from [`ms_last_error_message`] on the same thread. Objects are
//! opaque handles created by `ms_*_new`/`ms_*_estimate` and released with the
//! matching `ms_*_free`. Times are seconds, coordinates are WGS84 degrees.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mobstab::activity::{ActivityDistribution, CellSequence, Estimator};
use mobstab::components::connected_components;
use mobstab::geo::{CellIndex, GpsFix, GridSpec, ReferenceFrame, Trajectory};
use mobstab::lct::{ape_series, last_crossing_time};
use mobstab::period::{lct_distribution, lct_level_set, period_mean_series, split_periods};
use mobstab::velocity::average_velocity_series;
use mobstab::Error;

/// Result codes. Codes from 10 upward correspond to library errors.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Panic = 3,
    InvalidCoordinate = 10,
    NonFiniteTime = 11,
    InvalidFrame = 12,
    InvalidGrid = 13,
    TooFewFixes = 14,
    ZeroTerminalValue = 15,
    EmptySeries = 16,
    EmptyCohort = 17,
    MixedGamma = 18,
    EmptySequence = 19,
    InvalidSequence = 20,
    NonpositiveDensity = 21,
    NoStationaryPairs = 22,
    FrameTooShort = 23,
    AllPeriodsEmpty = 24,
    EmptyTerminalLevelSet = 25,
    InvalidParameter = 26,
}

impl From<&Error> for MsStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidCoordinate { .. } => MsStatus::InvalidCoordinate,
            Error::NonFiniteTime => MsStatus::NonFiniteTime,
            Error::InvalidFrame { .. } => MsStatus::InvalidFrame,
            Error::InvalidGrid(_) => MsStatus::InvalidGrid,
            Error::TooFewFixes(_) => MsStatus::TooFewFixes,
            Error::ZeroTerminalValue => MsStatus::ZeroTerminalValue,
            Error::EmptySeries => MsStatus::EmptySeries,
            Error::EmptyCohort => MsStatus::EmptyCohort,
            Error::MixedGamma => MsStatus::MixedGamma,
            Error::EmptySequence => MsStatus::EmptySequence,
            Error::InvalidSequence(_) => MsStatus::InvalidSequence,
            Error::NonpositiveDensity => MsStatus::NonpositiveDensity,
            Error::NoStationaryPairs => MsStatus::NoStationaryPairs,
            Error::FrameTooShort { .. } => MsStatus::FrameTooShort,
            Error::AllPeriodsEmpty => MsStatus::AllPeriodsEmpty,
            Error::EmptyTerminalLevelSet => MsStatus::EmptyTerminalLevelSet,
            Error::InvalidParameter(_) => MsStatus::InvalidParameter,
        }
    }
}

/// Activity estimator selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsEstimator {
    Ordinary = 0,
    Conservative = 1,
}

impl From<MsEstimator> for Estimator {
    fn from(e: MsEstimator) -> Self {
        match e {
            MsEstimator::Ordinary => Estimator::Ordinary,
            MsEstimator::Conservative => Estimator::Conservative,
        }
    }
}

/// Opaque trajectory handle.
pub struct MsTrajectory(Trajectory);

/// Opaque grid handle.
pub struct MsGrid(GridSpec);

/// Opaque activity distribution handle.
pub struct MsDistribution {
    dist: ActivityDistribution,
    cells: Vec<(CellIndex, f64)>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn fail(e: Error) -> MsStatus {
    set_error(e.to_string());
    MsStatus::from(&e)
}

/// Runs `body`, converting panics into `MsStatus::Panic`.
fn guard(body: impl FnOnce() -> MsStatus) -> MsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            MsStatus::Panic
        }
    }
}

macro_rules! non_null {
    ($($p:ident),*) => {
        $(if $p.is_null() {
            set_error(concat!(stringify!($p), " is null"));
            return MsStatus::NullPointer;
        })*
    };
}

macro_rules! try_ms {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return fail(e),
        }
    };
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ms_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ms_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a trajectory from `n` fixes in any order. Fixes sharing a
/// timestamp are reduced to the first; the number dropped is written to
/// `duplicates` when it is not null.
///
/// # Safety
/// `id` must be a NUL-terminated string; `t`, `lon` and `lat` must point to
/// `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_trajectory_new(
    id: *const c_char,
    t: *const f64,
    lon: *const f64,
    lat: *const f64,
    n: usize,
    duplicates: *mut usize,
    out: *mut *mut MsTrajectory,
) -> MsStatus {
    guard(|| {
        non_null!(id, out);
        if n > 0 {
            non_null!(t, lon, lat);
        }
        let Ok(id) = CStr::from_ptr(id).to_str() else {
            set_error("id is not valid UTF-8");
            return MsStatus::InvalidUtf8;
        };
        let (ts, lons, lats) = if n == 0 {
            (&[][..], &[][..], &[][..])
        } else {
            (
                std::slice::from_raw_parts(t, n),
                std::slice::from_raw_parts(lon, n),
                std::slice::from_raw_parts(lat, n),
            )
        };
        let fixes = try_ms!((0..n)
            .map(|i| GpsFix::new(ts[i], lons[i], lats[i]))
            .collect::<Result<Vec<_>, _>>());
        let (traj, dropped) = Trajectory::from_fixes(id, fixes);
        if !duplicates.is_null() {
            *duplicates = dropped;
        }
        *out = Box::into_raw(Box::new(MsTrajectory(traj)));
        MsStatus::Ok
    })
}

/// Number of fixes, or 0 for a null handle.
///
/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ms_trajectory_len(traj: *const MsTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.0.len())
}

/// # Safety
/// `traj` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ms_trajectory_free(traj: *mut MsTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_grid_new(
    origin_lon: f64,
    origin_lat: f64,
    n_cols: u32,
    n_rows: u32,
    cell_size_m: f64,
    out: *mut *mut MsGrid,
) -> MsStatus {
    guard(|| {
        non_null!(out);
        let grid = try_ms!(GridSpec::new(origin_lon, origin_lat, n_cols, n_rows, cell_size_m));
        *out = Box::into_raw(Box::new(MsGrid(grid)));
        MsStatus::Ok
    })
}

/// Cell containing a point; fails with `InvalidCoordinate` outside the grid.
///
/// # Safety
/// `grid` must be a live handle; `row` and `col` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_grid_cell_of(
    grid: *const MsGrid,
    lon: f64,
    lat: f64,
    row: *mut u32,
    col: *mut u32,
) -> MsStatus {
    guard(|| {
        non_null!(grid, row, col);
        match (*grid).0.cell_of(lon, lat) {
            Some(c) => {
                *row = c.row;
                *col = c.col;
                MsStatus::Ok
            }
            None => fail(Error::InvalidCoordinate { lon, lat }),
        }
    })
}

/// # Safety
/// `grid` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ms_grid_free(grid: *mut MsGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Last crossing time, in seconds after `t_min`, of the velocity APE above
/// `gamma`.
///
/// # Safety
/// `traj` must be a live handle; `out_seconds` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_velocity_lct(
    traj: *const MsTrajectory,
    t_min: f64,
    t_max: f64,
    gamma: f64,
    out_seconds: *mut f64,
) -> MsStatus {
    guard(|| {
        non_null!(traj, out_seconds);
        if !(gamma > 0.0) {
            return fail(Error::InvalidParameter(format!("gamma {gamma} must be positive")));
        }
        let frame = try_ms!(ReferenceFrame::new(t_min, t_max));
        let z = try_ms!(average_velocity_series(&(*traj).0, &frame));
        let ape = try_ms!(ape_series(&z));
        *out_seconds = last_crossing_time(&ape, gamma).lct;
        MsStatus::Ok
    })
}

/// Activity distribution of a trajectory over `[t_min, t_max]`. Fixes
/// outside the frame or the grid are ignored.
///
/// # Safety
/// `traj` and `grid` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_activity_estimate(
    traj: *const MsTrajectory,
    grid: *const MsGrid,
    t_min: f64,
    t_max: f64,
    estimator: MsEstimator,
    out: *mut *mut MsDistribution,
) -> MsStatus {
    guard(|| {
        non_null!(traj, grid, out);
        let frame = try_ms!(ReferenceFrame::new(t_min, t_max));
        let seq = try_ms!(CellSequence::from_trajectory(&(*traj).0, &(*grid).0, frame));
        let dist = try_ms!(Estimator::from(estimator).estimate(&seq));
        let cells = dist.iter().map(|(c, m)| (*c, *m)).collect();
        *out = Box::into_raw(Box::new(MsDistribution { dist, cells }));
        MsStatus::Ok
    })
}

/// Number of cells with positive mass, or 0 for a null handle.
///
/// # Safety
/// `dist` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ms_distribution_len(dist: *const MsDistribution) -> usize {
    dist.as_ref().map_or(0, |d| d.cells.len())
}

/// The `index`-th cell in row-major order and its mass.
///
/// # Safety
/// `dist` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_distribution_get(
    dist: *const MsDistribution,
    index: usize,
    row: *mut u32,
    col: *mut u32,
    mass: *mut f64,
) -> MsStatus {
    guard(|| {
        non_null!(dist, row, col, mass);
        let dist = &*dist;
        match dist.cells.get(index) {
            Some((c, m)) => {
                *row = c.row;
                *col = c.col;
                *mass = *m;
                MsStatus::Ok
            }
            None => fail(Error::InvalidParameter(format!("index {index} out of range"))),
        }
    })
}

/// L1 distance between two distributions.
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_distribution_l1(
    a: *const MsDistribution,
    b: *const MsDistribution,
    out: *mut f64,
) -> MsStatus {
    guard(|| {
        non_null!(a, b, out);
        *out = (*a).dist.l1_distance(&(*b).dist);
        MsStatus::Ok
    })
}

/// # Safety
/// `dist` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ms_distribution_free(dist: *mut MsDistribution) {
    if !dist.is_null() {
        drop(Box::from_raw(dist));
    }
}

/// Distribution and level-set last crossing times, in periods of
/// `period_length` seconds.
///
/// # Safety
/// `traj` and `grid` must be live handles; the out pointers must be
/// writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn ms_period_stability(
    traj: *const MsTrajectory,
    grid: *const MsGrid,
    t_min: f64,
    t_max: f64,
    period_length: f64,
    estimator: MsEstimator,
    alpha: f64,
    gamma: f64,
    lct_distribution_out: *mut usize,
    lct_level_set_out: *mut usize,
) -> MsStatus {
    guard(|| {
        non_null!(traj, grid, lct_distribution_out, lct_level_set_out);
        if !(gamma > 0.0) {
            return fail(Error::InvalidParameter(format!("gamma {gamma} must be positive")));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return fail(Error::InvalidParameter(format!("alpha {alpha} outside [0, 1]")));
        }
        let frame = try_ms!(ReferenceFrame::new(t_min, t_max));
        let seq = try_ms!(CellSequence::from_trajectory(&(*traj).0, &(*grid).0, frame));
        let (_, periods) = try_ms!(split_periods(&seq, period_length));
        let series = try_ms!(period_mean_series(&periods, estimator.into()));
        let ls = try_ms!(lct_level_set(&series, alpha, gamma));
        *lct_distribution_out = lct_distribution(&series, gamma);
        *lct_level_set_out = ls;
        MsStatus::Ok
    })
}

/// Number of queen-connected components among `n` cells. Cells outside the
/// grid are ignored.
///
/// # Safety
/// `rows` and `cols` must point to `n` readable values; `grid` must be a
/// live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_connected_components(
    rows: *const u32,
    cols: *const u32,
    n: usize,
    grid: *const MsGrid,
    out: *mut usize,
) -> MsStatus {
    guard(|| {
        non_null!(grid, out);
        if n > 0 {
            non_null!(rows, cols);
        }
        let cells: Vec<CellIndex> = (0..n)
            .map(|i| CellIndex::new(*rows.add(i), *cols.add(i)))
            .collect();
        *out = connected_components(&cells, &(*grid).0).n_components;
        MsStatus::Ok
    })
}
