use thiserror::Error;

/// Errors raised by the analysis layers.
///
/// Variants map one-to-one onto the status codes exported by the C API, so
/// adding a variant means adding a code there too.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid coordinate: lon {lon}, lat {lat}")]
    InvalidCoordinate { lon: f64, lat: f64 },

    #[error("timestamp is not finite")]
    NonFiniteTime,

    #[error("invalid reference frame: t_min {t_min} must be < t_max {t_max}")]
    InvalidFrame { t_min: f64, t_max: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("trajectory needs at least 2 fixes, got {0}")]
    TooFewFixes(usize),

    #[error("terminal value of the process is zero; APE undefined")]
    ZeroTerminalValue,

    #[error("empty series")]
    EmptySeries,

    #[error("empty cohort")]
    EmptyCohort,

    #[error("LCT results use different thresholds")]
    MixedGamma,

    #[error("empty cell sequence")]
    EmptySequence,

    #[error("cell sequence is not valid: {0}")]
    InvalidSequence(String),

    #[error("sampling density must be strictly positive")]
    NonpositiveDensity,

    #[error("no consecutive pair of fixes stays in the same cell")]
    NoStationaryPairs,

    #[error("reference frame of {frame} s is shorter than one period of {period} s")]
    FrameTooShort { frame: f64, period: f64 },

    #[error("no period could be estimated")]
    AllPeriodsEmpty,

    #[error("terminal level set is empty")]
    EmptyTerminalLevelSet,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
