//! Run configuration: defaults, TOML loading and validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activity::Estimator;
use crate::cohort::BootstrapConfig;
use crate::geo::{DistanceFormula, GridSpec, ReferenceFrame};
use crate::period::PeriodIndexing;
use crate::velocity::WEEK_S;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },

    #[error("cannot parse config: {0}")]
    Parse(String),

    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Fixed analysis frame shared by every participant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameConfig {
    pub t_min: f64,
    pub t_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSpec,
    /// When absent each participant's frame runs from their first to their
    /// last retained fix.
    pub frame: Option<FrameConfig>,
    pub period_length_s: f64,
    pub gamma: f64,
    pub alphas: Vec<f64>,
    /// Level used for the per-participant LCT-level-set measure.
    pub level_alpha: f64,
    pub estimator: Estimator,
    pub period_indexing: PeriodIndexing,
    pub distance: DistanceFormula,
    /// Consecutive fixes closer than this many meters are dropped; 0 is off.
    pub jitter_m: f64,
    pub seed: u64,
    pub bootstrap_resamples: usize,
    pub ci_level: f64,
    /// Worker threads; 0 uses all cores.
    pub threads: usize,
    /// Upper bound on fixes held in memory per processing batch.
    pub batch_fixes: usize,
    pub skip_bad: bool,
    pub input: Option<PathBuf>,
    pub meta: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: GridSpec {
                origin_lon: 6.0,
                origin_lat: 46.0,
                n_cols: 4000,
                n_rows: 4000,
                cell_size_m: 28.0,
            },
            frame: None,
            period_length_s: WEEK_S,
            gamma: 0.2,
            alphas: (1..=10).map(|i| i as f64 / 10.0).collect(),
            level_alpha: 0.2,
            estimator: Estimator::Ordinary,
            period_indexing: PeriodIndexing::WithData,
            distance: DistanceFormula::Haversine,
            jitter_m: 0.0,
            seed: 20_200_101,
            bootstrap_resamples: 1000,
            ci_level: 0.9,
            threads: 0,
            batch_fixes: 500_000,
            skip_bad: false,
            input: None,
            meta: None,
            output: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn frame(&self) -> Option<ReferenceFrame> {
        self.frame.map(|f| ReferenceFrame {
            t_min: f.t_min,
            t_max: f.t_max,
        })
    }

    pub fn bootstrap(&self) -> BootstrapConfig {
        BootstrapConfig {
            resamples: self.bootstrap_resamples,
            level: self.ci_level,
            seed: self.seed,
        }
    }

    /// Checks every field. Input paths must exist; the output path is
    /// created by the run.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.grid.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let Some(f) = self.frame {
            ReferenceFrame::new(f.t_min, f.t_max).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return invalid(format!("gamma must be positive, got {}", self.gamma));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return invalid("alphas must be a nonempty list within [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.level_alpha) {
            return invalid(format!("level_alpha {} outside [0, 1]", self.level_alpha));
        }
        if !(self.period_length_s > 0.0 && self.period_length_s.is_finite()) {
            return invalid("period_length_s must be positive".into());
        }
        if !(self.jitter_m >= 0.0 && self.jitter_m.is_finite()) {
            return invalid("jitter_m must be >= 0".into());
        }
        if self.bootstrap_resamples == 0 {
            return invalid("bootstrap_resamples must be at least 1".into());
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return invalid("ci_level must lie in (0, 1)".into());
        }
        if self.batch_fixes == 0 {
            return invalid("batch_fixes must be at least 1".into());
        }
        for (name, path) in [("input", &self.input), ("meta", &self.meta)] {
            if let Some(p) = path {
                if !p.is_file() {
                    return invalid(format!("{name} file {} does not exist", p.display()));
                }
            }
        }
        Ok(())
    }
}
