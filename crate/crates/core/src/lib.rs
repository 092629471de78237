//! Temporal stability of human mobility from timestamped GPS fixes.
//!
//! The crate estimates average-velocity processes and grid-cell activity
//! distributions from GPS fixes, and measures how long a participant must be
//! observed before these quantities stabilize (their last crossing time of a
//! threshold). A synthetic trajectory generator with exact ground truth backs
//! the estimator checks.

pub mod activity;
pub mod cohort;
pub mod components;
pub mod config;
pub mod error;
pub mod geo;
pub mod ingest;
pub mod lct;
pub mod period;
pub mod pipeline;
pub mod synth;
pub mod velocity;

pub use error::{Error, Result};
