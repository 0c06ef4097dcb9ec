//! Detector-assisted single-object tracking.
//!
//! A detector initializes, periodically resets and re-acquires a fast online
//! tracker ([`dat`]); the crate also ships the trackers themselves
//! ([`trackers`]), a synthetic sequence generator ([`synth`]), detector adapters
//! ([`detectors`]) and the scoring protocol ([`eval`]).

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dat;
pub mod dataio;
pub mod detectors;
pub mod eval;
pub mod geometry;
pub mod synth;
pub mod trackers;

pub use geometry::{
    classify_match, iou, select_primary, BoundingBox, Category, Detection, MatchOutcome, MatchThresholds,
};
