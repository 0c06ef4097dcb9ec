//! Online single-object trackers and their numerical substrates.

pub mod dft;
pub mod flow;
mod kcf;
mod median_flow;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::Frame;
use crate::geometry::BoundingBox;

pub use dft::{dft2d, idft2d, Dft2d};
pub use flow::{lk_flow, FlowPoint, FlowStatus, Pyramid};
pub use kcf::KcfTracker;
pub use median_flow::MedianFlowTracker;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackerError {
    #[error("tracker updated before initialization")]
    NotInitialized,
    #[error("tracker already initialized")]
    AlreadyInitialized,
    #[error("cannot initialize on box {0:?}: {1}")]
    DegenerateBox(BoundingBox, String),
    #[error("invalid tracker parameters: {0}")]
    InvalidParams(String),
}

/// One tracker step. `failed` holds exactly when no box is reported.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerUpdate {
    bbox: Option<BoundingBox>,
    quality: f64,
}

impl TrackerUpdate {
    pub fn success(bbox: BoundingBox, quality: f64) -> Self {
        Self { bbox: Some(bbox), quality: quality.max(0.0) }
    }

    pub fn failure(quality: f64) -> Self {
        Self { bbox: None, quality: quality.max(0.0) }
    }

    pub fn bbox(&self) -> Option<BoundingBox> {
        self.bbox
    }

    /// Tracker-specific score, larger is better.
    pub fn quality(&self) -> f64 {
        self.quality
    }

    pub fn failed(&self) -> bool {
        self.bbox.is_none()
    }
}

pub trait Tracker: Send {
    /// Learns the target from `bbox` in `frame`. Allowed exactly once.
    fn init(&mut self, frame: &Frame, bbox: BoundingBox) -> Result<(), TrackerError>;

    fn update(&mut self, frame: &Frame) -> Result<TrackerUpdate, TrackerError>;
}

/// Produces fresh, uninitialized trackers.
pub trait TrackerFactory: Sync {
    fn create(&self) -> Box<dyn Tracker>;
}

impl<F> TrackerFactory for F
where
    F: Fn() -> Box<dyn Tracker> + Sync,
{
    fn create(&self) -> Box<dyn Tracker> {
        self()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedianFlowParams {
    /// Points per side of the seeding lattice.
    pub grid: usize,
    pub pyramid_levels: usize,
    /// Half-width of the Lucas-Kanade window.
    pub lk_window: usize,
    pub lk_iterations: usize,
    /// Median forward-backward error (pixels) above which the update fails.
    pub fb_fail_threshold: f64,
}

impl Default for MedianFlowParams {
    fn default() -> Self {
        Self { grid: 10, pyramid_levels: 3, lk_window: 7, lk_iterations: 20, fb_fail_threshold: 10.0 }
    }
}

impl MedianFlowParams {
    pub fn validate(&self) -> Result<(), TrackerError> {
        if self.grid < 2 || self.pyramid_levels == 0 || self.lk_window == 0 || self.lk_iterations == 0 {
            return Err(TrackerError::InvalidParams(
                "grid must be >= 2 and levels, window, iterations positive".into(),
            ));
        }
        if !(self.fb_fail_threshold > 0.0) {
            return Err(TrackerError::InvalidParams("fb_fail_threshold must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KcfParams {
    /// Window size relative to the target.
    pub padding: f64,
    pub kernel_sigma: f64,
    /// Ridge regularizer.
    pub lambda: f64,
    /// Model learning rate.
    pub interp_factor: f64,
    /// Peak response below which the update fails.
    pub response_fail_threshold: f64,
    /// Regression label bandwidth relative to `sqrt(target area)`.
    pub output_sigma_factor: f64,
}

impl Default for KcfParams {
    fn default() -> Self {
        Self {
            padding: 2.5,
            kernel_sigma: 0.5,
            lambda: 1e-4,
            interp_factor: 0.075,
            response_fail_threshold: 0.15,
            output_sigma_factor: 0.1,
        }
    }
}

impl KcfParams {
    pub fn validate(&self) -> Result<(), TrackerError> {
        let ok = self.padding > 1.0
            && self.kernel_sigma > 0.0
            && self.lambda > 0.0
            && (0.0..=1.0).contains(&self.interp_factor)
            && self.output_sigma_factor > 0.0
            && self.response_fail_threshold.is_finite();
        if ok {
            Ok(())
        } else {
            Err(TrackerError::InvalidParams(format!("{self:?}")))
        }
    }
}

/// Built-in tracker choices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrackerKind {
    MedianFlow(MedianFlowParams),
    Kcf(KcfParams),
}

impl TrackerFactory for TrackerKind {
    fn create(&self) -> Box<dyn Tracker> {
        match *self {
            TrackerKind::MedianFlow(p) => Box::new(MedianFlowTracker::new(p)),
            TrackerKind::Kcf(p) => Box::new(KcfTracker::new(p)),
        }
    }
}

/// Rejects boxes that do not overlap the frame by at least one pixel each way.
pub(crate) fn check_init_box(frame: &Frame, bbox: &BoundingBox) -> Result<(), TrackerError> {
    let ix = bbox.right().min(frame.width() as f64) - bbox.x().max(0.0);
    let iy = bbox.bottom().min(frame.height() as f64) - bbox.y().max(0.0);
    if ix < 1.0 || iy < 1.0 {
        return Err(TrackerError::DegenerateBox(*bbox, "box does not overlap the frame".into()));
    }
    Ok(())
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}
