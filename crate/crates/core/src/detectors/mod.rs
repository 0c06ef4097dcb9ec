//! Detector contract plus the annotation-replay and external-process detectors.

mod external;
mod replay;

use thiserror::Error;

use crate::dataio::FrameSequence;
use crate::geometry::{select_primary, Category, Detection};

pub use external::{ExternalDetector, DEFAULT_TIMEOUT, PROTOCOL_VERSION};
pub use replay::{replay_detect, ReplayDetector, ReplayNoise};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("detector unavailable: {0}")]
    Unavailable(String),
    #[error("detector protocol error ({message}) in line {line:?}")]
    Protocol { line: String, message: String },
    #[error("detector channel closed: {0}")]
    ChannelClosed(String),
    #[error("invalid detector request: {0}")]
    InvalidRequest(String),
}

/// Output of one detector call.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorResult {
    detections: Vec<Detection>,
    cost_units: f64,
}

impl DetectorResult {
    /// Keeps only the highest-confidence detection of each camera-wearer hand;
    /// other categories pass through unchanged.
    pub fn new(detections: Vec<Detection>, cost_units: f64) -> Self {
        let mut kept: Vec<Detection> = Vec::with_capacity(detections.len());
        for d in &detections {
            if d.category.is_camera_wearer() {
                if kept.iter().any(|k| k.category == d.category) {
                    continue;
                }
                kept.push(select_primary(&detections, d.category).expect("category present"));
            } else {
                kept.push(*d);
            }
        }
        Self { detections: kept, cost_units: cost_units.max(0.0) }
    }

    pub fn empty(cost_units: f64) -> Self {
        Self::new(Vec::new(), cost_units)
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn cost_units(&self) -> f64 {
        self.cost_units
    }

    pub fn primary(&self, category: Category) -> Option<Detection> {
        select_primary(&self.detections, category)
    }
}

pub trait Detector: Send {
    /// Detects `category` in frame `frame_index` of `sequence`.
    fn detect(
        &mut self,
        sequence: &FrameSequence,
        frame_index: usize,
        category: Category,
    ) -> Result<DetectorResult, DetectorError>;
}

impl<D: Detector + ?Sized> Detector for Box<D> {
    fn detect(
        &mut self,
        sequence: &FrameSequence,
        frame_index: usize,
        category: Category,
    ) -> Result<DetectorResult, DetectorError> {
        (**self).detect(sequence, frame_index, category)
    }
}
