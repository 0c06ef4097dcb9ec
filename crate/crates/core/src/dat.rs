//! The detector-assisted tracking engine.
//!
//! Each frame is localized by exactly one of the detector or the tracker. The
//! engine acquires the target with `C` consistent detections, tracks it for
//! at most `R` tracker updates, and falls back to the detector when the
//! tracker fails. After `C` straight misses it goes idle and probes the
//! detector every `K` frames.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{DataError, Frame, FrameSequence};
use crate::detectors::{Detector, DetectorError};
use crate::geometry::{iou, BoundingBox, Category, Detection};
use crate::trackers::{Tracker, TrackerError, TrackerFactory};

#[derive(Debug, Error)]
pub enum DatError {
    #[error("invalid DAT parameters: {0}")]
    InvalidParams(String),
    #[error("frame {frame}: detector failed: {source}")]
    Detector { frame: usize, source: DetectorError },
    #[error("frame {frame}: tracker initialization failed: {source}")]
    TrackerInit { frame: usize, source: TrackerError },
    #[error("frame {frame}: tracker failed: {source}")]
    Tracker { frame: usize, source: TrackerError },
    #[error("frame {frame}: {source}")]
    Data { frame: usize, source: DataError },
    #[error("tracker-only baseline needs a {0} annotation to initialize from, and the sequence has none")]
    NoGroundTruth(Category),
}

/// Engine parameters. Rendered and parsed as `R/C/K`, e.g. `100/3/60`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatParams {
    /// R: tracker updates between scheduled re-detections.
    pub reset_iterations: usize,
    /// C: consistent detections needed to start the tracker, and straight
    /// misses that disable the pipeline.
    pub consecutive_iou: usize,
    /// K: idle frames between detector probes while disabled.
    pub check_iterations: usize,
    /// Minimum IoU with the previous detection for a hit to extend the streak.
    pub overlap_threshold: f64,
    pub category: Category,
    /// When false, a scheduled reset restarts the tracker on the first hit
    /// instead of waiting for a streak of `C`.
    pub reset_requires_streak: bool,
}

impl Default for DatParams {
    fn default() -> Self {
        Self {
            reset_iterations: 100,
            consecutive_iou: 3,
            check_iterations: 60,
            overlap_threshold: 0.1,
            category: Category::L,
            reset_requires_streak: true,
        }
    }
}

impl DatParams {
    pub fn new(r: usize, c: usize, k: usize) -> Result<Self, DatError> {
        let p = Self { reset_iterations: r, consecutive_iou: c, check_iterations: k, ..Self::default() };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DatError> {
        if self.reset_iterations == 0 || self.consecutive_iou == 0 || self.check_iterations == 0 {
            return Err(DatError::InvalidParams(format!("R, C and K must be at least 1, got {self}")));
        }
        if !(self.overlap_threshold > 0.0 && self.overlap_threshold < 1.0) {
            return Err(DatError::InvalidParams(format!(
                "overlap threshold must lie in (0, 1), got {}",
                self.overlap_threshold
            )));
        }
        if !self.category.is_camera_wearer() {
            return Err(DatError::InvalidParams(format!("category must be L or R, got {}", self.category)));
        }
        Ok(())
    }
}

impl fmt::Display for DatParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.reset_iterations, self.consecutive_iou, self.check_iterations)
    }
}

impl FromStr for DatParams {
    type Err = DatError;

    /// Parses `R/C/K`; the remaining fields take their defaults.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split('/').collect();
        let bad = || DatError::InvalidParams(format!("expected R/C/K with positive integers, got {s:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let mut v = [0usize; 3];
        for (slot, part) in v.iter_mut().zip(&parts) {
            *slot = part.parse().map_err(|_| bad())?;
        }
        Self::new(v[0], v[1], v[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Source {
    Detector,
    Tracker,
    None,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Detector => "DETECTOR",
            Source::Tracker => "TRACKER",
            Source::None => "NONE",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "DETECTOR" => Ok(Source::Detector),
            "TRACKER" => Ok(Source::Tracker),
            "NONE" => Ok(Source::None),
            other => Err(format!("unknown source {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateTag {
    Acquiring,
    Tracking,
    Disabled,
}

/// What happened on one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameOutcome {
    pub frame_index: usize,
    pub bbox: Option<BoundingBox>,
    pub source: Source,
    pub detector_called: bool,
    pub tracker_updated: bool,
    pub state_after: StateTag,
}

impl FrameOutcome {
    fn idle(frame_index: usize, state_after: StateTag) -> Self {
        Self {
            frame_index,
            bbox: None,
            source: Source::None,
            detector_called: false,
            tracker_updated: false,
            state_after,
        }
    }
}

pub enum DatState {
    Acquiring {
        hit_streak: usize,
        miss_streak: usize,
        last_detection: Option<Detection>,
        /// Set after a scheduled reset when that reset accepts a single hit.
        single_hit: bool,
    },
    Tracking {
        tracker: Box<dyn Tracker>,
        frames_since_init: usize,
    },
    Disabled {
        frames_idle: usize,
    },
}

impl fmt::Debug for DatState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatState::Acquiring { hit_streak, miss_streak, last_detection, single_hit } => f
                .debug_struct("Acquiring")
                .field("hit_streak", hit_streak)
                .field("miss_streak", miss_streak)
                .field("last_detection", last_detection)
                .field("single_hit", single_hit)
                .finish(),
            DatState::Tracking { frames_since_init, .. } => {
                f.debug_struct("Tracking").field("frames_since_init", frames_since_init).finish_non_exhaustive()
            }
            DatState::Disabled { frames_idle } => f.debug_struct("Disabled").field("frames_idle", frames_idle).finish(),
        }
    }
}

impl DatState {
    pub fn initial() -> Self {
        DatState::Acquiring { hit_streak: 0, miss_streak: 0, last_detection: None, single_hit: false }
    }

    pub fn tag(&self) -> StateTag {
        match self {
            DatState::Acquiring { .. } => StateTag::Acquiring,
            DatState::Tracking { .. } => StateTag::Tracking,
            DatState::Disabled { .. } => StateTag::Disabled,
        }
    }
}

/// Borrowed collaborators of one engine run.
pub struct StepContext<'a> {
    pub sequence: &'a FrameSequence,
    pub detector: &'a mut dyn Detector,
    pub trackers: &'a dyn TrackerFactory,
    pub params: &'a DatParams,
}

impl StepContext<'_> {
    fn frame(&self, index: usize) -> Result<Frame, DatError> {
        self.sequence.frame(index).map_err(|source| DatError::Data { frame: index, source })
    }

    fn detect(&mut self, index: usize) -> Result<Option<Detection>, DatError> {
        let result = self
            .detector
            .detect(self.sequence, index, self.params.category)
            .map_err(|source| DatError::Detector { frame: index, source })?;
        Ok(result.primary(self.params.category))
    }

    fn start_tracker(&self, index: usize, bbox: BoundingBox) -> Result<DatState, DatError> {
        let mut tracker = self.trackers.create();
        let frame = self.frame(index)?;
        tracker.init(&frame, bbox).map_err(|source| DatError::TrackerInit { frame: index, source })?;
        Ok(DatState::Tracking { tracker, frames_since_init: 0 })
    }

    /// Rule (b): one detector call while acquiring.
    fn acquire(
        &mut self,
        index: usize,
        hit_streak: usize,
        miss_streak: usize,
        last_detection: Option<Detection>,
        single_hit: bool,
        tracker_updated: bool,
    ) -> Result<(DatState, FrameOutcome), DatError> {
        let c = self.params.consecutive_iou;
        let found = self.detect(index)?;
        let (next, bbox, source) = match found {
            Some(d) => {
                let consistent = last_detection.is_none_or(|l| iou(&d.bbox, &l.bbox) > self.params.overlap_threshold);
                let hit_streak = if consistent { hit_streak + 1 } else { 1 };
                let next = if hit_streak >= c || single_hit {
                    self.start_tracker(index, d.bbox)?
                } else {
                    DatState::Acquiring { hit_streak, miss_streak: 0, last_detection: Some(d), single_hit }
                };
                (next, Some(d.bbox), Source::Detector)
            }
            None => {
                let miss_streak = miss_streak + 1;
                let next = if miss_streak >= c {
                    DatState::Disabled { frames_idle: 0 }
                } else {
                    DatState::Acquiring { hit_streak: 0, miss_streak, last_detection: None, single_hit }
                };
                (next, None, Source::None)
            }
        };
        let outcome = FrameOutcome {
            frame_index: index,
            bbox,
            source,
            detector_called: true,
            tracker_updated,
            state_after: next.tag(),
        };
        Ok((next, outcome))
    }

    /// Advances the engine by one frame.
    pub fn step(&mut self, state: DatState, index: usize) -> Result<(DatState, FrameOutcome), DatError> {
        let state = match state {
            DatState::Tracking { frames_since_init, .. } if frames_since_init >= self.params.reset_iterations => {
                DatState::Acquiring {
                    hit_streak: 0,
                    miss_streak: 0,
                    last_detection: None,
                    single_hit: !self.params.reset_requires_streak,
                }
            }
            other => other,
        };
        match state {
            DatState::Acquiring { hit_streak, miss_streak, last_detection, single_hit } => {
                self.acquire(index, hit_streak, miss_streak, last_detection, single_hit, false)
            }
            DatState::Tracking { mut tracker, frames_since_init } => {
                let frame = self.frame(index)?;
                let update = tracker.update(&frame).map_err(|source| DatError::Tracker { frame: index, source })?;
                match update.bbox() {
                    Some(bbox) => {
                        let outcome = FrameOutcome {
                            frame_index: index,
                            bbox: Some(bbox),
                            source: Source::Tracker,
                            detector_called: false,
                            tracker_updated: true,
                            state_after: StateTag::Tracking,
                        };
                        Ok((DatState::Tracking { tracker, frames_since_init: frames_since_init + 1 }, outcome))
                    }
                    None => {
                        drop(tracker);
                        self.acquire(index, 0, 0, None, false, true)
                    }
                }
            }
            DatState::Disabled { frames_idle } => {
                let frames_idle = frames_idle + 1;
                if frames_idle % self.params.check_iterations != 0 {
                    return Ok((DatState::Disabled { frames_idle }, FrameOutcome::idle(index, StateTag::Disabled)));
                }
                let (next, bbox, source) = match self.detect(index)? {
                    Some(d) if self.params.consecutive_iou <= 1 => {
                        (self.start_tracker(index, d.bbox)?, Some(d.bbox), Source::Detector)
                    }
                    Some(d) => (
                        DatState::Acquiring {
                            hit_streak: 1,
                            miss_streak: 0,
                            last_detection: Some(d),
                            single_hit: false,
                        },
                        Some(d.bbox),
                        Source::Detector,
                    ),
                    None => (DatState::Disabled { frames_idle }, None, Source::None),
                };
                let outcome = FrameOutcome {
                    frame_index: index,
                    bbox,
                    source,
                    detector_called: true,
                    tracker_updated: false,
                    state_after: next.tag(),
                };
                Ok((next, outcome))
            }
        }
    }
}

/// Which component localizes the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Dat,
    DetectorOnly,
    TrackerOnly,
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dat" => Ok(RunMode::Dat),
            "detector_only" | "detector-only" => Ok(RunMode::DetectorOnly),
            "tracker_only" | "tracker-only" => Ok(RunMode::TrackerOnly),
            other => Err(format!("unknown mode {other:?}; expected dat, detector_only or tracker_only")),
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunMode::Dat => "dat",
            RunMode::DetectorOnly => "detector_only",
            RunMode::TrackerOnly => "tracker_only",
        })
    }
}

/// Runs one category of one sequence and returns the per-frame trace.
///
/// `TrackerOnly` starts the tracker on the first annotated frame of the
/// category (that frame reports the annotation itself) and never restarts it;
/// a failed update reports nothing and the tracker is asked again next frame.
pub fn dat_run(
    sequence: &FrameSequence,
    detector: &mut dyn Detector,
    trackers: &dyn TrackerFactory,
    params: &DatParams,
    mode: RunMode,
) -> Result<Vec<FrameOutcome>, DatError> {
    params.validate()?;
    let mut ctx = StepContext { sequence, detector, trackers, params };
    let n = sequence.len();
    let mut trace = Vec::with_capacity(n);
    match mode {
        RunMode::Dat => {
            let mut state = DatState::initial();
            for i in 0..n {
                let (next, outcome) = ctx.step(state, i)?;
                state = next;
                trace.push(outcome);
            }
        }
        RunMode::DetectorOnly => {
            for i in 0..n {
                let bbox = ctx.detect(i)?.map(|d| d.bbox);
                trace.push(FrameOutcome {
                    frame_index: i,
                    bbox,
                    source: if bbox.is_some() { Source::Detector } else { Source::None },
                    detector_called: true,
                    tracker_updated: false,
                    state_after: StateTag::Acquiring,
                });
            }
        }
        RunMode::TrackerOnly => {
            let gt = sequence.ground_truth(params.category);
            let start = gt.iter().position(Option::is_some).ok_or(DatError::NoGroundTruth(params.category))?;
            trace.extend((0..start).map(|i| FrameOutcome::idle(i, StateTag::Acquiring)));
            let init_box = gt[start].expect("position found a box");
            let DatState::Tracking { mut tracker, .. } = ctx.start_tracker(start, init_box)? else {
                unreachable!("start_tracker returns Tracking")
            };
            let tracked = |i, bbox: Option<BoundingBox>| FrameOutcome {
                frame_index: i,
                bbox,
                source: if bbox.is_some() { Source::Tracker } else { Source::None },
                detector_called: false,
                tracker_updated: true,
                state_after: StateTag::Tracking,
            };
            trace.push(tracked(start, Some(init_box)));
            for i in start + 1..n {
                let frame = ctx.frame(i)?;
                let update = tracker.update(&frame).map_err(|source| DatError::Tracker { frame: i, source })?;
                trace.push(tracked(i, update.bbox()));
            }
        }
    }
    Ok(trace)
}
