//! Stubs and an independent reference simulator shared by the integration tests.

#![allow(dead_code)]

use std::sync::{Arc, Mutex};

use dat_kit::dat::{FrameOutcome, Source};
use dat_kit::dataio::{AnnotationRecord, DataError, Frame, FrameSequence, FrameStore};
use dat_kit::detectors::{Detector, DetectorError, DetectorResult};
use dat_kit::trackers::{Tracker, TrackerError, TrackerUpdate};
use dat_kit::{BoundingBox, Category, Detection};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` blank 1x1 frames; annotations may use a larger nominal canvas.
pub struct BlankFrames(pub usize);

impl FrameStore for BlankFrames {
    fn len(&self) -> usize {
        self.0
    }

    fn load(&self, index: usize) -> Result<Frame, DataError> {
        if index < self.0 {
            Ok(Frame::filled(1, 1, index, 0))
        } else {
            Err(DataError::Validation(format!("frame {index} out of range")))
        }
    }
}

pub fn blank_sequence(n: usize, annotations: Vec<AnnotationRecord>, canvas: (usize, usize), id: &str) -> FrameSequence {
    FrameSequence::with_store(Arc::new(BlankFrames(n)), annotations, canvas, id, id).unwrap()
}

pub fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
    BoundingBox::new(x, y, w, h).unwrap()
}

/// Per-frame detector and tracker behaviour, independent of call history.
#[derive(Debug, Clone)]
pub struct Script {
    pub detections: Vec<Option<BoundingBox>>,
    pub tracker_fails: Vec<bool>,
    pub tracker_boxes: Vec<BoundingBox>,
}

impl Script {
    pub fn len(&self) -> usize {
        self.detections.len()
    }

    /// Every frame detected at the same place; the tracker never fails.
    pub fn perfect(n: usize) -> Self {
        let b = bx(10.0, 10.0, 20.0, 20.0);
        Self { detections: vec![Some(b); n], tracker_fails: vec![false; n], tracker_boxes: vec![b; n] }
    }

    /// Random behaviour with per-script rates, including detections that jump
    /// far enough to break a streak.
    pub fn random(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p_det = rng.gen_range(0.0..=1.0);
        let p_jump = rng.gen_range(0.0..0.5);
        let p_fail = rng.gen_range(0.0..0.2);
        let mut anchor = (50.0, 50.0);
        let mut detections = Vec::with_capacity(n);
        let mut tracker_fails = Vec::with_capacity(n);
        let mut tracker_boxes = Vec::with_capacity(n);
        for _ in 0..n {
            if rng.gen_bool(p_jump) {
                anchor = (rng.gen_range(0.0..400.0), rng.gen_range(0.0..400.0));
            }
            let hit = rng.gen_bool(p_det);
            let dx = rng.gen_range(-3.0..3.0);
            detections.push(hit.then(|| bx(anchor.0 + dx, anchor.1, 30.0, 30.0)));
            tracker_fails.push(rng.gen_bool(p_fail));
            tracker_boxes.push(bx(rng.gen_range(0.0..400.0), rng.gen_range(0.0..400.0), 25.0, 25.0));
        }
        Self { detections, tracker_fails, tracker_boxes }
    }
}

/// Replays `Script::detections` and logs which frames were asked for.
pub struct ScriptedDetector {
    pub outputs: Arc<Vec<Option<BoundingBox>>>,
    pub calls: Arc<Mutex<Vec<usize>>>,
}

impl ScriptedDetector {
    pub fn new(outputs: Vec<Option<BoundingBox>>) -> Self {
        Self { outputs: Arc::new(outputs), calls: Arc::default() }
    }
}

impl Detector for ScriptedDetector {
    fn detect(&mut self, _: &FrameSequence, i: usize, c: Category) -> Result<DetectorResult, DetectorError> {
        self.calls.lock().unwrap().push(i);
        let found = self.outputs[i].map(|b| Detection::new(b, c, 0.9).unwrap());
        Ok(DetectorResult::new(found.into_iter().collect(), 1.0))
    }
}

/// Fails on scripted frames, otherwise reports the scripted box of the frame.
pub struct ScriptedTracker {
    fails: Arc<Vec<bool>>,
    boxes: Arc<Vec<BoundingBox>>,
    started: bool,
}

impl Tracker for ScriptedTracker {
    fn init(&mut self, _: &Frame, _: BoundingBox) -> Result<(), TrackerError> {
        if self.started {
            return Err(TrackerError::AlreadyInitialized);
        }
        self.started = true;
        Ok(())
    }

    fn update(&mut self, frame: &Frame) -> Result<TrackerUpdate, TrackerError> {
        let i = frame.index();
        Ok(if self.fails[i] { TrackerUpdate::failure(0.0) } else { TrackerUpdate::success(self.boxes[i], 1.0) })
    }
}

pub fn scripted_trackers(script: &Script) -> impl Fn() -> Box<dyn Tracker> + Sync {
    let fails = Arc::new(script.tracker_fails.clone());
    let boxes = Arc::new(script.tracker_boxes.clone());
    move || Box::new(ScriptedTracker { fails: fails.clone(), boxes: boxes.clone(), started: false }) as Box<dyn Tracker>
}

/// One frame of the reference simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefFrame {
    pub bbox: Option<BoundingBox>,
    pub source: char,
    pub detector_called: bool,
    pub tracker_updated: bool,
}

impl From<&FrameOutcome> for RefFrame {
    fn from(o: &FrameOutcome) -> Self {
        let source = match o.source {
            Source::Detector => 'D',
            Source::Tracker => 'T',
            Source::None => 'N',
        };
        Self { bbox: o.bbox, source, detector_called: o.detector_called, tracker_updated: o.tracker_updated }
    }
}

fn overlap(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.right().min(b.right()) - a.x().max(b.x())).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.y().max(b.y())).max(0.0);
    let inter = iw * ih;
    inter / (a.w() * a.h() + b.w() * b.h() - inter)
}

#[derive(Debug, Clone, Copy)]
pub struct RefParams {
    pub r: usize,
    pub c: usize,
    pub k: usize,
    pub overlap: f64,
    pub reset_requires_streak: bool,
}

/// Flat re-statement of the engine rules over a script.
pub fn reference_run(script: &Script, p: RefParams) -> Vec<RefFrame> {
    const ACQUIRE: u8 = 0;
    const TRACK: u8 = 1;
    const IDLE: u8 = 2;
    let mut mode = ACQUIRE;
    let (mut hits, mut misses, mut age, mut idle) = (0usize, 0usize, 0usize, 0usize);
    let mut prev: Option<BoundingBox> = None;
    let mut lenient = false;
    let mut out = Vec::with_capacity(script.len());
    for i in 0..script.len() {
        let mut frame = RefFrame { bbox: None, source: 'N', detector_called: false, tracker_updated: false };
        let mut ask_detector = false;
        if mode == TRACK && age >= p.r {
            mode = ACQUIRE;
            hits = 0;
            misses = 0;
            prev = None;
            lenient = !p.reset_requires_streak;
        }
        if mode == TRACK {
            frame.tracker_updated = true;
            if script.tracker_fails[i] {
                mode = ACQUIRE;
                hits = 0;
                misses = 0;
                prev = None;
                lenient = false;
                ask_detector = true;
            } else {
                frame.bbox = Some(script.tracker_boxes[i]);
                frame.source = 'T';
                age += 1;
            }
        } else if mode == ACQUIRE {
            ask_detector = true;
        } else {
            idle += 1;
            if idle % p.k == 0 {
                frame.detector_called = true;
                if let Some(d) = script.detections[i] {
                    frame.bbox = Some(d);
                    frame.source = 'D';
                    if p.c <= 1 {
                        mode = TRACK;
                        age = 0;
                    } else {
                        mode = ACQUIRE;
                        hits = 1;
                        misses = 0;
                        prev = Some(d);
                        lenient = false;
                    }
                }
            }
        }
        if ask_detector {
            frame.detector_called = true;
            match script.detections[i] {
                Some(d) => {
                    frame.bbox = Some(d);
                    frame.source = 'D';
                    hits = match prev {
                        Some(q) if overlap(&q, &d) <= p.overlap => 1,
                        _ => hits + 1,
                    };
                    misses = 0;
                    prev = Some(d);
                    if hits >= p.c || lenient {
                        mode = TRACK;
                        age = 0;
                    }
                }
                None => {
                    hits = 0;
                    prev = None;
                    misses += 1;
                    if misses >= p.c {
                        mode = IDLE;
                        idle = 0;
                    }
                }
            }
        }
        out.push(frame);
    }
    out
}
