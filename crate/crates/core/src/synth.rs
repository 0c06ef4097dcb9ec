//! Deterministic synthetic sequences: one textured target moving along a
//! piecewise-linear path, with scripted occlusions and absences.
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`), seeded with
//! `seed_from_u64` and split into independent streams with `set_stream`:
//!
//! | stream | seed           | use                          |
//! |--------|----------------|------------------------------|
//! | 0      | `texture_seed` | target texture               |
//! | 1      | `seed`         | per-frame centre jitter      |
//! | 2      | `seed`         | noise backdrop               |
//!
//! Frames are rendered on demand, so a sequence costs memory for its geometry
//! only. During an occlusion interval the union of the target's footprints over
//! the interval, padded on each side by an eighth of its larger side, is painted
//! with a flat occluder; ground truth is still emitted for those frames.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{AnnotationRecord, DataError, Frame, FrameSequence, FrameStore};
use crate::geometry::{BoundingBox, Category};

const TEXTURE_CELLS: usize = 16;
const FLAT_LEVEL: u8 = 90;
pub const OCCLUDER_LEVEL: u8 = 200;
const STREAM_TEXTURE: u64 = 0;
const STREAM_JITTER: u64 = 1;
const STREAM_BACKDROP: u64 = 2;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
    #[error("target box leaves the canvas at frame {frame}")]
    LeavesCanvas { frame: usize },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub frame_index: usize,
    pub center_x: f64,
    pub center_y: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Background {
    #[default]
    Flat,
    /// Fixed Gaussian noise backdrop around the flat level.
    Noise { sigma: f64 },
    /// Horizontal intensity ramp.
    Gradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub canvas: (usize, usize),
    pub n_frames: usize,
    pub waypoints: Vec<Waypoint>,
    #[serde(default)]
    pub jitter_sigma: f64,
    #[serde(default)]
    pub texture_seed: u64,
    /// Half-open frame intervals `[start, end)`.
    #[serde(default)]
    pub occlusions: Vec<(usize, usize)>,
    #[serde(default)]
    pub absences: Vec<(usize, usize)>,
    #[serde(default)]
    pub background: Background,
    #[serde(default = "default_category")]
    pub category: Category,
    #[serde(default)]
    pub participant_id: String,
    #[serde(default)]
    pub sequence_id: String,
}

fn default_category() -> Category {
    Category::L
}

fn in_intervals(intervals: &[(usize, usize)], frame: usize) -> bool {
    intervals.iter().any(|&(s, e)| frame >= s && frame < e)
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.canvas.0 == 0 || self.canvas.1 == 0 {
            return bad("canvas dimensions must be >= 1".into());
        }
        if self.n_frames == 0 {
            return bad("n_frames must be >= 1".into());
        }
        let Some(first) = self.waypoints.first() else {
            return bad("at least one waypoint is required".into());
        };
        let last = self.waypoints.last().expect("non-empty");
        if first.frame_index != 0 || last.frame_index != self.n_frames - 1 {
            return bad(format!(
                "waypoints must start at frame 0 and end at frame {}, got {}..{}",
                self.n_frames - 1,
                first.frame_index,
                last.frame_index
            ));
        }
        for pair in self.waypoints.windows(2) {
            if pair[1].frame_index <= pair[0].frame_index {
                return bad("waypoint frame indices must be strictly increasing".into());
            }
        }
        for wp in &self.waypoints {
            let finite = [wp.center_x, wp.center_y, wp.w, wp.h].iter().all(|v| v.is_finite());
            if !finite || wp.w <= 0.0 || wp.h <= 0.0 {
                return bad(format!("waypoint at frame {} has invalid geometry", wp.frame_index));
            }
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return bad("jitter_sigma must be finite and >= 0".into());
        }
        if let Background::Noise { sigma } = self.background {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return bad("background noise sigma must be finite and >= 0".into());
            }
        }
        for &(s, e) in self.occlusions.iter().chain(&self.absences) {
            if s >= e || e > self.n_frames {
                return bad(format!("interval [{s}, {e}) is empty or outside [0, {})", self.n_frames));
            }
        }
        for &(os, oe) in &self.occlusions {
            for &(as_, ae) in &self.absences {
                if os < ae && as_ < oe {
                    return bad(format!("occlusion [{os}, {oe}) overlaps absence [{as_}, {ae})"));
                }
            }
        }
        Ok(())
    }

    /// Interpolated target box (no jitter) at `frame`.
    pub fn interpolated(&self, frame: usize) -> (f64, f64, f64, f64) {
        let wps = &self.waypoints;
        if wps.len() == 1 {
            let w = wps[0];
            return (w.center_x, w.center_y, w.w, w.h);
        }
        let seg = wps
            .windows(2)
            .find(|p| frame >= p[0].frame_index && frame <= p[1].frame_index)
            .unwrap_or(&wps[wps.len() - 2..]);
        let (a, b) = (seg[0], seg[1]);
        let t = (frame as f64 - a.frame_index as f64) / (b.frame_index as f64 - a.frame_index as f64);
        let lerp = |u: f64, v: f64| u + (v - u) * t;
        (lerp(a.center_x, b.center_x), lerp(a.center_y, b.center_y), lerp(a.w, b.w), lerp(a.h, b.h))
    }
}

/// Integer raster rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl PixelRect {
    fn of_box(b: &BoundingBox) -> Self {
        let x0 = b.x().round() as i64;
        let y0 = b.y().round() as i64;
        let w = (b.w().round() as i64).max(1);
        let h = (b.h().round() as i64).max(1);
        Self { x0, y0, x1: x0 + w, y1: y0 + h }
    }

    fn union(&self, o: &Self) -> Self {
        Self { x0: self.x0.min(o.x0), y0: self.y0.min(o.y0), x1: self.x1.max(o.x1), y1: self.y1.max(o.y1) }
    }

    fn clamp_to(&self, w: usize, h: usize) -> Self {
        Self {
            x0: self.x0.clamp(0, w as i64),
            y0: self.y0.clamp(0, h as i64),
            x1: self.x1.clamp(0, w as i64),
            y1: self.y1.clamp(0, h as i64),
        }
    }
}

struct SynthFrames {
    canvas: (usize, usize),
    backdrop: Vec<u8>,
    texture: Vec<f64>,
    /// Target box per frame, `None` during absences.
    targets: Vec<Option<BoundingBox>>,
    /// Occluder rectangle per frame.
    occluders: Vec<Option<PixelRect>>,
}

impl SynthFrames {
    fn texture_at(&self, u: f64, v: f64) -> f64 {
        let n = TEXTURE_CELLS;
        let fu = u.clamp(0.0, (n - 1) as f64);
        let fv = v.clamp(0.0, (n - 1) as f64);
        let (iu, iv) = (fu.floor() as usize, fv.floor() as usize);
        let (iu1, iv1) = ((iu + 1).min(n - 1), (iv + 1).min(n - 1));
        let (au, av) = (fu - iu as f64, fv - iv as f64);
        let t = |x: usize, y: usize| self.texture[y * n + x];
        let top = t(iu, iv) * (1.0 - au) + t(iu1, iv) * au;
        let bottom = t(iu, iv1) * (1.0 - au) + t(iu1, iv1) * au;
        top * (1.0 - av) + bottom * av
    }

    fn render(&self, index: usize) -> Frame {
        let (w, h) = self.canvas;
        let mut frame = Frame::new(w, h, index, self.backdrop.clone()).expect("canvas-sized backdrop");
        if let Some(target) = &self.targets[index] {
            let r = PixelRect::of_box(target).clamp_to(w, h);
            let full = PixelRect::of_box(target);
            let (rw, rh) = ((full.x1 - full.x0) as f64, (full.y1 - full.y0) as f64);
            let cells = TEXTURE_CELLS as f64;
            for py in r.y0..r.y1 {
                let v = ((py - full.y0) as f64 + 0.5) / rh * cells - 0.5;
                for px in r.x0..r.x1 {
                    let u = ((px - full.x0) as f64 + 0.5) / rw * cells - 0.5;
                    let value = self.texture_at(u, v).round().clamp(0.0, 255.0) as u8;
                    frame.set(px as usize, py as usize, value);
                }
            }
        }
        if let Some(occ) = &self.occluders[index] {
            for py in occ.y0..occ.y1 {
                for px in occ.x0..occ.x1 {
                    frame.set(px as usize, py as usize, OCCLUDER_LEVEL);
                }
            }
        }
        frame
    }
}

impl FrameStore for SynthFrames {
    fn len(&self) -> usize {
        self.targets.len()
    }

    fn load(&self, index: usize) -> Result<Frame, DataError> {
        if index >= self.len() {
            return Err(DataError::Validation(format!("frame {index} out of range")));
        }
        Ok(self.render(index))
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn make_backdrop(spec: &SynthSpec, seed: u64) -> Vec<u8> {
    let (w, h) = spec.canvas;
    match spec.background {
        Background::Flat => vec![FLAT_LEVEL; w * h],
        Background::Gradient => {
            let row: Vec<u8> = (0..w)
                .map(|x| {
                    let t = if w > 1 { x as f64 / (w - 1) as f64 } else { 0.0 };
                    (40.0 + 120.0 * t).round() as u8
                })
                .collect();
            row.iter().copied().cycle().take(w * h).collect()
        }
        Background::Noise { sigma } => {
            let mut rng = stream(seed, STREAM_BACKDROP);
            let normal = Normal::new(0.0, sigma).expect("validated sigma");
            (0..w * h).map(|_| (FLAT_LEVEL as f64 + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8).collect()
        }
    }
}

/// Renders a sequence. Identical `(spec, seed)` pairs give identical frames and
/// annotations.
pub fn generate_sequence(spec: &SynthSpec, seed: u64) -> Result<FrameSequence, SynthError> {
    spec.validate()?;
    let (cw, ch) = (spec.canvas.0 as f64, spec.canvas.1 as f64);

    let mut texture_rng = stream(spec.texture_seed, STREAM_TEXTURE);
    let texture: Vec<f64> =
        (0..TEXTURE_CELLS * TEXTURE_CELLS).map(|_| texture_rng.gen_range(20..=235) as f64).collect();

    let mut jitter_rng = stream(seed, STREAM_JITTER);
    let jitter = Normal::new(0.0, spec.jitter_sigma).expect("validated sigma");

    let mut targets = Vec::with_capacity(spec.n_frames);
    for frame in 0..spec.n_frames {
        let (cx, cy, w, h) = spec.interpolated(frame);
        let nominal = BoundingBox::from_center(cx, cy, w, h).map_err(|_| SynthError::LeavesCanvas { frame })?;
        if !nominal.within(cw, ch) {
            return Err(SynthError::LeavesCanvas { frame });
        }
        // Draw every frame so the jitter stream does not depend on the absences.
        let (dx, dy) = (jitter.sample(&mut jitter_rng), jitter.sample(&mut jitter_rng));
        let jx = (cx + dx).clamp(w / 2.0, cw - w / 2.0);
        let jy = (cy + dy).clamp(h / 2.0, ch - h / 2.0);
        let bbox = BoundingBox::from_center(jx, jy, w, h).map_err(|_| SynthError::LeavesCanvas { frame })?;
        targets.push((!in_intervals(&spec.absences, frame)).then_some(bbox));
    }

    let mut occluders = vec![None; spec.n_frames];
    for &(s, e) in &spec.occlusions {
        let union = (s..e).filter_map(|f| targets[f].as_ref().map(PixelRect::of_box)).reduce(|a, b| a.union(&b));
        if let Some(u) = union {
            let pad = ((u.x1 - u.x0).max(u.y1 - u.y0) as f64 * 0.125).round() as i64;
            let padded = PixelRect { x0: u.x0 - pad, y0: u.y0 - pad, x1: u.x1 + pad, y1: u.y1 + pad }
                .clamp_to(spec.canvas.0, spec.canvas.1);
            for slot in &mut occluders[s..e] {
                *slot = Some(padded);
            }
        }
    }

    let annotations: Vec<AnnotationRecord> = targets
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.map(|bbox| AnnotationRecord { frame_index: i, category: spec.category, bbox }))
        .collect();

    let store = SynthFrames { canvas: spec.canvas, backdrop: make_backdrop(spec, seed), texture, targets, occluders };
    let sequence_id = if spec.sequence_id.is_empty() { format!("synth-{seed}") } else { spec.sequence_id.clone() };
    Ok(FrameSequence::with_store(Arc::new(store), annotations, spec.canvas, spec.participant_id.clone(), sequence_id)?)
}

/// Mean absolute forward-difference gradient over the pixels of `rect`.
pub fn mean_abs_gradient(frame: &Frame, rect: PixelRect) -> f64 {
    let r = rect.clamp_to(frame.width(), frame.height());
    let (mut sum, mut n) = (0.0, 0usize);
    for y in r.y0..r.y1 - 1 {
        for x in r.x0..r.x1 - 1 {
            let (xu, yu) = (x as usize, y as usize);
            let here = frame.get(xu, yu) as f64;
            sum += (frame.get(xu + 1, yu) as f64 - here).abs() + (frame.get(xu, yu + 1) as f64 - here).abs();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Raster footprint the generator uses for a target box.
pub fn footprint(b: &BoundingBox) -> PixelRect {
    PixelRect::of_box(b)
}

/// Occlusion benchmark: `count` sequences of `n_frames` frames on a 720x405 canvas,
/// each with two occlusions placed around one third and two thirds of the way
/// through. The target speeds up while occluded so that it emerges clear of its
/// last visible footprint.
pub fn occlusion_suite(count: usize, n_frames: usize, seed: u64) -> Vec<SynthSpec> {
    assert!(n_frames >= 120, "suite sequences need at least 120 frames");
    let canvas = (720usize, 405usize);
    let mut rng = stream(seed, 7);
    (0..count)
        .map(|i| {
            let size = rng.gen_range(50.0..70.0f64);
            let aspect = rng.gen_range(0.8..1.25f64);
            let (w, h) = (size, size * aspect);
            let margin_x = w / 2.0 + 10.0;
            let margin_y = h / 2.0 + 10.0;
            let occ_len = 12;
            let occ1 = n_frames / 3;
            let occ2 = 2 * n_frames / 3;
            let mut frames = vec![0, occ1, occ1 + occ_len, occ2, occ2 + occ_len, n_frames - 1];
            frames.dedup();
            let mut pos = (
                rng.gen_range(margin_x..canvas.0 as f64 - margin_x),
                rng.gen_range(margin_y..canvas.1 as f64 - margin_y),
            );
            let mut waypoints = Vec::with_capacity(frames.len());
            for (k, &f) in frames.iter().enumerate() {
                if k > 0 {
                    let occluded_leg = frames[k - 1] == occ1 || frames[k - 1] == occ2;
                    // Leave the footprint while hidden; wander slowly otherwise.
                    let reach = if occluded_leg { 1.6 * size } else { 120.0 };
                    let min_reach = if occluded_leg { 1.3 * size } else { 0.0 };
                    loop {
                        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                        let dist = rng.gen_range(min_reach..=reach);
                        let next = (pos.0 + dist * angle.cos(), pos.1 + dist * angle.sin());
                        let inside = next.0 >= margin_x
                            && next.0 <= canvas.0 as f64 - margin_x
                            && next.1 >= margin_y
                            && next.1 <= canvas.1 as f64 - margin_y;
                        if inside {
                            pos = next;
                            break;
                        }
                    }
                }
                waypoints.push(Waypoint { frame_index: f, center_x: pos.0, center_y: pos.1, w, h });
            }
            let background = if i % 2 == 0 { Background::Flat } else { Background::Noise { sigma: 6.0 } };
            SynthSpec {
                canvas,
                n_frames,
                waypoints,
                jitter_sigma: 0.0,
                texture_seed: seed.wrapping_mul(31).wrapping_add(i as u64),
                occlusions: vec![(occ1, occ1 + occ_len), (occ2, occ2 + occ_len)],
                absences: vec![],
                background,
                category: Category::L,
                participant_id: format!("P{:02}", i % 17),
                sequence_id: format!("suite-{seed}-{i:02}"),
            }
        })
        .collect()
}
