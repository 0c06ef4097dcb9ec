use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataio::{AnnotationRecord, FrameSequence};
use crate::geometry::{iou, BoundingBox, Category, Detection};

use super::{Detector, DetectorError, DetectorResult};

/// Noise model of the replay detector. All-zero noise replays ground truth exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplayNoise {
    pub miss_prob: f64,
    pub fp_prob: f64,
    /// Pixel standard deviation of the centre offset. The log of each side is
    /// perturbed with standard deviation `jitter_sigma / side`, which moves
    /// the edges by about `jitter_sigma` pixels as well.
    pub jitter_sigma: f64,
    pub confidence_floor: f64,
    pub seed: u64,
}

impl Default for ReplayNoise {
    fn default() -> Self {
        Self { miss_prob: 0.0, fp_prob: 0.0, jitter_sigma: 0.0, confidence_floor: 0.0, seed: 0 }
    }
}

impl ReplayNoise {
    pub fn validate(&self) -> Result<(), DetectorError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.miss_prob) || !unit(self.fp_prob) || !unit(self.confidence_floor) {
            return Err(DetectorError::InvalidRequest(
                "miss_prob, fp_prob and confidence_floor must lie in [0, 1]".into(),
            ));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(DetectorError::InvalidRequest("jitter_sigma must be finite and >= 0".into()));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn frame_rng(seed: u64, frame_index: usize, category: Category) -> ChaCha8Rng {
    let key = splitmix64(splitmix64(splitmix64(seed) ^ frame_index as u64) ^ category.code());
    ChaCha8Rng::seed_from_u64(key)
}

fn gt_at(annotations: &[AnnotationRecord], frame_index: usize, category: Category) -> Option<BoundingBox> {
    let start = annotations.partition_point(|r| (r.frame_index, r.category) < (frame_index, category));
    annotations.get(start).filter(|r| r.frame_index == frame_index && r.category == category).map(|r| r.bbox)
}

/// Replays the annotation of `category` at `frame_index` through the noise model.
///
/// `annotations` must be sorted by `(frame, category)`, as
/// [`FrameSequence::annotations`] is. Every call draws the same fixed sequence
/// of variates from a generator keyed by `(seed, frame_index, category)`, so
/// the result does not depend on which other frames were queried, and changing
/// one noise probability never reshuffles the draws behind another.
///
/// Confidence of a replayed box is `max(floor, IoU(replayed, truth))`. A
/// spurious box takes a size sampled from this category's annotations (a
/// canvas-proportional default when there are none), a uniform position inside
/// the canvas, and a confidence uniform in `[floor, 1]`. For L and R only the
/// more confident of the two candidates is returned.
pub fn replay_detect(
    annotations: &[AnnotationRecord],
    canvas: (usize, usize),
    frame_index: usize,
    noise: &ReplayNoise,
    category: Category,
) -> DetectorResult {
    let mut rng = frame_rng(noise.seed, frame_index, category);
    let u_miss: f64 = rng.gen();
    let u_fp: f64 = rng.gen();
    let jitter: [f64; 4] = [0; 4].map(|_| rng.sample(StandardNormal));
    let u_size: f64 = rng.gen();
    let (u_x, u_y, u_conf): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());

    let mut detections = Vec::with_capacity(2);
    if let Some(gt) = gt_at(annotations, frame_index, category) {
        if u_miss >= noise.miss_prob {
            let s = noise.jitter_sigma;
            let (cx, cy) = gt.center();
            let replayed = if s == 0.0 {
                gt
            } else {
                BoundingBox::from_center(
                    cx + s * jitter[0],
                    cy + s * jitter[1],
                    gt.w() * (s / gt.w() * jitter[2]).exp(),
                    gt.h() * (s / gt.h() * jitter[3]).exp(),
                )
                .expect("exp keeps sides positive")
            };
            let conf = iou(&replayed, &gt).max(noise.confidence_floor);
            detections.push(Detection::new(replayed, category, conf).expect("confidence in [0, 1]"));
        }
    }
    if u_fp < noise.fp_prob {
        let sizes: Vec<&AnnotationRecord> = annotations.iter().filter(|r| r.category == category).collect();
        let (w, h) = if sizes.is_empty() {
            (canvas.0 as f64 / 8.0, canvas.1 as f64 / 8.0)
        } else {
            let pick = ((u_size * sizes.len() as f64) as usize).min(sizes.len() - 1);
            (sizes[pick].bbox.w(), sizes[pick].bbox.h())
        };
        let (w, h) = (w.min(canvas.0 as f64), h.min(canvas.1 as f64));
        let x = u_x * (canvas.0 as f64 - w);
        let y = u_y * (canvas.1 as f64 - h);
        let conf = noise.confidence_floor + u_conf * (1.0 - noise.confidence_floor);
        let bbox = BoundingBox::new(x, y, w, h).expect("positive size");
        let spurious = Detection::new(bbox, category, conf.min(1.0)).expect("confidence in [0, 1]");
        detections.push(spurious);
    }
    DetectorResult::new(detections, 1.0)
}

/// Detector that replays a sequence's own annotations through [`ReplayNoise`].
#[derive(Debug, Clone)]
pub struct ReplayDetector {
    noise: ReplayNoise,
}

impl ReplayDetector {
    pub fn new(noise: ReplayNoise) -> Result<Self, DetectorError> {
        noise.validate()?;
        Ok(Self { noise })
    }

    pub fn noise(&self) -> &ReplayNoise {
        &self.noise
    }
}

impl Detector for ReplayDetector {
    fn detect(
        &mut self,
        sequence: &FrameSequence,
        frame_index: usize,
        category: Category,
    ) -> Result<DetectorResult, DetectorError> {
        if frame_index >= sequence.len() {
            return Err(DetectorError::InvalidRequest(format!(
                "frame {frame_index} outside a {}-frame sequence",
                sequence.len()
            )));
        }
        Ok(replay_detect(sequence.annotations(), sequence.canvas(), frame_index, &self.noise, category))
    }
}
