use crate::dataio::Frame;
use crate::geometry::BoundingBox;

use super::flow::{track_points, Pyramid};
use super::{check_init_box, median, MedianFlowParams, Tracker, TrackerError, TrackerUpdate};

/// Original point, tracked point and forward-backward error of a point valid both ways.
type Vote = ((f64, f64), (f64, f64), f64);

struct State {
    prev: Pyramid,
    bbox: BoundingBox,
}

/// Median Flow: a lattice of points is tracked forward and back; the half with
/// the smallest forward-backward error votes on translation (median displacement)
/// and scale (median ratio of pairwise distances).
///
/// Quality is `1 / (1 + e)` where `e` is the median forward-backward error of
/// the retained points. After a failed update the box stays where it was and the
/// next update starts from the failed frame.
pub struct MedianFlowTracker {
    params: MedianFlowParams,
    state: Option<State>,
}

impl MedianFlowTracker {
    pub fn new(params: MedianFlowParams) -> Self {
        Self { params, state: None }
    }

    pub fn bbox(&self) -> Option<BoundingBox> {
        self.state.as_ref().map(|s| s.bbox)
    }

    fn lattice(&self, b: &BoundingBox) -> Vec<(f64, f64)> {
        let n = self.params.grid;
        (0..n)
            .flat_map(|j| {
                (0..n).map(move |i| {
                    (b.x() + (i as f64 + 0.5) * b.w() / n as f64, b.y() + (j as f64 + 0.5) * b.h() / n as f64)
                })
            })
            .collect()
    }
}

impl Tracker for MedianFlowTracker {
    fn init(&mut self, frame: &Frame, bbox: BoundingBox) -> Result<(), TrackerError> {
        if self.state.is_some() {
            return Err(TrackerError::AlreadyInitialized);
        }
        self.params.validate()?;
        check_init_box(frame, &bbox)?;
        self.state = Some(State { prev: Pyramid::build(frame, self.params.pyramid_levels), bbox });
        Ok(())
    }

    fn update(&mut self, frame: &Frame) -> Result<TrackerUpdate, TrackerError> {
        let bbox = self.state.as_ref().ok_or(TrackerError::NotInitialized)?.bbox;
        let cur = Pyramid::build(frame, self.params.pyramid_levels);
        let points = self.lattice(&bbox);
        let state = self.state.as_mut().expect("checked above");

        let forward = track_points(&state.prev, &cur, &points, &self.params);
        let tracked: Vec<usize> = (0..points.len()).filter(|&i| forward[i].ok()).collect();
        let fwd_points: Vec<(f64, f64)> = tracked.iter().map(|&i| forward[i].point).collect();
        let backward = track_points(&cur, &state.prev, &fwd_points, &self.params);

        let mut votes: Vec<Vote> = tracked
            .iter()
            .zip(&backward)
            .filter(|(_, b)| b.ok())
            .map(|(&i, b)| {
                let p = points[i];
                (p, forward[i].point, (b.point.0 - p.0).hypot(b.point.1 - p.1))
            })
            .collect();

        state.prev = cur;

        let min_points = (self.params.grid * self.params.grid) as f64 / 4.0;
        if votes.is_empty() {
            return Ok(TrackerUpdate::failure(0.0));
        }
        votes.sort_by(|a, b| a.2.total_cmp(&b.2));
        votes.truncate(votes.len().div_ceil(2));
        let mut fb: Vec<f64> = votes.iter().map(|v| v.2).collect();
        let median_fb = median(&mut fb);
        let quality = 1.0 / (1.0 + median_fb);
        if (votes.len() as f64) < min_points || median_fb > self.params.fb_fail_threshold {
            return Ok(TrackerUpdate::failure(quality));
        }

        let mut dx: Vec<f64> = votes.iter().map(|v| v.1 .0 - v.0 .0).collect();
        let mut dy: Vec<f64> = votes.iter().map(|v| v.1 .1 - v.0 .1).collect();
        let (dx, dy) = (median(&mut dx), median(&mut dy));

        let mut ratios = Vec::with_capacity(votes.len() * votes.len() / 2);
        for (i, a) in votes.iter().enumerate() {
            for b in &votes[i + 1..] {
                let before = (a.0 .0 - b.0 .0).hypot(a.0 .1 - b.0 .1);
                let after = (a.1 .0 - b.1 .0).hypot(a.1 .1 - b.1 .1);
                if before > 1e-9 {
                    ratios.push(after / before);
                }
            }
        }
        let scale = if ratios.is_empty() { 1.0 } else { median(&mut ratios) };

        let (cx, cy) = bbox.center();
        let Ok(next) = BoundingBox::from_center(cx + dx, cy + dy, bbox.w() * scale, bbox.h() * scale) else {
            return Ok(TrackerUpdate::failure(quality));
        };
        if check_init_box(frame, &next).is_err() {
            return Ok(TrackerUpdate::failure(quality));
        }
        state.bbox = next;
        Ok(TrackerUpdate::success(next, quality))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Category;
    use crate::synth::{generate_sequence, Background, SynthSpec, Waypoint};

    fn spec(n: usize, from: (f64, f64), to: (f64, f64)) -> SynthSpec {
        SynthSpec {
            canvas: (200, 160),
            n_frames: n,
            waypoints: vec![
                Waypoint { frame_index: 0, center_x: from.0, center_y: from.1, w: 40.0, h: 40.0 },
                Waypoint { frame_index: n - 1, center_x: to.0, center_y: to.1, w: 40.0, h: 40.0 },
            ],
            jitter_sigma: 0.0,
            texture_seed: 5,
            occlusions: vec![],
            absences: vec![],
            background: Background::Flat,
            category: Category::L,
            participant_id: String::new(),
            sequence_id: String::new(),
        }
    }

    #[test]
    fn identical_frames_keep_the_box() {
        let seq = generate_sequence(&spec(2, (80.0, 80.0), (80.0, 80.0)), 0).unwrap();
        let f = seq.frame(0).unwrap();
        let gt = seq.ground_truth(Category::L)[0].unwrap();
        let mut t = MedianFlowTracker::new(MedianFlowParams::default());
        t.init(&f, gt).unwrap();
        let u = t.update(&f).unwrap();
        assert!(!u.failed());
        let b = u.bbox().unwrap();
        assert!((b.x() - gt.x()).abs() < 1e-6 && (b.w() - gt.w()).abs() < 1e-6);
        assert!(u.quality() > 0.999);
    }

    #[test]
    fn follows_translation() {
        let seq = generate_sequence(&spec(2, (80.0, 70.0), (85.0, 73.0)), 0).unwrap();
        let gt = seq.ground_truth(Category::L);
        let mut t = MedianFlowTracker::new(MedianFlowParams::default());
        t.init(&seq.frame(0).unwrap(), gt[0].unwrap()).unwrap();
        let b = t.update(&seq.frame(1).unwrap()).unwrap().bbox().unwrap();
        let (cx, cy) = b.center();
        assert!((cx - 85.0).abs() <= 0.5 && (cy - 73.0).abs() <= 0.5, "centre ({cx}, {cy})");
    }

    #[test]
    fn time_reversed_pair_negates_motion() {
        let seq = generate_sequence(&spec(2, (80.0, 70.0), (84.0, 67.0)), 0).unwrap();
        let gt = seq.ground_truth(Category::L);
        let (f0, f1) = (seq.frame(0).unwrap(), seq.frame(1).unwrap());
        let mut fwd = MedianFlowTracker::new(MedianFlowParams::default());
        fwd.init(&f0, gt[0].unwrap()).unwrap();
        let a = fwd.update(&f1).unwrap().bbox().unwrap();
        let mut bwd = MedianFlowTracker::new(MedianFlowParams::default());
        bwd.init(&f1, gt[1].unwrap()).unwrap();
        let b = bwd.update(&f0).unwrap().bbox().unwrap();
        let da = (a.center().0 - gt[0].unwrap().center().0, a.center().1 - gt[0].unwrap().center().1);
        let db = (b.center().0 - gt[1].unwrap().center().0, b.center().1 - gt[1].unwrap().center().1);
        assert!((da.0 + db.0).abs() < 0.1 && (da.1 + db.1).abs() < 0.1, "{da:?} vs {db:?}");
    }

    #[test]
    fn full_occlusion_fails() {
        let mut s = spec(6, (80.0, 80.0), (85.0, 80.0));
        s.occlusions = vec![(3, 6)];
        let seq = generate_sequence(&s, 0).unwrap();
        let gt = seq.ground_truth(Category::L);
        let mut t = MedianFlowTracker::new(MedianFlowParams::default());
        t.init(&seq.frame(0).unwrap(), gt[0].unwrap()).unwrap();
        for f in 1..3 {
            assert!(!t.update(&seq.frame(f).unwrap()).unwrap().failed(), "frame {f}");
        }
        let before = t.bbox();
        let u = t.update(&seq.frame(3).unwrap()).unwrap();
        assert!(u.failed());
        assert!(u.bbox().is_none());
        assert_eq!(t.bbox(), before);
    }
}
