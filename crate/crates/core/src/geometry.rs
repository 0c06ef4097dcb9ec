//! Boxes, detections and IOU-banded match classification.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("box dimensions must be positive and finite (got x={x}, y={y}, w={w}, h={h})")]
    InvalidBox { x: f64, y: f64, w: f64, h: f64 },
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
    #[error("match thresholds must satisfy 0 < localization < accurate <= 1 (got {localization}, {accurate})")]
    InvalidThresholds { accurate: f64, localization: f64 },
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
}

/// Axis-aligned box in continuous pixel units, origin top-left.
///
/// Area semantics are inclusive-exclusive: a box covers `[x, x + w) × [y, y + h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct BoundingBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl TryFrom<RawBox> for BoundingBox {
    type Error = GeometryError;

    fn try_from(raw: RawBox) -> Result<Self, Self::Error> {
        BoundingBox::new(raw.x, raw.y, raw.w, raw.h)
    }
}

impl From<BoundingBox> for RawBox {
    fn from(b: BoundingBox) -> Self {
        RawBox { x: b.x, y: b.y, w: b.w, h: b.h }
    }
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        let finite = x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite();
        if !finite || w <= 0.0 || h <= 0.0 {
            return Err(GeometryError::InvalidBox { x, y, w, h });
        }
        Ok(Self { x, y, w, h })
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Same size, moved by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self { x: self.x + dx, y: self.y + dy, ..*self }
    }

    /// True when the box lies inside `[0, width] × [0, height]`.
    pub fn within(&self, width: f64, height: f64) -> bool {
        self.x >= 0.0 && self.y >= 0.0 && self.right() <= width && self.bottom() <= height
    }
}

/// Intersection over union. Zero for disjoint boxes, exactly one for equal boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    // Areas are taken from edge differences so that identical boxes give
    // intersection == union bit for bit.
    let ix = a.right().min(b.right()) - a.x.max(b.x);
    let iy = a.bottom().min(b.bottom()) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    let area_a = (a.right() - a.x) * (a.bottom() - a.y);
    let area_b = (b.right() - b.x) * (b.bottom() - b.y);
    let union = area_a + area_b - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Hand categories: camera wearer's left and right hand, other people's hands, and not-a-hand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    L,
    R,
    O,
    N,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::L, Category::R, Category::O, Category::N];

    pub fn letter(self) -> char {
        match self {
            Category::L => 'L',
            Category::R => 'R',
            Category::O => 'O',
            Category::N => 'N',
        }
    }

    /// At most one instance per frame (the camera wearer has one of each hand).
    pub fn is_camera_wearer(self) -> bool {
        matches!(self, Category::L | Category::R)
    }

    /// Stable small integer used when keying per-category randomness.
    pub fn code(self) -> u64 {
        match self {
            Category::L => 0,
            Category::R => 1,
            Category::O => 2,
            Category::N => 3,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for Category {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "L" => Ok(Category::L),
            "R" => Ok(Category::R),
            "O" => Ok(Category::O),
            "N" => Ok(Category::N),
            other => Err(GeometryError::UnknownCategory(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub category: Category,
    confidence: f64,
}

impl Detection {
    pub fn new(bbox: BoundingBox, category: Category, confidence: f64) -> Result<Self, GeometryError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(GeometryError::InvalidConfidence(confidence));
        }
        Ok(Self { bbox, category, confidence })
    }

    /// Wraps a tracker box. Trackers emit no confidence, so it is pinned at 1.
    pub fn from_tracker(bbox: BoundingBox, category: Category) -> Self {
        Self { bbox, category, confidence: 1.0 }
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MatchOutcome {
    AccuratePrediction,
    LocalizationError,
    BackgroundError,
    Miss,
    CorrectRejection,
    FalseAlarm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchThresholds {
    accurate: f64,
    localization: f64,
}

impl MatchThresholds {
    pub fn new(accurate: f64, localization: f64) -> Result<Self, GeometryError> {
        if !(localization > 0.0 && localization < accurate && accurate <= 1.0) {
            return Err(GeometryError::InvalidThresholds { accurate, localization });
        }
        Ok(Self { accurate, localization })
    }

    pub fn accurate(&self) -> f64 {
        self.accurate
    }

    pub fn localization(&self) -> f64 {
        self.localization
    }
}

impl Default for MatchThresholds {
    fn default() -> Self {
        Self { accurate: 0.5, localization: 0.15 }
    }
}

pub fn classify_match(pred: Option<&Detection>, gt: Option<&BoundingBox>, th: &MatchThresholds) -> MatchOutcome {
    match (pred, gt) {
        (None, None) => MatchOutcome::CorrectRejection,
        (None, Some(_)) => MatchOutcome::Miss,
        (Some(_), None) => MatchOutcome::FalseAlarm,
        (Some(p), Some(g)) => {
            let overlap = iou(&p.bbox, g);
            if overlap >= th.accurate {
                MatchOutcome::AccuratePrediction
            } else if overlap >= th.localization {
                MatchOutcome::LocalizationError
            } else {
                MatchOutcome::BackgroundError
            }
        }
    }
}

/// Highest-confidence detection of `category`. Ties go to the larger box, then to
/// the earlier input.
pub fn select_primary(detections: &[Detection], category: Category) -> Option<Detection> {
    let mut best: Option<&Detection> = None;
    for d in detections.iter().filter(|d| d.category == category) {
        best = match best {
            None => Some(d),
            Some(b) => {
                let better =
                    d.confidence > b.confidence || (d.confidence == b.confidence && d.bbox.area() > b.bbox.area());
                if better {
                    Some(d)
                } else {
                    Some(b)
                }
            }
        };
    }
    best.copied()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn det(cat: Category, conf: f64, b: BoundingBox) -> Detection {
        Detection::new(b, cat, conf).unwrap()
    }

    /// Counts unit cells of the integer lattice covered by each box.
    fn lattice_iou(a: (i64, i64, i64, i64), b: (i64, i64, i64, i64)) -> f64 {
        let inside =
            |r: (i64, i64, i64, i64), px: i64, py: i64| px >= r.0 && px < r.0 + r.2 && py >= r.1 && py < r.1 + r.3;
        let x0 = a.0.min(b.0);
        let y0 = a.1.min(b.1);
        let x1 = (a.0 + a.2).max(b.0 + b.2);
        let y1 = (a.1 + a.3).max(b.1 + b.3);
        let (mut inter, mut union) = (0u64, 0u64);
        for py in y0..y1 {
            for px in x0..x1 {
                let (ia, ib) = (inside(a, px, py), inside(b, px, py));
                if ia && ib {
                    inter += 1;
                }
                if ia || ib {
                    union += 1;
                }
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(20.0, 20.0, 5.0, 5.0)), 0.0);
        let half = iou(&a, &bx(5.0, 0.0, 10.0, 10.0));
        let oracle = lattice_iou((0, 0, 10, 10), (5, 0, 10, 10));
        assert!((oracle - 50.0 / 150.0).abs() < 1e-15);
        assert!((half - oracle).abs() < 1e-12);
    }

    #[test]
    fn touching_boxes_do_not_overlap() {
        assert_eq!(iou(&bx(0.0, 0.0, 10.0, 10.0), &bx(10.0, 0.0, 10.0, 10.0)), 0.0);
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 1.0, -1.0).is_err());
        assert!(BoundingBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(serde_json::from_str::<BoundingBox>(r#"{"x":0,"y":0,"w":-2,"h":1}"#).is_err());
    }

    #[test]
    fn classify_bands() {
        let th = MatchThresholds::default();
        let gt = bx(0.0, 0.0, 10.0, 10.0);
        // Shift along x so that IOU = (10 - s) / (10 + s).
        let pred_with_iou = |target: f64| {
            let s = 10.0 * (1.0 - target) / (1.0 + target);
            det(Category::L, 1.0, bx(s, 0.0, 10.0, 10.0))
        };
        let p06 = pred_with_iou(0.6);
        let p03 = pred_with_iou(0.3);
        let p01 = pred_with_iou(0.1);
        assert_eq!(classify_match(Some(&p06), Some(&gt), &th), MatchOutcome::AccuratePrediction);
        assert_eq!(classify_match(Some(&p03), Some(&gt), &th), MatchOutcome::LocalizationError);
        assert_eq!(classify_match(Some(&p01), Some(&gt), &th), MatchOutcome::BackgroundError);
        assert_eq!(classify_match(None, Some(&gt), &th), MatchOutcome::Miss);
        assert_eq!(classify_match(None, None, &th), MatchOutcome::CorrectRejection);
        assert_eq!(classify_match(Some(&p06), None, &th), MatchOutcome::FalseAlarm);
    }

    #[test]
    fn band_edges_are_inclusive_below() {
        let th = MatchThresholds::default();
        let gt = bx(0.0, 0.0, 10.0, 10.0);
        // IOU exactly 0.5: 10x10 against 10x5 inside it.
        let p = det(Category::L, 1.0, bx(0.0, 0.0, 10.0, 5.0));
        assert_eq!(classify_match(Some(&p), Some(&gt), &th), MatchOutcome::AccuratePrediction);
    }

    #[test]
    fn thresholds_validated() {
        assert!(MatchThresholds::new(0.5, 0.15).is_ok());
        assert!(MatchThresholds::new(0.15, 0.5).is_err());
        assert!(MatchThresholds::new(1.2, 0.15).is_err());
        assert!(MatchThresholds::new(0.5, 0.0).is_err());
    }

    #[test]
    fn select_primary_examples() {
        let b1 = bx(0.0, 0.0, 10.0, 10.0);
        let b2 = bx(5.0, 5.0, 10.0, 10.0);
        let dets = [det(Category::L, 0.9, b1), det(Category::L, 0.7, b2)];
        assert_eq!(select_primary(&dets, Category::L), Some(dets[0]));
        assert_eq!(select_primary(&[], Category::L), None);
        let mixed = [det(Category::L, 0.8, b1), det(Category::R, 0.95, b2)];
        assert_eq!(select_primary(&mixed, Category::L), Some(mixed[0]));
        assert_eq!(select_primary(&mixed, Category::O), None);
    }

    #[test]
    fn select_primary_tie_breaks() {
        let small = det(Category::R, 0.5, bx(0.0, 0.0, 2.0, 2.0));
        let large = det(Category::R, 0.5, bx(0.0, 0.0, 4.0, 4.0));
        let large2 = det(Category::R, 0.5, bx(9.0, 9.0, 4.0, 4.0));
        assert_eq!(select_primary(&[small, large, large2], Category::R), Some(large));
        assert_eq!(select_primary(&[large2, large], Category::R), Some(large2));
    }

    #[test]
    fn category_parse() {
        assert_eq!("R".parse::<Category>().unwrap(), Category::R);
        assert!("X".parse::<Category>().is_err());
        assert_eq!(serde_json::to_string(&Category::O).unwrap(), "\"O\"");
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (-50.0..50.0f64, -50.0..50.0f64, 0.1..40.0f64, 0.1..40.0f64).prop_map(|(x, y, w, h)| bx(x, y, w, h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn iou_matches_lattice(ax in -10i64..10, ay in -10i64..10, aw in 1i64..12, ah in 1i64..12,
                               bx_ in -10i64..10, by in -10i64..10, bw in 1i64..12, bh in 1i64..12) {
            let a = bx(ax as f64, ay as f64, aw as f64, ah as f64);
            let b = bx(bx_ as f64, by as f64, bw as f64, bh as f64);
            let oracle = lattice_iou((ax, ay, aw, ah), (bx_, by, bw, bh));
            prop_assert!((iou(&a, &b) - oracle).abs() <= 1e-9);
        }

        #[test]
        fn classify_is_total(pred in proptest::option::of(arb_box()), gt in proptest::option::of(arb_box())) {
            let th = MatchThresholds::default();
            let p = pred.map(|b| Detection::from_tracker(b, Category::L));
            let outcome = classify_match(p.as_ref(), gt.as_ref(), &th);
            let expected_kind = match (pred.is_some(), gt.is_some()) {
                (false, false) => outcome == MatchOutcome::CorrectRejection,
                (false, true) => outcome == MatchOutcome::Miss,
                (true, false) => outcome == MatchOutcome::FalseAlarm,
                (true, true) => matches!(outcome, MatchOutcome::AccuratePrediction
                    | MatchOutcome::LocalizationError | MatchOutcome::BackgroundError),
            };
            prop_assert!(expected_kind);
        }

        #[test]
        fn select_primary_is_max(confs in proptest::collection::vec((0.0..=1.0f64, any::<bool>()), 0..12)) {
            let b = bx(0.0, 0.0, 1.0, 1.0);
            let dets: Vec<Detection> = confs.iter()
                .map(|&(c, left)| det(if left { Category::L } else { Category::R }, c, b))
                .collect();
            if let Some(best) = select_primary(&dets, Category::L) {
                prop_assert_eq!(best.category, Category::L);
                for d in dets.iter().filter(|d| d.category == Category::L) {
                    prop_assert!(best.confidence() >= d.confidence());
                }
            } else {
                prop_assert!(dets.iter().all(|d| d.category != Category::L));
            }
        }
    }
}
