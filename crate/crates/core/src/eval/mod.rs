//! Scoring, cost accounting, fold aggregation, participant splitting and
//! parameter sweeps.

mod io;
mod split;
mod stats;
mod sweep;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dat::{FrameOutcome, Source};
use crate::geometry::{classify_match, BoundingBox, Category, Detection, MatchOutcome, MatchThresholds};

pub use io::{
    emit_trace_csv, parse_participants_csv, parse_prediction_csv, parse_trace_csv, primary_per_frame, trace_counts,
    TraceRecord, PARTICIPANT_HEADER, PREDICTION_HEADER, TRACE_HEADER,
};
pub use split::{split_participants, ParticipantRecord, Split, EXHAUSTIVE_LIMIT};
pub use stats::{
    anova_from_samples, anova_oneway, f_survival, ln_gamma, regularized_incomplete_beta, AnovaResult, GroupSummary,
};
pub use sweep::{default_grid, sweep_parameters, write_sweep_csv, SweepCase, SweepGrid, SweepRow, SWEEP_HEADER};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("predictions cover {predictions} frames but ground truth covers {truth}")]
    FrameRange { predictions: usize, truth: usize },
    #[error("rate undefined: the cost model assigns zero total time")]
    UndefinedRate,
    #[error("F is infinite: no variation within groups but group means differ")]
    InfiniteF,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Dat(#[from] crate::dat::DatError),
    #[error("detector setup failed: {0}")]
    Detector(#[from] crate::detectors::DetectorError),
}

pub fn precision(tp: usize, fp: usize) -> f64 {
    if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    }
}

pub fn recall(tp: usize, fn_: usize) -> f64 {
    precision(tp, fn_)
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Match counts and derived rates for one category.
///
/// Predictions in the localization band (IoU in [0.15, 0.5)) count as true
/// positives; the `strict_*` fields instead treat them like background errors
/// (one false positive plus one false negative).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub frames: usize,
    pub gt_frames: usize,
    pub tp_accurate: usize,
    pub tp_localization: usize,
    pub background_errors: usize,
    pub misses: usize,
    pub false_alarms: usize,
    pub correct_rejections: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub localization_error_rate: f64,
    pub strict_precision: f64,
    pub strict_recall: f64,
    pub f1_strict: f64,
}

impl CategoryScore {
    fn from_outcomes(outcomes: impl IntoIterator<Item = MatchOutcome>) -> Self {
        let mut counts = [0usize; 6];
        let mut frames = 0;
        for o in outcomes {
            frames += 1;
            counts[match o {
                MatchOutcome::AccuratePrediction => 0,
                MatchOutcome::LocalizationError => 1,
                MatchOutcome::BackgroundError => 2,
                MatchOutcome::Miss => 3,
                MatchOutcome::FalseAlarm => 4,
                MatchOutcome::CorrectRejection => 5,
            }] += 1;
        }
        let [acc, loc, bg, miss, fa, cr] = counts;
        let (tp, fp, fn_) = (acc + loc, bg + fa, bg + miss);
        let (p, r) = (precision(tp, fp), recall(tp, fn_));
        let (sp, sr) = (precision(acc, fp + loc), recall(acc, fn_ + loc));
        Self {
            frames,
            gt_frames: acc + loc + bg + miss,
            tp_accurate: acc,
            tp_localization: loc,
            background_errors: bg,
            misses: miss,
            false_alarms: fa,
            correct_rejections: cr,
            tp,
            fp,
            fn_,
            precision: p,
            recall: r,
            f1: f1(p, r),
            localization_error_rate: if tp == 0 { 0.0 } else { loc as f64 / tp as f64 },
            strict_precision: sp,
            strict_recall: sr,
            f1_strict: f1(sp, sr),
        }
    }
}

/// Scores per-frame predictions of one category against per-frame ground truth.
pub fn score_predictions(
    predictions: &[Option<BoundingBox>],
    truth: &[Option<BoundingBox>],
    thresholds: &MatchThresholds,
    category: Category,
) -> Result<CategoryScore, EvalError> {
    if predictions.len() != truth.len() {
        return Err(EvalError::FrameRange { predictions: predictions.len(), truth: truth.len() });
    }
    Ok(CategoryScore::from_outcomes(predictions.iter().zip(truth).map(|(p, g)| {
        let det = p.map(|b| Detection::from_tracker(b, category));
        classify_match(det.as_ref(), g.as_ref(), thresholds)
    })))
}

/// Per-frame component usage of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub frames: usize,
    pub detector_calls: usize,
    pub tracker_updates: usize,
    /// Frames on which neither component ran.
    pub idle_frames: usize,
}

impl RunCounts {
    pub fn from_trace(trace: &[FrameOutcome]) -> Self {
        let mut c = Self { frames: trace.len(), ..Self::default() };
        for o in trace {
            c.detector_calls += o.detector_called as usize;
            c.tracker_updates += o.tracker_updated as usize;
            c.idle_frames += (!o.detector_called && !o.tracker_updated) as usize;
        }
        c
    }

    pub fn add(&mut self, other: &RunCounts) {
        self.frames += other.frames;
        self.detector_calls += other.detector_calls;
        self.tracker_updates += other.tracker_updates;
        self.idle_frames += other.idle_frames;
    }

    pub fn detector_fraction(&self) -> f64 {
        if self.frames == 0 {
            0.0
        } else {
            self.detector_calls as f64 / self.frames as f64
        }
    }
}

/// Seconds spent per detector call, tracker update and idle frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    pub c_detect: f64,
    pub c_track: f64,
    pub c_idle: f64,
}

impl Default for CostModel {
    /// A CPU detector at 1.5 FPS and a 155 FPS tracker.
    fn default() -> Self {
        Self { c_detect: 1.0 / 1.5, c_track: 1.0 / 155.0, c_idle: 0.0 }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), EvalError> {
        if [self.c_detect, self.c_track, self.c_idle].iter().all(|c| c.is_finite() && *c >= 0.0) {
            Ok(())
        } else {
            Err(EvalError::InvalidInput(format!("cost coefficients must be finite and >= 0, got {self:?}")))
        }
    }
}

/// Frames per second implied by the cost model.
pub fn modeled_fps(counts: &RunCounts, cost: &CostModel) -> Result<f64, EvalError> {
    let seconds = counts.detector_calls as f64 * cost.c_detect
        + counts.tracker_updates as f64 * cost.c_track
        + counts.idle_frames as f64 * cost.c_idle;
    if !(seconds > 0.0) {
        return Err(EvalError::UndefinedRate);
    }
    Ok(counts.frames as f64 / seconds)
}

/// Result document of one run or scoring pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub categories: BTreeMap<Category, CategoryScore>,
    pub frames: usize,
    pub detector_calls: usize,
    pub tracker_updates: usize,
    pub idle_frames: usize,
    pub detector_fraction: f64,
    /// Absent when no component ran or the cost model prices everything at zero.
    pub modeled_fps: Option<f64>,
    /// Measured throughput; only filled on request since it varies between runs.
    pub wall_fps: Option<f64>,
    pub cost: CostModel,
    pub thresholds: MatchThresholds,
    /// Settings that produced the report.
    pub config: serde_json::Value,
}

impl EvaluationReport {
    pub fn new(
        categories: BTreeMap<Category, CategoryScore>,
        counts: RunCounts,
        cost: CostModel,
        thresholds: MatchThresholds,
        config: serde_json::Value,
    ) -> Self {
        Self {
            categories,
            frames: counts.frames,
            detector_calls: counts.detector_calls,
            tracker_updates: counts.tracker_updates,
            idle_frames: counts.idle_frames,
            detector_fraction: counts.detector_fraction(),
            modeled_fps: modeled_fps(&counts, &cost).ok(),
            wall_fps: None,
            cost,
            thresholds,
            config,
        }
    }
}

/// Scores a trace against the ground truth of its category.
pub fn score_trace(
    trace: &[FrameOutcome],
    truth: &[Option<BoundingBox>],
    thresholds: &MatchThresholds,
    category: Category,
) -> Result<CategoryScore, EvalError> {
    let predictions: Vec<Option<BoundingBox>> =
        trace.iter().map(|o| if o.source == Source::None { None } else { o.bbox }).collect();
    score_predictions(&predictions, truth, thresholds, category)
}

/// One per-sequence, per-category score tagged with its fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSample {
    pub fold: usize,
    pub sequence: String,
    pub category: Category,
    pub value: f64,
}

/// Mean and sample standard deviation over folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub sd: f64,
    /// Fold means in ascending fold order.
    pub per_fold: Vec<f64>,
}

/// Averages samples within each fold, then takes the mean and sample SD of
/// the fold means. One fold yields SD 0.
pub fn aggregate(samples: &[FoldSample]) -> Result<Aggregate, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::InvalidInput("nothing to aggregate".into()));
    }
    let mut folds: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for s in samples {
        let e = folds.entry(s.fold).or_insert((0.0, 0));
        e.0 += s.value;
        e.1 += 1;
    }
    let per_fold: Vec<f64> = folds.values().map(|(sum, n)| sum / *n as f64).collect();
    let k = per_fold.len() as f64;
    let mean = per_fold.iter().sum::<f64>() / k;
    let sd = if per_fold.len() < 2 {
        0.0
    } else {
        (per_fold.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    };
    Ok(Aggregate { mean, sd, per_fold })
}
