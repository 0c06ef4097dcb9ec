use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dat::{dat_run, DatParams, RunMode};
use crate::dataio::FrameSequence;
use crate::detectors::{Detector, DetectorError};
use crate::geometry::{Category, MatchThresholds};
use crate::trackers::TrackerFactory;

use super::{aggregate, modeled_fps, score_trace, CostModel, EvalError, FoldSample, RunCounts};

pub const SWEEP_HEADER: &str = "R,C,K,f1_mean,f1_sd,f1_strict_mean,modeled_fps,detector_fraction";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub reset_iterations: Vec<usize>,
    pub consecutive_iou: Vec<usize>,
    pub check_iterations: Vec<usize>,
}

impl SweepGrid {
    pub fn cells(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for &r in &self.reset_iterations {
            for &c in &self.consecutive_iou {
                for &k in &self.check_iterations {
                    out.push((r, c, k));
                }
            }
        }
        out
    }
}

/// R in {50, 100, 200}, C in {1, 3, 8, 9}, K in {30, 60}.
pub fn default_grid() -> SweepGrid {
    SweepGrid {
        reset_iterations: vec![50, 100, 200],
        consecutive_iou: vec![1, 3, 8, 9],
        check_iterations: vec![30, 60],
    }
}

/// A sequence, the fold it belongs to, and the categories to evaluate on it.
#[derive(Debug, Clone)]
pub struct SweepCase {
    pub sequence: FrameSequence,
    pub fold: usize,
    pub categories: Vec<Category>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub params: String,
    pub reset_iterations: usize,
    pub consecutive_iou: usize,
    pub check_iterations: usize,
    pub f1_mean: f64,
    pub f1_sd: f64,
    pub f1_strict_mean: f64,
    pub modeled_fps: f64,
    pub detector_fraction: f64,
    pub counts: RunCounts,
}

pub type DetectorBuilder<'a> = dyn Fn(&FrameSequence) -> Result<Box<dyn Detector>, DetectorError> + Sync + 'a;

fn evaluate_cell(
    params: DatParams,
    cases: &[SweepCase],
    detectors: &DetectorBuilder<'_>,
    trackers: &dyn TrackerFactory,
    cost: &CostModel,
    thresholds: &MatchThresholds,
) -> Result<SweepRow, EvalError> {
    let mut f1s = Vec::new();
    let mut strict = Vec::new();
    let mut counts = RunCounts::default();
    for case in cases {
        let mut detector = detectors(&case.sequence)?;
        for &category in &case.categories {
            let p = DatParams { category, ..params };
            let trace = dat_run(&case.sequence, detector.as_mut(), trackers, &p, RunMode::Dat)?;
            let score = score_trace(&trace, &case.sequence.ground_truth(category), thresholds, category)?;
            counts.add(&RunCounts::from_trace(&trace));
            let tag = |value| FoldSample {
                fold: case.fold,
                sequence: case.sequence.sequence_id().to_string(),
                category,
                value,
            };
            f1s.push(tag(score.f1));
            strict.push(tag(score.f1_strict));
        }
    }
    let f1 = aggregate(&f1s)?;
    Ok(SweepRow {
        params: params.to_string(),
        reset_iterations: params.reset_iterations,
        consecutive_iou: params.consecutive_iou,
        check_iterations: params.check_iterations,
        f1_mean: f1.mean,
        f1_sd: f1.sd,
        f1_strict_mean: aggregate(&strict)?.mean,
        modeled_fps: modeled_fps(&counts, cost)?,
        detector_fraction: counts.detector_fraction(),
        counts,
    })
}

/// Runs the engine for every grid cell over every case and ranks the cells.
///
/// F1 is averaged per fold over (sequence, category) runs, then across folds.
/// Rate and detector fraction pool all runs of a cell. Rows are sorted by F1
/// and then modeled FPS, both descending, with R, C, K ascending as the final
/// tie-break. Cells run on `jobs` threads; the output does not depend on it.
#[allow(clippy::too_many_arguments)]
pub fn sweep_parameters(
    grid: &SweepGrid,
    cases: &[SweepCase],
    base: &DatParams,
    detectors: &DetectorBuilder<'_>,
    trackers: &dyn TrackerFactory,
    cost: &CostModel,
    thresholds: &MatchThresholds,
    jobs: usize,
) -> Result<Vec<SweepRow>, EvalError> {
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(EvalError::InvalidInput("empty parameter grid".into()));
    }
    if cases.iter().all(|c| c.categories.is_empty()) {
        return Err(EvalError::InvalidInput("no sequences with annotations to sweep over".into()));
    }
    cost.validate()?;
    let params: Vec<DatParams> = cells
        .iter()
        .map(|&(r, c, k)| {
            let p = DatParams { reset_iterations: r, consecutive_iou: c, check_iterations: k, ..*base };
            p.validate().map(|_| p)
        })
        .collect::<Result<_, _>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| EvalError::InvalidInput(format!("cannot start worker pool: {e}")))?;
    let mut rows: Vec<SweepRow> = pool.install(|| {
        params
            .par_iter()
            .map(|p| evaluate_cell(*p, cases, detectors, trackers, cost, thresholds))
            .collect::<Result<_, _>>()
    })?;
    rows.sort_by(|a, b| {
        b.f1_mean
            .total_cmp(&a.f1_mean)
            .then(b.modeled_fps.total_cmp(&a.modeled_fps))
            .then(a.reset_iterations.cmp(&b.reset_iterations))
            .then(a.consecutive_iou.cmp(&b.consecutive_iou))
            .then(a.check_iterations.cmp(&b.check_iterations))
    });
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.reset_iterations,
            r.consecutive_iou,
            r.check_iterations,
            r.f1_mean,
            r.f1_sd,
            r.f1_strict_mean,
            r.modeled_fps,
            r.detector_fraction
        ));
    }
    out
}
