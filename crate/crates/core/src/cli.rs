//! The `dat-kit` command line.
//!
//! Exit status: 0 success, 1 usage error, 2 data or validation error, 3 external
//! detector failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dat::{dat_run, DatError, DatParams, RunMode};
use crate::dataio::{open_sequence, parse_annotations, write_sequence, AnnotationRecord, DataError, FrameSequence};
use crate::detectors::{Detector, DetectorError, ExternalDetector, ReplayDetector, ReplayNoise};
use crate::eval::{
    default_grid, emit_trace_csv, parse_participants_csv, parse_prediction_csv, parse_trace_csv, primary_per_frame,
    score_predictions, score_trace, split_participants, sweep_parameters, trace_counts, write_sweep_csv, CostModel,
    EvalError, EvaluationReport, RunCounts, SweepCase, SweepGrid, TRACE_HEADER,
};
use crate::geometry::{BoundingBox, Category, MatchThresholds};
use crate::synth::{generate_sequence, occlusion_suite, SynthError, SynthSpec};
use crate::trackers::{KcfParams, MedianFlowParams, TrackerKind};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Detector(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Detector(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Detector(m) => m,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DetectorError> for CliError {
    fn from(e: DetectorError) -> Self {
        match e {
            DetectorError::InvalidRequest(_) => CliError::Data(e.to_string()),
            _ => CliError::Detector(e.to_string()),
        }
    }
}

impl From<DatError> for CliError {
    fn from(e: DatError) -> Self {
        match e {
            DatError::Detector { frame, source } => match CliError::from(source) {
                CliError::Detector(m) => CliError::Detector(format!("frame {frame}: {m}")),
                other => CliError::Data(format!("frame {frame}: {}", other.message())),
            },
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Dat(d) => d.into(),
            EvalError::Detector(d) => d.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "dat-kit", version, about = "Detector-assisted tracking experiments")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one pipeline over a sequence and write a report plus per-frame trace.
    Run(RunArgs),
    /// Render synthetic sequences to disk.
    Synth(SynthArgs),
    /// Evaluate a grid of R/C/K settings.
    Sweep(SweepArgs),
    /// Score a trace or prediction file against ground truth.
    Score(ScoreArgs),
    /// Split participants into UEMS-balanced groups.
    Split(SplitArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TrackerChoice {
    Mf,
    Kcf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DetectorChoice {
    Replay,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ModeChoice {
    Dat,
    DetectorOnly,
    TrackerOnly,
}

/// Settings shared by `run` and `sweep`. Flags override `--config`.
#[derive(Args, Debug, Default)]
struct ExperimentArgs {
    /// JSON file with any subset of the effective configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    tracker: Option<TrackerChoice>,
    #[arg(long, value_enum)]
    detector: Option<DetectorChoice>,
    /// Shell command line of an external detector (implies `--detector external`).
    #[arg(long)]
    detector_cmd: Option<String>,
    /// Seconds to wait for each external detector reply.
    #[arg(long)]
    detector_timeout: Option<f64>,
    /// Engine parameters as R/C/K, e.g. 100/3/60.
    #[arg(long)]
    params: Option<String>,
    /// L or R.
    #[arg(long)]
    category: Option<Category>,
    /// IoU with the previous detection needed to extend a streak.
    #[arg(long)]
    overlap: Option<f64>,
    /// Restart the tracker on the first detection after a scheduled reset.
    #[arg(long)]
    single_hit_reset: bool,
    #[arg(long)]
    miss_prob: Option<f64>,
    #[arg(long)]
    fp_prob: Option<f64>,
    /// Replay jitter in pixels.
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    conf_floor: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    cost: CostArgs,
}

#[derive(Args, Debug, Default)]
struct CostArgs {
    /// Seconds per detector call.
    #[arg(long)]
    c_detect: Option<f64>,
    /// Seconds per tracker update.
    #[arg(long)]
    c_track: Option<f64>,
    /// Seconds per idle frame.
    #[arg(long)]
    c_idle: Option<f64>,
    /// IoU at or above which a prediction is accurate.
    #[arg(long)]
    iou_accurate: Option<f64>,
    /// IoU at or above which a prediction is a localization error rather than background.
    #[arg(long)]
    iou_localization: Option<f64>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    #[arg(long, value_enum)]
    mode: Option<ModeChoice>,
    /// Sequence directory.
    #[arg(long)]
    seq: Option<PathBuf>,
    /// Report JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trace CSV path; defaults to the report path with extension `trace.csv`.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Record measured frames per second in the report (makes it machine-dependent).
    #[arg(long)]
    measure_wall: bool,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").required(true).args(["spec", "suite"])))]
struct SynthArgs {
    /// Sequence specification JSON.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Write the occlusion benchmark with this many sequences instead.
    #[arg(long)]
    suite: Option<usize>,
    /// Frames per benchmark sequence.
    #[arg(long, default_value_t = 600)]
    frames: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Sequence directories.
    #[arg(long = "seq", required = true, num_args = 1..)]
    seqs: Vec<PathBuf>,
    /// Sweep CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON with full rows and the effective configuration.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Participants are dealt round-robin into this many folds.
    #[arg(long, default_value_t = 3)]
    folds: usize,
    #[arg(long, env = "DAT_KIT_JOBS")]
    jobs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    grid_r: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    grid_c: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    grid_k: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("truth").required(true).args(["gt", "seq"])))]
struct ScoreArgs {
    /// Trace CSV or prediction CSV (`frame,category,x,y,w,h,conf`).
    #[arg(long)]
    pred: PathBuf,
    /// Annotation CSV.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Sequence directory supplying annotations and frame count.
    #[arg(long)]
    seq: Option<PathBuf>,
    /// Frame count when it cannot be inferred.
    #[arg(long)]
    frames: Option<usize>,
    /// L, R or both (traces need a single category; default L).
    #[arg(long)]
    category: Option<String>,
    /// Report path; printed to standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    cost: CostArgs,
    /// Accepted for uniformity; scoring draws no random numbers.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SplitArgs {
    /// CSV with header `id,uems,frames`.
    #[arg(long)]
    participants: PathBuf,
    #[arg(long, default_value_t = 3)]
    groups: usize,
    /// Output JSON path; printed to standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accepted for uniformity; the split is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayConfig {
    pub miss_prob: f64,
    pub fp_prob: f64,
    pub jitter_sigma: f64,
    pub confidence_floor: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self { miss_prob: 0.0, fp_prob: 0.0, jitter_sigma: 0.0, confidence_floor: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DetectorConfig {
    Replay(ReplayConfig),
    External { command: String, timeout_secs: f64 },
}

/// Effective configuration of `run` and `sweep`; echoed into their reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: RunMode,
    pub tracker: TrackerKind,
    pub detector: DetectorConfig,
    /// `R/C/K`.
    pub params: String,
    pub category: Category,
    pub overlap_threshold: f64,
    pub reset_requires_streak: bool,
    pub cost: CostModel,
    pub iou_accurate: f64,
    pub iou_localization: f64,
    pub sequence: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = DatParams::default();
        let th = MatchThresholds::default();
        Self {
            mode: RunMode::Dat,
            tracker: TrackerKind::MedianFlow(MedianFlowParams::default()),
            detector: DetectorConfig::Replay(ReplayConfig::default()),
            params: p.to_string(),
            category: p.category,
            overlap_threshold: p.overlap_threshold,
            reset_requires_streak: p.reset_requires_streak,
            cost: CostModel::default(),
            iou_accurate: th.accurate(),
            iou_localization: th.localization(),
            sequence: None,
            output: None,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn dat_params(&self) -> Result<DatParams, CliError> {
        let base: DatParams = self.params.parse().map_err(|e: DatError| CliError::Usage(e.to_string()))?;
        let p = DatParams {
            category: self.category,
            overlap_threshold: self.overlap_threshold,
            reset_requires_streak: self.reset_requires_streak,
            ..base
        };
        p.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(p)
    }

    pub fn thresholds(&self) -> Result<MatchThresholds, CliError> {
        MatchThresholds::new(self.iou_accurate, self.iou_localization).map_err(|e| CliError::Usage(e.to_string()))
    }

    fn validate(&self) -> Result<(), CliError> {
        self.dat_params()?;
        self.thresholds()?;
        self.cost.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        match &self.detector {
            DetectorConfig::Replay(r) => {
                self.replay_noise(r).validate().map_err(|e| CliError::Usage(e.to_string()))?;
            }
            DetectorConfig::External { command, timeout_secs } => {
                if command.trim().is_empty() {
                    return Err(CliError::Usage("external detector needs --detector-cmd".into()));
                }
                if !(timeout_secs.is_finite() && *timeout_secs > 0.0) {
                    return Err(CliError::Usage("detector timeout must be positive".into()));
                }
            }
        }
        let tracker_ok = match self.tracker {
            TrackerKind::MedianFlow(p) => p.validate(),
            TrackerKind::Kcf(p) => p.validate(),
        };
        tracker_ok.map_err(|e| CliError::Usage(e.to_string()))
    }

    fn replay_noise(&self, r: &ReplayConfig) -> ReplayNoise {
        ReplayNoise {
            miss_prob: r.miss_prob,
            fp_prob: r.fp_prob,
            jitter_sigma: r.jitter_sigma,
            confidence_floor: r.confidence_floor,
            seed: self.seed,
        }
    }

    fn build_detector(&self) -> Result<Box<dyn Detector>, DetectorError> {
        Ok(match &self.detector {
            DetectorConfig::Replay(r) => Box::new(ReplayDetector::new(self.replay_noise(r))?),
            DetectorConfig::External { command, timeout_secs } => {
                Box::new(ExternalDetector::spawn_shell(command, Duration::from_secs_f64(*timeout_secs))?)
            }
        })
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_config(exp: &ExperimentArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &exp.config {
        Some(path) => {
            serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    match exp.tracker {
        Some(TrackerChoice::Mf) if !matches!(cfg.tracker, TrackerKind::MedianFlow(_)) => {
            cfg.tracker = TrackerKind::MedianFlow(MedianFlowParams::default())
        }
        Some(TrackerChoice::Kcf) if !matches!(cfg.tracker, TrackerKind::Kcf(_)) => {
            cfg.tracker = TrackerKind::Kcf(KcfParams::default())
        }
        _ => {}
    }
    let wants_external =
        exp.detector == Some(DetectorChoice::External) || (exp.detector.is_none() && exp.detector_cmd.is_some());
    if exp.detector == Some(DetectorChoice::Replay) {
        if exp.detector_cmd.is_some() {
            return Err(CliError::Usage("--detector-cmd conflicts with --detector replay".into()));
        }
        if !matches!(cfg.detector, DetectorConfig::Replay(_)) {
            cfg.detector = DetectorConfig::Replay(ReplayConfig::default());
        }
    }
    if wants_external {
        let (old_cmd, old_timeout) = match &cfg.detector {
            DetectorConfig::External { command, timeout_secs } => (command.clone(), *timeout_secs),
            DetectorConfig::Replay(_) => (String::new(), crate::detectors::DEFAULT_TIMEOUT.as_secs_f64()),
        };
        cfg.detector = DetectorConfig::External {
            command: exp.detector_cmd.clone().unwrap_or(old_cmd),
            timeout_secs: old_timeout,
        };
    }
    match &mut cfg.detector {
        DetectorConfig::Replay(r) => {
            if exp.detector_timeout.is_some() {
                return Err(CliError::Usage("--detector-timeout applies to external detectors only".into()));
            }
            r.miss_prob = exp.miss_prob.unwrap_or(r.miss_prob);
            r.fp_prob = exp.fp_prob.unwrap_or(r.fp_prob);
            r.jitter_sigma = exp.jitter.unwrap_or(r.jitter_sigma);
            r.confidence_floor = exp.conf_floor.unwrap_or(r.confidence_floor);
        }
        DetectorConfig::External { timeout_secs, .. } => {
            if exp.miss_prob.or(exp.fp_prob).or(exp.jitter).or(exp.conf_floor).is_some() {
                return Err(CliError::Usage("replay noise flags do not apply to external detectors".into()));
            }
            *timeout_secs = exp.detector_timeout.unwrap_or(*timeout_secs);
        }
    }
    if let Some(p) = &exp.params {
        cfg.params = p.clone();
    }
    if let Some(c) = exp.category {
        cfg.category = c;
    }
    if let Some(o) = exp.overlap {
        cfg.overlap_threshold = o;
    }
    if exp.single_hit_reset {
        cfg.reset_requires_streak = false;
    }
    if let Some(s) = exp.seed {
        cfg.seed = s;
    }
    apply_cost_args(&exp.cost, &mut cfg.cost, &mut cfg.iou_accurate, &mut cfg.iou_localization);
    Ok(cfg)
}

fn apply_cost_args(args: &CostArgs, cost: &mut CostModel, accurate: &mut f64, localization: &mut f64) {
    cost.c_detect = args.c_detect.unwrap_or(cost.c_detect);
    cost.c_track = args.c_track.unwrap_or(cost.c_track);
    cost.c_idle = args.c_idle.unwrap_or(cost.c_idle);
    *accurate = args.iou_accurate.unwrap_or(*accurate);
    *localization = args.iou_localization.unwrap_or(*localization);
}

/// Writes through a temporary sibling and renames, so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let fail = |e: std::io::Error| CliError::Data(format!("{}: {e}", path.display()));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(fail)?;
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, bytes).map_err(fail)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        fail(e)
    })
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    text.into_bytes()
}

fn run(args: RunArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.exp)?;
    if let Some(m) = args.mode {
        cfg.mode = match m {
            ModeChoice::Dat => RunMode::Dat,
            ModeChoice::DetectorOnly => RunMode::DetectorOnly,
            ModeChoice::TrackerOnly => RunMode::TrackerOnly,
        };
    }
    if let Some(s) = args.seq {
        cfg.sequence = Some(s);
    }
    if let Some(o) = args.out {
        cfg.output = Some(o);
    }
    cfg.validate()?;
    let seq_dir = cfg.sequence.clone().ok_or_else(|| CliError::Usage("run needs --seq".into()))?;
    let out = cfg.output.clone().ok_or_else(|| CliError::Usage("run needs --out".into()))?;
    let trace_path = args.trace.unwrap_or_else(|| out.with_extension("trace.csv"));
    let params = cfg.dat_params()?;
    let thresholds = cfg.thresholds()?;

    let sequence = open_sequence(&seq_dir)?;
    let mut detector = cfg.build_detector()?;
    let started = Instant::now();
    let trace = dat_run(&sequence, detector.as_mut(), &cfg.tracker, &params, cfg.mode)?;
    let elapsed = started.elapsed();
    drop(detector);

    let score = score_trace(&trace, &sequence.ground_truth(params.category), &thresholds, params.category)?;
    let config = serde_json::to_value(&cfg).expect("config serializes");
    let mut report = EvaluationReport::new(
        BTreeMap::from([(params.category, score)]),
        RunCounts::from_trace(&trace),
        cfg.cost,
        thresholds,
        config,
    );
    if args.measure_wall && elapsed.as_secs_f64() > 0.0 {
        report.wall_fps = Some(trace.len() as f64 / elapsed.as_secs_f64());
    }
    write_atomic(&trace_path, emit_trace_csv(&trace).as_bytes())?;
    write_atomic(&out, &json_bytes(&report))?;
    println!(
        "{} {} {}: F1 {:.4}, detector on {:.1}% of {} frames, modeled {} FPS",
        cfg.mode,
        params,
        params.category,
        score.f1,
        100.0 * report.detector_fraction,
        report.frames,
        report.modeled_fps.map_or("n/a".to_string(), |f| format!("{f:.2}"))
    );
    Ok(())
}

fn synth(args: SynthArgs) -> Result<(), CliError> {
    let specs = match (&args.spec, args.suite) {
        (Some(path), None) => {
            let spec: SynthSpec = serde_json::from_str(&read_text(path)?)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            vec![(args.out.clone(), spec)]
        }
        (None, Some(count)) => {
            if args.frames < 120 {
                return Err(CliError::Usage("benchmark sequences need --frames of at least 120".into()));
            }
            occlusion_suite(count, args.frames, args.seed)
                .into_iter()
                .map(|s| (args.out.join(&s.sequence_id), s))
                .collect()
        }
        _ => return Err(CliError::Usage("give exactly one of --spec and --suite".into())),
    };
    for (dir, spec) in &specs {
        let seq = generate_sequence(spec, args.seed)?;
        write_sequence(dir, &seq)?;
    }
    println!("wrote {} sequence(s) under {}", specs.len(), args.out.display());
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.exp)?;
    cfg.output = Some(args.out.clone());
    cfg.validate()?;
    if args.folds == 0 {
        return Err(CliError::Usage("--folds must be at least 1".into()));
    }
    let base = cfg.dat_params()?;
    let thresholds = cfg.thresholds()?;
    let defaults = default_grid();
    let grid = SweepGrid {
        reset_iterations: args.grid_r.clone().unwrap_or(defaults.reset_iterations),
        consecutive_iou: args.grid_c.clone().unwrap_or(defaults.consecutive_iou),
        check_iterations: args.grid_k.clone().unwrap_or(defaults.check_iterations),
    };
    let sequences: Vec<FrameSequence> = args.seqs.iter().map(|d| open_sequence(d)).collect::<Result<_, _>>()?;
    let participant = |s: &FrameSequence| {
        if s.participant_id().is_empty() {
            s.sequence_id().to_string()
        } else {
            s.participant_id().to_string()
        }
    };
    let mut participants: Vec<String> = sequences.iter().map(participant).collect();
    participants.sort();
    participants.dedup();
    let cases: Vec<SweepCase> = sequences
        .into_iter()
        .map(|s| {
            let rank = participants.binary_search(&participant(&s)).expect("listed");
            let categories = [Category::L, Category::R]
                .into_iter()
                .filter(|&c| args.exp.category.is_none_or(|only| only == c))
                .filter(|&c| s.ground_truth(c).iter().any(Option::is_some))
                .collect();
            SweepCase { sequence: s, fold: rank % args.folds, categories }
        })
        .collect();
    let jobs = args.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let build = |_: &FrameSequence| cfg.build_detector();
    let rows = sweep_parameters(&grid, &cases, &base, &build, &cfg.tracker, &cfg.cost, &thresholds, jobs)?;
    write_atomic(&args.out, write_sweep_csv(&rows).as_bytes())?;
    if let Some(path) = &args.report {
        let doc = serde_json::json!({ "config": cfg, "grid": grid, "rows": rows });
        write_atomic(path, &json_bytes(&doc))?;
    }
    if let Some(best) = rows.first() {
        println!(
            "{} cells; best {} with F1 {:.4} at {:.2} modeled FPS",
            rows.len(),
            best.params,
            best.f1_mean,
            best.modeled_fps
        );
    }
    Ok(())
}

fn load_truth(args: &ScoreArgs) -> Result<(Vec<AnnotationRecord>, Option<usize>), CliError> {
    match (&args.gt, &args.seq) {
        (Some(gt), None) => Ok((parse_annotations(&read_text(gt)?)?, None)),
        (None, Some(dir)) => {
            let seq = open_sequence(dir)?;
            Ok((seq.annotations().to_vec(), Some(seq.len())))
        }
        _ => Err(CliError::Usage("give exactly one of --gt and --seq".into())),
    }
}

fn truth_for(records: &[AnnotationRecord], n: usize, category: Category) -> Result<Vec<Option<BoundingBox>>, CliError> {
    let mut out = vec![None; n];
    for r in records.iter().filter(|r| r.category == category) {
        let slot = out.get_mut(r.frame_index).ok_or_else(|| {
            CliError::Data(format!("ground truth reaches frame {} but predictions cover {n} frames", r.frame_index))
        })?;
        *slot = Some(r.bbox);
    }
    Ok(out)
}

fn score(args: ScoreArgs) -> Result<(), CliError> {
    let mut cost = CostModel::default();
    let th = MatchThresholds::default();
    let (mut accurate, mut localization) = (th.accurate(), th.localization());
    apply_cost_args(&args.cost, &mut cost, &mut accurate, &mut localization);
    cost.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let thresholds = MatchThresholds::new(accurate, localization).map_err(|e| CliError::Usage(e.to_string()))?;
    let categories: Vec<Category> = match args.category.as_deref() {
        None => vec![],
        Some("both") => vec![Category::L, Category::R],
        Some(c) => vec![c.parse().map_err(|_| CliError::Usage(format!("unknown category {c:?}")))?],
    };
    let (truth, seq_len) = load_truth(&args)?;
    let text = read_text(&args.pred)?;
    let is_trace = text.lines().next().map(|h| h.trim() == TRACE_HEADER).unwrap_or(false);

    let mut scores = BTreeMap::new();
    let counts = if is_trace {
        let records = parse_trace_csv(&text)?;
        let n = records.len();
        if let Some(expected) = seq_len.or(args.frames) {
            if expected != n {
                return Err(CliError::Data(format!("trace covers {n} frames, expected {expected}")));
            }
        }
        let category = match categories.as_slice() {
            [] => Category::L,
            [c] => *c,
            _ => return Err(CliError::Usage("a trace holds one category; pass --category L or R".into())),
        };
        let predictions: Vec<Option<BoundingBox>> = records.iter().map(|r| r.bbox).collect();
        let gt = truth_for(&truth, n, category)?;
        scores.insert(category, score_predictions(&predictions, &gt, &thresholds, category)?);
        trace_counts(&records)
    } else {
        let predictions = if text.trim().is_empty() { Vec::new() } else { parse_prediction_csv(&text)? };
        let inferred =
            truth.iter().map(|r| r.frame_index + 1).chain(predictions.iter().map(|(i, _)| i + 1)).max().unwrap_or(0);
        let n = seq_len.or(args.frames).unwrap_or(inferred);
        if let Some((i, _)) = predictions.iter().find(|(i, _)| *i >= n) {
            return Err(CliError::Data(format!("prediction on frame {i} outside the {n}-frame range")));
        }
        let categories = if categories.is_empty() { vec![Category::L, Category::R] } else { categories };
        for c in categories {
            let gt = truth_for(&truth, n, c)?;
            scores.insert(c, score_predictions(&primary_per_frame(&predictions, n, c), &gt, &thresholds, c)?);
        }
        RunCounts { frames: n, ..RunCounts::default() }
    };
    let config = serde_json::json!({
        "pred": args.pred,
        "gt": args.gt,
        "seq": args.seq,
        "frames": args.frames,
    });
    let report = EvaluationReport::new(scores, counts, cost, thresholds, config);
    match &args.out {
        Some(path) => write_atomic(path, &json_bytes(&report)),
        None => {
            print!("{}", String::from_utf8(json_bytes(&report)).expect("utf-8"));
            Ok(())
        }
    }
}

fn split(args: SplitArgs) -> Result<(), CliError> {
    let records = parse_participants_csv(&read_text(&args.participants)?)?;
    let result = split_participants(&records, args.groups)?;
    let bytes = json_bytes(&result);
    match &args.out {
        Some(path) => write_atomic(path, &bytes),
        None => {
            print!("{}", String::from_utf8(bytes).expect("utf-8"));
            Ok(())
        }
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the exit status.
pub fn execute<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Synth(a) => synth(a),
        Command::Sweep(a) => sweep(a),
        Command::Score(a) => score(a),
        Command::Split(a) => split(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("dat-kit: {}", e.message());
            e.exit_code()
        }
    }
}
