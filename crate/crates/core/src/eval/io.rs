//! Text formats for traces, prediction files and participant tables.

use crate::dat::{FrameOutcome, Source};
use crate::dataio::DataError;
use crate::geometry::{select_primary, BoundingBox, Category, Detection};

use super::{split::ParticipantRecord, RunCounts};

pub const TRACE_HEADER: &str = "frame,source,x,y,w,h,detector_called,tracker_updated";
pub const PREDICTION_HEADER: &str = "frame,category,x,y,w,h,conf";
pub const PARTICIPANT_HEADER: &str = "id,uems,frames";

/// One parsed trace row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub frame_index: usize,
    pub source: Source,
    pub bbox: Option<BoundingBox>,
    pub detector_called: bool,
    pub tracker_updated: bool,
}

impl From<&FrameOutcome> for TraceRecord {
    fn from(o: &FrameOutcome) -> Self {
        Self {
            frame_index: o.frame_index,
            source: o.source,
            bbox: o.bbox,
            detector_called: o.detector_called,
            tracker_updated: o.tracker_updated,
        }
    }
}

/// Counts as seen by the cost model.
pub fn trace_counts(records: &[TraceRecord]) -> RunCounts {
    let mut c = RunCounts { frames: records.len(), ..RunCounts::default() };
    for r in records {
        c.detector_calls += r.detector_called as usize;
        c.tracker_updates += r.tracker_updated as usize;
        c.idle_frames += (!r.detector_called && !r.tracker_updated) as usize;
    }
    c
}

/// Boxes are written with shortest round-trip formatting; empty box fields
/// mean no output on that frame.
pub fn emit_trace_csv(trace: &[FrameOutcome]) -> String {
    let mut out = String::with_capacity(48 * (trace.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for o in trace {
        let coords = match o.bbox {
            Some(b) => format!("{},{},{},{}", b.x(), b.y(), b.w(), b.h()),
            None => ",,,".to_string(),
        };
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            o.frame_index, o.source, coords, o.detector_called as u8, o.tracker_updated as u8
        ));
    }
    out
}

fn parse_err(line: usize, message: impl Into<String>) -> DataError {
    DataError::Parse { line, message: message.into() }
}

/// Data rows as `(line number, trimmed fields)`, after checking the header.
fn rows<'a>(text: &'a str, header: &str) -> Result<Vec<(usize, Vec<&'a str>)>, DataError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r').trim() == header => {}
        Some((_, h)) => return Err(parse_err(1, format!("expected header {header:?}, found {h:?}"))),
        None => return Err(parse_err(1, "missing header row")),
    }
    let width = header.split(',').count();
    let mut out = Vec::new();
    for (i, raw) in lines {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != width {
            return Err(parse_err(i + 1, format!("expected {width} fields, found {}", fields.len())));
        }
        out.push((i + 1, fields));
    }
    Ok(out)
}

fn number<T: std::str::FromStr>(line: usize, name: &str, value: &str) -> Result<T, DataError> {
    value.parse().map_err(|_| parse_err(line, format!("field {name} = {value:?} is not valid")))
}

fn flag(line: usize, name: &str, value: &str) -> Result<bool, DataError> {
    match value {
        "0" | "false" => Ok(false),
        "1" | "true" => Ok(true),
        other => Err(parse_err(line, format!("field {name} = {other:?} is not 0 or 1"))),
    }
}

fn parse_box(line: usize, fields: &[&str]) -> Result<BoundingBox, DataError> {
    let mut v = [0.0f64; 4];
    for (slot, (name, value)) in v.iter_mut().zip(["x", "y", "w", "h"].iter().zip(fields)) {
        *slot = number(line, name, value)?;
    }
    BoundingBox::new(v[0], v[1], v[2], v[3]).map_err(|e| parse_err(line, e.to_string()))
}

/// Parses a trace. Rows must cover frames `0..n` in order.
pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRecord>, DataError> {
    let mut out = Vec::new();
    for (line, f) in rows(text, TRACE_HEADER)? {
        let frame_index: usize = number(line, "frame", f[0])?;
        if frame_index != out.len() {
            return Err(parse_err(line, format!("expected frame {}, found {frame_index}", out.len())));
        }
        let source: Source = f[1].parse().map_err(|e: String| parse_err(line, e))?;
        let bbox = if f[2..6].iter().all(|v| v.is_empty()) { None } else { Some(parse_box(line, &f[2..6])?) };
        if bbox.is_some() != (source != Source::None) {
            return Err(parse_err(line, "a box must be present exactly when the source is not NONE"));
        }
        out.push(TraceRecord {
            frame_index,
            source,
            bbox,
            detector_called: flag(line, "detector_called", f[6])?,
            tracker_updated: flag(line, "tracker_updated", f[7])?,
        });
    }
    Ok(out)
}

/// Parses `frame,category,x,y,w,h,conf` rows into detections keyed by frame.
pub fn parse_prediction_csv(text: &str) -> Result<Vec<(usize, Detection)>, DataError> {
    let mut out = Vec::new();
    for (line, f) in rows(text, PREDICTION_HEADER)? {
        let frame_index: usize = number(line, "frame", f[0])?;
        let category: Category = f[1].parse().map_err(|_| parse_err(line, format!("unknown category {:?}", f[1])))?;
        let bbox = parse_box(line, &f[2..6])?;
        let conf: f64 = number(line, "conf", f[6])?;
        let det = Detection::new(bbox, category, conf).map_err(|e| parse_err(line, e.to_string()))?;
        out.push((frame_index, det));
    }
    Ok(out)
}

/// Highest-confidence prediction of `category` on each of `n` frames.
pub fn primary_per_frame(predictions: &[(usize, Detection)], n: usize, category: Category) -> Vec<Option<BoundingBox>> {
    let mut per_frame: Vec<Vec<Detection>> = vec![Vec::new(); n];
    for (i, d) in predictions {
        if *i < n {
            per_frame[*i].push(*d);
        }
    }
    per_frame.iter().map(|ds| select_primary(ds, category).map(|d| d.bbox)).collect()
}

pub fn parse_participants_csv(text: &str) -> Result<Vec<ParticipantRecord>, DataError> {
    rows(text, PARTICIPANT_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            if f[0].is_empty() {
                return Err(parse_err(line, "empty participant id"));
            }
            Ok(ParticipantRecord {
                id: f[0].to_string(),
                uems: number(line, "uems", f[1])?,
                frames: number(line, "frames", f[2])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dat::StateTag;
    use proptest::prelude::*;

    fn outcome(i: usize, b: Option<(f64, f64, f64, f64)>, d: bool, t: bool) -> FrameOutcome {
        let bbox = b.map(|(x, y, w, h)| BoundingBox::new(x, y, w, h).unwrap());
        let source = match (bbox.is_some(), t && !d) {
            (false, _) => Source::None,
            (true, true) => Source::Tracker,
            (true, false) => Source::Detector,
        };
        FrameOutcome {
            frame_index: i,
            bbox,
            source,
            detector_called: d,
            tracker_updated: t,
            state_after: StateTag::Acquiring,
        }
    }

    #[test]
    fn trace_layout() {
        let text =
            emit_trace_csv(&[outcome(0, Some((1.5, 2.0, 3.0, 4.25)), true, false), outcome(1, None, false, false)]);
        assert_eq!(text, format!("{TRACE_HEADER}\n0,DETECTOR,1.5,2,3,4.25,1,0\n1,NONE,,,,,0,0\n"));
    }

    proptest! {
        #[test]
        fn trace_round_trip(rows in prop::collection::vec((prop::option::of((-50.0f64..500.0, -50.0f64..500.0, 0.01f64..200.0, 0.01f64..200.0)), any::<bool>(), any::<bool>()), 0..40)) {
            let trace: Vec<FrameOutcome> = rows.iter().enumerate().map(|(i, (b, d, t))| outcome(i, *b, *d || b.is_some() && !*t, *t)).collect();
            let parsed = parse_trace_csv(&emit_trace_csv(&trace)).unwrap();
            let expected: Vec<TraceRecord> = trace.iter().map(TraceRecord::from).collect();
            prop_assert_eq!(parsed, expected);
        }
    }

    #[test]
    fn trace_rejects_gaps_and_bad_rows() {
        let gap = format!("{TRACE_HEADER}\n0,NONE,,,,,0,0\n2,NONE,,,,,0,0\n");
        assert!(matches!(parse_trace_csv(&gap), Err(DataError::Parse { line: 3, .. })));
        let boxless = format!("{TRACE_HEADER}\n0,TRACKER,,,,,0,1\n");
        assert!(parse_trace_csv(&boxless).is_err());
        assert!(parse_trace_csv("frame,source\n").is_err());
    }

    #[test]
    fn predictions_pick_primary() {
        let text = format!("{PREDICTION_HEADER}\n0,L,0,0,10,10,0.4\n0,L,5,5,10,10,0.9\n2,R,1,1,2,2,0.5\n");
        let preds = parse_prediction_csv(&text).unwrap();
        let l = primary_per_frame(&preds, 3, Category::L);
        assert_eq!(l[0].unwrap().x(), 5.0);
        assert_eq!(l[1..], [None, None]);
        assert!(parse_prediction_csv(PREDICTION_HEADER).unwrap().is_empty());
    }

    #[test]
    fn participants() {
        let text = format!("{PARTICIPANT_HEADER}\nA,20,100\nB,31,80\n");
        let p = parse_participants_csv(&text).unwrap();
        assert_eq!(p[1], ParticipantRecord { id: "B".into(), uems: 31, frames: 80 });
        assert!(parse_participants_csv(&format!("{PARTICIPANT_HEADER}\nA,x,1\n")).is_err());
    }
}
