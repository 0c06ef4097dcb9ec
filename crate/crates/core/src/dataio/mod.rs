//! Frames, annotation files and on-disk sequence directories.
//!
//! A sequence directory holds `frame_%06d.pgm` files numbered from zero without
//! gaps, an `annotations.csv`, and optionally a `sequence.json` manifest with the
//! canvas size and identifiers.

mod annotations;
mod pixmap;

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BoundingBox, Category};

pub use annotations::{
    check_unique_wearer_hands, emit_annotations, parse_annotations, AnnotationRecord, ANNOTATION_HEADER,
};
pub use pixmap::{decode_pixmap, encode_pixmap};

pub const ANNOTATIONS_FILE: &str = "annotations.csv";
pub const MANIFEST_FILE: &str = "sequence.json";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("pixmap header field `{field}`: {message}")]
    Format { field: &'static str, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Validation(String),
    #[error("missing frame indices: {0:?}")]
    MissingFrames(Vec<usize>),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        DataError::Io { path: path.into(), source }
    }
}

/// 8-bit greyscale raster, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    index: usize,
    pixels: Vec<u8>,
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Frame")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("index", &self.index)
            .finish_non_exhaustive()
    }
}

impl Frame {
    pub fn new(width: usize, height: usize, index: usize, pixels: Vec<u8>) -> Result<Self, DataError> {
        if width == 0 || height == 0 {
            return Err(DataError::Validation(format!("frame dimensions must be >= 1, got {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(DataError::Validation(format!(
                "frame {width}x{height} needs {} samples, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self { width, height, index, pixels })
    }

    pub fn filled(width: usize, height: usize, index: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "frame dimensions must be >= 1");
        Self { width, height, index, pixels: vec![value; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn with_index(mut self, index: usize) -> Self {
        self.index = index;
        self
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Sample with coordinates clamped to the border.
    pub fn get_clamped(&self, x: i64, y: i64) -> u8 {
        let cx = x.clamp(0, self.width as i64 - 1) as usize;
        let cy = y.clamp(0, self.height as i64 - 1) as usize;
        self.get(cx, cy)
    }

    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * self.width + x] = value;
    }
}

/// Random-access frame source behind a [`FrameSequence`].
pub trait FrameStore: Send + Sync {
    fn len(&self) -> usize;
    fn load(&self, index: usize) -> Result<Frame, DataError>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct InMemoryFrames(Vec<Frame>);

impl FrameStore for InMemoryFrames {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn load(&self, index: usize) -> Result<Frame, DataError> {
        self.0.get(index).cloned().ok_or_else(|| DataError::Validation(format!("frame {index} out of range")))
    }
}

pub struct DirectoryFrames {
    dir: PathBuf,
    len: usize,
    canvas: (usize, usize),
}

impl FrameStore for DirectoryFrames {
    fn len(&self) -> usize {
        self.len
    }

    fn load(&self, index: usize) -> Result<Frame, DataError> {
        if index >= self.len {
            return Err(DataError::Validation(format!("frame {index} out of range")));
        }
        let path = frame_path(&self.dir, index);
        let bytes = fs::read(&path).map_err(|e| DataError::io(&path, e))?;
        let frame = decode_pixmap(&bytes)?.with_index(index);
        if (frame.width(), frame.height()) != self.canvas {
            return Err(DataError::Validation(format!(
                "{}: size {}x{} differs from canvas {}x{}",
                path.display(),
                frame.width(),
                frame.height(),
                self.canvas.0,
                self.canvas.1
            )));
        }
        Ok(frame)
    }
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.pgm")
}

pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(frame_file_name(index))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Manifest {
    canvas: (usize, usize),
    n_frames: usize,
    participant_id: String,
    sequence_id: String,
}

/// Ordered frames plus ground truth. Frames are numbered `0..len` and loaded on
/// demand from the backing [`FrameStore`].
#[derive(Clone)]
pub struct FrameSequence {
    store: Arc<dyn FrameStore>,
    annotations: Vec<AnnotationRecord>,
    canvas: (usize, usize),
    participant_id: String,
    sequence_id: String,
    source_dir: Option<PathBuf>,
}

impl fmt::Debug for FrameSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FrameSequence")
            .field("len", &self.len())
            .field("canvas", &self.canvas)
            .field("participant_id", &self.participant_id)
            .field("sequence_id", &self.sequence_id)
            .field("annotations", &self.annotations.len())
            .finish()
    }
}

impl FrameSequence {
    pub fn from_frames(
        frames: Vec<Frame>,
        annotations: Vec<AnnotationRecord>,
        canvas: (usize, usize),
        participant_id: impl Into<String>,
        sequence_id: impl Into<String>,
    ) -> Result<Self, DataError> {
        for (i, f) in frames.iter().enumerate() {
            if f.index() != i {
                return Err(DataError::Validation(format!(
                    "frame at position {i} has index {}; indices must run 0..n",
                    f.index()
                )));
            }
            if (f.width(), f.height()) != canvas {
                return Err(DataError::Validation(format!(
                    "frame {i} is {}x{}, canvas is {}x{}",
                    f.width(),
                    f.height(),
                    canvas.0,
                    canvas.1
                )));
            }
        }
        Self::with_store(Arc::new(InMemoryFrames(frames)), annotations, canvas, participant_id, sequence_id)
    }

    /// Builds a sequence over any store; annotations are validated eagerly.
    pub fn with_store(
        store: Arc<dyn FrameStore>,
        mut annotations: Vec<AnnotationRecord>,
        canvas: (usize, usize),
        participant_id: impl Into<String>,
        sequence_id: impl Into<String>,
    ) -> Result<Self, DataError> {
        let len = store.len();
        annotations.sort_by_key(|r| (r.frame_index, r.category));
        let out_of_range: Vec<usize> = annotations.iter().map(|r| r.frame_index).filter(|&i| i >= len).collect();
        if !out_of_range.is_empty() {
            return Err(DataError::Validation(format!(
                "annotations reference frames {out_of_range:?} but the sequence has {len} frames"
            )));
        }
        const EDGE_TOL: f64 = 1e-9;
        for r in &annotations {
            let b = r.bbox;
            let inside = b.x() >= -EDGE_TOL
                && b.y() >= -EDGE_TOL
                && b.right() <= canvas.0 as f64 + EDGE_TOL
                && b.bottom() <= canvas.1 as f64 + EDGE_TOL;
            if !inside {
                return Err(DataError::Validation(format!(
                    "frame {} {} box ({}, {}, {}, {}) leaves the {}x{} canvas",
                    r.frame_index,
                    r.category,
                    b.x(),
                    b.y(),
                    b.w(),
                    b.h(),
                    canvas.0,
                    canvas.1
                )));
            }
        }
        check_unique_wearer_hands(&annotations)?;
        Ok(Self {
            store,
            annotations,
            canvas,
            participant_id: participant_id.into(),
            sequence_id: sequence_id.into(),
            source_dir: None,
        })
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn canvas(&self) -> (usize, usize) {
        self.canvas
    }

    pub fn participant_id(&self) -> &str {
        &self.participant_id
    }

    pub fn sequence_id(&self) -> &str {
        &self.sequence_id
    }

    /// Directory the sequence was opened from, if any.
    pub fn source_dir(&self) -> Option<&Path> {
        self.source_dir.as_deref()
    }

    pub fn annotations(&self) -> &[AnnotationRecord] {
        &self.annotations
    }

    pub fn frame(&self, index: usize) -> Result<Frame, DataError> {
        self.store.load(index)
    }

    /// Streams frames in index order, decoding each one only when requested.
    pub fn frames(&self) -> FrameIter<'_> {
        FrameIter { store: self.store.as_ref(), next: 0 }
    }

    /// Per-frame ground truth for one category (the first box when several exist).
    pub fn ground_truth(&self, category: Category) -> Vec<Option<BoundingBox>> {
        let mut gt = vec![None; self.len()];
        for r in self.annotations.iter().filter(|r| r.category == category) {
            if gt[r.frame_index].is_none() {
                gt[r.frame_index] = Some(r.bbox);
            }
        }
        gt
    }
}

pub struct FrameIter<'a> {
    store: &'a dyn FrameStore,
    next: usize,
}

impl Iterator for FrameIter<'_> {
    type Item = Result<Frame, DataError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.store.len() {
            return None;
        }
        let item = self.store.load(self.next);
        self.next += 1;
        Some(item)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let rest = self.store.len() - self.next;
        (rest, Some(rest))
    }
}

fn parse_frame_file_name(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".pgm")?;
    if digits.len() == 6 && digits.bytes().all(|b| b.is_ascii_digit()) {
        digits.parse().ok()
    } else {
        None
    }
}

/// Opens a sequence directory. The frame listing, manifest and annotations are
/// validated immediately; pixel data is read lazily.
pub fn open_sequence(dir: &Path) -> Result<FrameSequence, DataError> {
    let ann_path = dir.join(ANNOTATIONS_FILE);
    let ann_text = fs::read_to_string(&ann_path).map_err(|e| DataError::io(&ann_path, e))?;
    let annotations = parse_annotations(&ann_text)?;

    let mut indices = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| DataError::io(dir, e))? {
        let entry = entry.map_err(|e| DataError::io(dir, e))?;
        if let Some(i) = entry.file_name().to_str().and_then(parse_frame_file_name) {
            indices.push(i);
        }
    }
    indices.sort_unstable();
    let len = indices.last().map_or(0, |&m| m + 1);
    if indices.len() != len {
        let present: std::collections::HashSet<usize> = indices.iter().copied().collect();
        let missing: Vec<usize> = (0..len).filter(|i| !present.contains(i)).collect();
        return Err(DataError::MissingFrames(missing));
    }

    let manifest_path = dir.join(MANIFEST_FILE);
    let (canvas, participant_id, sequence_id) = if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| DataError::io(&manifest_path, e))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| DataError::Validation(format!("{}: {e}", manifest_path.display())))?;
        if m.n_frames != len {
            return Err(DataError::Validation(format!(
                "manifest declares {} frames, directory holds {len}",
                m.n_frames
            )));
        }
        (m.canvas, m.participant_id, m.sequence_id)
    } else {
        let canvas = if len > 0 {
            let p = frame_path(dir, 0);
            let f = decode_pixmap(&fs::read(&p).map_err(|e| DataError::io(&p, e))?)?;
            (f.width(), f.height())
        } else {
            (720, 405)
        };
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("").to_string();
        (canvas, String::new(), name)
    };

    let store = Arc::new(DirectoryFrames { dir: dir.to_path_buf(), len, canvas });
    let mut seq = FrameSequence::with_store(store, annotations, canvas, participant_id, sequence_id)?;
    seq.source_dir = Some(dir.to_path_buf());
    Ok(seq)
}

/// Materializes a sequence directory readable by [`open_sequence`].
pub fn write_sequence(dir: &Path, seq: &FrameSequence) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    for frame in seq.frames() {
        let frame = frame?;
        let p = frame_path(dir, frame.index());
        fs::write(&p, encode_pixmap(&frame)).map_err(|e| DataError::io(&p, e))?;
    }
    let ann = dir.join(ANNOTATIONS_FILE);
    fs::write(&ann, emit_annotations(seq.annotations())).map_err(|e| DataError::io(&ann, e))?;
    let manifest = Manifest {
        canvas: seq.canvas(),
        n_frames: seq.len(),
        participant_id: seq.participant_id().to_string(),
        sequence_id: seq.sequence_id().to_string(),
    };
    let mp = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&mp, text).map_err(|e| DataError::io(&mp, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn tiny_frames(n: usize) -> Vec<Frame> {
        (0..n).map(|i| Frame::filled(4, 3, i, i as u8)).collect()
    }

    #[test]
    fn empty_annotations_mean_no_ground_truth() {
        let dir = tempfile::tempdir().unwrap();
        let seq = FrameSequence::from_frames(tiny_frames(10), vec![], (4, 3), "p", "s").unwrap();
        write_sequence(dir.path(), &seq).unwrap();
        let opened = open_sequence(dir.path()).unwrap();
        assert_eq!(opened.len(), 10);
        assert!(opened.ground_truth(Category::L).iter().all(Option::is_none));
        let frames: Vec<Frame> = opened.frames().collect::<Result<_, _>>().unwrap();
        assert_eq!(frames, tiny_frames(10));
    }

    #[test]
    fn annotation_beyond_last_frame_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let seq = FrameSequence::from_frames(tiny_frames(10), vec![], (4, 3), "p", "s").unwrap();
        write_sequence(dir.path(), &seq).unwrap();
        fs::write(dir.path().join(ANNOTATIONS_FILE), "frame,category,x,y,w,h\n99,L,0,0,1,1\n").unwrap();
        match open_sequence(dir.path()) {
            Err(DataError::Validation(msg)) => assert!(msg.contains("99")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn gap_in_numbering_lists_missing() {
        let dir = tempfile::tempdir().unwrap();
        let seq = FrameSequence::from_frames(tiny_frames(6), vec![], (4, 3), "p", "s").unwrap();
        write_sequence(dir.path(), &seq).unwrap();
        fs::remove_file(frame_path(dir.path(), 2)).unwrap();
        fs::remove_file(frame_path(dir.path(), 4)).unwrap();
        fs::remove_file(dir.path().join(MANIFEST_FILE)).unwrap();
        match open_sequence(dir.path()) {
            Err(DataError::MissingFrames(m)) => assert_eq!(m, vec![2, 4]),
            other => panic!("expected missing frames, got {other:?}"),
        }
    }

    #[test]
    fn missing_annotations_file() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(open_sequence(dir.path()), Err(DataError::Io { .. })));
    }

    #[test]
    fn box_outside_canvas_rejected() {
        let ann = AnnotationRecord {
            frame_index: 0,
            category: Category::L,
            bbox: BoundingBox::new(3.0, 0.0, 2.0, 1.0).unwrap(),
        };
        assert!(FrameSequence::from_frames(tiny_frames(1), vec![ann], (4, 3), "p", "s").is_err());
    }

    struct CountingStore {
        inner: InMemoryFrames,
        loads: Arc<AtomicUsize>,
    }

    impl FrameStore for CountingStore {
        fn len(&self) -> usize {
            self.inner.len()
        }

        fn load(&self, index: usize) -> Result<Frame, DataError> {
            self.loads.fetch_add(1, Ordering::SeqCst);
            self.inner.load(index)
        }
    }

    #[test]
    fn iteration_decodes_on_demand() {
        let loads = Arc::new(AtomicUsize::new(0));
        let store = CountingStore { inner: InMemoryFrames(tiny_frames(20)), loads: Arc::clone(&loads) };
        let seq = FrameSequence::with_store(Arc::new(store), vec![], (4, 3), "p", "s").unwrap();
        assert_eq!(loads.load(Ordering::SeqCst), 0);
        for (consumed, frame) in seq.frames().enumerate() {
            frame.unwrap();
            assert!(loads.load(Ordering::SeqCst) <= consumed + 1);
        }
        assert_eq!(loads.load(Ordering::SeqCst), 20);
    }
}
