//! `annotations.csv`: header `frame,category,x,y,w,h`, one box per row.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::geometry::{BoundingBox, Category};

pub const ANNOTATION_HEADER: &str = "frame,category,x,y,w,h";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub frame_index: usize,
    pub category: Category,
    pub bbox: BoundingBox,
}

fn sort_key(r: &AnnotationRecord) -> (usize, Category) {
    (r.frame_index, r.category)
}

pub fn parse_annotations(text: &str) -> Result<Vec<AnnotationRecord>, DataError> {
    let err = |line: usize, message: String| DataError::Parse { line, message };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == ANNOTATION_HEADER => {}
        Some((_, header)) => return Err(err(1, format!("expected header {ANNOTATION_HEADER:?}, found {header:?}"))),
        None => return Err(err(1, "missing header row".into())),
    }

    let mut records = Vec::new();
    for (i, raw) in lines {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(err(line_no, format!("expected 6 fields, found {}", fields.len())));
        }
        let frame_index: usize = fields[0]
            .parse()
            .map_err(|_| err(line_no, format!("frame index {:?} is not a non-negative integer", fields[0])))?;
        let category: Category =
            fields[1].parse().map_err(|_| err(line_no, format!("unknown category {:?}", fields[1])))?;
        let mut nums = [0.0f64; 4];
        for (slot, (name, value)) in nums.iter_mut().zip(["x", "y", "w", "h"].iter().zip(&fields[2..])) {
            *slot = value.parse().map_err(|_| err(line_no, format!("field {name} = {value:?} is not numeric")))?;
        }
        let bbox = BoundingBox::new(nums[0], nums[1], nums[2], nums[3]).map_err(|e| err(line_no, e.to_string()))?;
        records.push(AnnotationRecord { frame_index, category, bbox });
    }

    records.sort_by_key(sort_key);
    check_unique_wearer_hands(&records)?;
    Ok(records)
}

/// At most one L and one R box per frame.
pub fn check_unique_wearer_hands(records: &[AnnotationRecord]) -> Result<(), DataError> {
    let mut seen = HashSet::new();
    for r in records.iter().filter(|r| r.category.is_camera_wearer()) {
        if !seen.insert((r.frame_index, r.category)) {
            return Err(DataError::Validation(format!(
                "frame {} has more than one {} annotation",
                r.frame_index, r.category
            )));
        }
    }
    Ok(())
}

/// Canonical text: header, then rows sorted by `(frame, category)`, LF endings.
pub fn emit_annotations(records: &[AnnotationRecord]) -> String {
    let mut sorted = records.to_vec();
    sorted.sort_by_key(sort_key);
    let mut out = String::from(ANNOTATION_HEADER);
    out.push('\n');
    for r in &sorted {
        let b = &r.bbox;
        out.push_str(&format!("{},{},{},{},{},{}\n", r.frame_index, r.category, b.x(), b.y(), b.w(), b.h()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_a_row() {
        let recs = parse_annotations("frame,category,x,y,w,h\n12,L,100,50,40,40\n").unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].frame_index, 12);
        assert_eq!(recs[0].category, Category::L);
        assert_eq!(recs[0].bbox, BoundingBox::new(100.0, 50.0, 40.0, 40.0).unwrap());
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse_annotations("frame,category,x,y,w,h\n").unwrap().is_empty());
    }

    fn line_of(e: DataError) -> usize {
        match e {
            DataError::Parse { line, .. } => line,
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(line_of(parse_annotations("frame,category,x,y,w,h\n3,X,0,0,1,1\n").unwrap_err()), 2);
        assert_eq!(line_of(parse_annotations("frame,category,x,y,w,h\n1,L,0,0,1,1\n3,L,0,0,-1,1\n").unwrap_err()), 3);
        assert_eq!(line_of(parse_annotations("frame,category,x,y,w,h\n3,L,a,0,1,1\n").unwrap_err()), 2);
        assert_eq!(line_of(parse_annotations("frame,cat\n").unwrap_err()), 1);
    }

    #[test]
    fn duplicate_left_hand_rejected() {
        let text = "frame,category,x,y,w,h\n1,L,0,0,1,1\n1,L,2,2,1,1\n";
        assert!(matches!(parse_annotations(text), Err(DataError::Validation(_))));
        let others = "frame,category,x,y,w,h\n1,O,0,0,1,1\n1,O,2,2,1,1\n";
        assert_eq!(parse_annotations(others).unwrap().len(), 2);
    }

    #[test]
    fn emit_sorts() {
        let a = AnnotationRecord {
            frame_index: 2,
            category: Category::R,
            bbox: BoundingBox::new(0.5, 1.0, 2.0, 3.25).unwrap(),
        };
        let b = AnnotationRecord {
            frame_index: 2,
            category: Category::L,
            bbox: BoundingBox::new(1.0, 1.0, 1.0, 1.0).unwrap(),
        };
        let text = emit_annotations(&[a, b]);
        assert_eq!(text, "frame,category,x,y,w,h\n2,L,1,1,1,1\n2,R,0.5,1,2,3.25\n");
    }

    proptest! {
        #[test]
        fn parse_inverts_emit(rows in proptest::collection::vec(
            (0usize..50, 0usize..4, -100.0..800.0f64, -100.0..500.0f64, 0.01..200.0f64, 0.01..200.0f64), 0..30)) {
            let mut records: Vec<AnnotationRecord> = rows.iter().map(|&(f, c, x, y, w, h)| AnnotationRecord {
                frame_index: f,
                category: Category::ALL[c],
                bbox: BoundingBox::new(x, y, w, h).unwrap(),
            }).collect();
            // keep at most one L/R per frame
            let mut seen = HashSet::new();
            records.retain(|r| !r.category.is_camera_wearer() || seen.insert((r.frame_index, r.category)));
            let text = emit_annotations(&records);
            let parsed = parse_annotations(&text).unwrap();
            prop_assert_eq!(emit_annotations(&parsed), text);
            let mut sorted = records.clone();
            sorted.sort_by_key(sort_key);
            prop_assert_eq!(parsed, sorted);
        }
    }
}
