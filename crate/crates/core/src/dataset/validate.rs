use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{AnnotationRecord, DatasetManifest};
use crate::imageio;
use crate::text::word_count;

/// Expression length range observed on the reference annotations. The upper
/// bound depends on the tokenizer; whitespace splitting is used here.
pub const MIN_WORDS: usize = 6;
pub const MAX_WORDS: usize = 27;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Unreadable,
    DimensionMismatch,
    NonBinaryMask,
    WordCount,
    SplitOverlap,
    Unassigned,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub video_id: String,
    pub record_id: String,
    pub frame: Option<usize>,
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.video_id, self.record_id)?;
        if let Some(i) = self.frame {
            write!(f, " frame {i}")?;
        }
        write!(f, ": {:?}: {}", self.kind, self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub records_checked: usize,
    pub frames_checked: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

fn check_frames(m: &DatasetManifest, r: &AnnotationRecord, out: &mut Vec<Violation>) {
    let mut push = |frame: usize, kind, message: String| {
        out.push(Violation { video_id: r.video_id.clone(), record_id: r.record_id.clone(), frame: Some(frame), kind, message })
    };
    for (i, f) in r.frames.iter().enumerate() {
        let dims = match imageio::dimensions(&m.resolve(&f.frame_path)) {
            Ok(d) => d,
            Err(e) => {
                push(i, ViolationKind::Unreadable, e.to_string());
                continue;
            }
        };
        let mask = match imageio::read_gray(&m.resolve(&f.mask_path)) {
            Ok(g) => g,
            Err(e) => {
                push(i, ViolationKind::Unreadable, e.to_string());
                continue;
            }
        };
        if dims != (mask.width, mask.height) {
            push(
                i,
                ViolationKind::DimensionMismatch,
                format!("frame is {}x{}, mask is {}x{}", dims.0, dims.1, mask.width, mask.height),
            );
        }
        if let Some(v) = mask.data.iter().find(|&&v| v != 0 && v != 255) {
            push(i, ViolationKind::NonBinaryMask, format!("mask value {v} outside {{0, 255}}"));
        }
    }
}

/// Checks every record and the split; never modifies anything. Violations
/// are sorted by video, record and frame.
pub fn validate(m: &DatasetManifest) -> ValidationReport {
    let mut violations = Vec::new();
    let train: BTreeSet<&str> = m.split.train.iter().map(String::as_str).collect();
    let test: BTreeSet<&str> = m.split.test.iter().map(String::as_str).collect();
    for v in train.intersection(&test) {
        violations.push(Violation {
            video_id: v.to_string(),
            record_id: String::new(),
            frame: None,
            kind: ViolationKind::SplitOverlap,
            message: "video listed in both train and test".into(),
        });
    }
    let mut frames_checked = 0;
    for r in &m.records {
        let words = word_count(&r.expression);
        if !(MIN_WORDS..=MAX_WORDS).contains(&words) {
            violations.push(Violation {
                video_id: r.video_id.clone(),
                record_id: r.record_id.clone(),
                frame: None,
                kind: ViolationKind::WordCount,
                message: format!("{words} words, expected {MIN_WORDS}..={MAX_WORDS}"),
            });
        }
        let id = r.video_id.as_str();
        if !train.contains(id) && !test.contains(id) {
            violations.push(Violation {
                video_id: r.video_id.clone(),
                record_id: r.record_id.clone(),
                frame: None,
                kind: ViolationKind::Unassigned,
                message: "video is in neither split".into(),
            });
        }
        check_frames(m, r, &mut violations);
        frames_checked += r.frames.len();
    }
    violations.sort();
    ValidationReport { records_checked: m.records.len(), frames_checked, violations }
}
