//! Annotation manifest: schema, loading, saving and per-record sample access.
//!
//! A manifest is one JSON document. Frame and mask paths are relative to the
//! directory holding the manifest. Frames are RGB PNG, masks single-channel
//! PNG with values `{0, 255}`.

mod stats;
mod synth;
mod validate;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use stats::{stats, DatasetStats};
pub use synth::{generate_synthetic, synthesize, ShadowGeometry, SynthConfig, SynthRecord, SynthSummary, SynthVideo};
pub use validate::{validate, ValidationReport, Violation, ViolationKind, MAX_WORDS, MIN_WORDS};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, Frame};
use crate::imageio;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShadowType {
    Hard,
    Soft,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motion {
    Stable,
    Moving,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scene {
    Indoor,
    Outdoor,
    Day,
    Night,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attributes {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shadow_type: Option<ShadowType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion: Option<Motion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<Scene>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRef {
    pub frame_path: String,
    pub mask_path: String,
}

/// One referring expression tied to one shadow across a video.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub record_id: String,
    pub video_id: String,
    pub expression: String,
    pub frames: Vec<FrameRef>,
    #[serde(default)]
    pub attributes: Attributes,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Test,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    version: u32,
    records: Vec<AnnotationRecord>,
    #[serde(default)]
    split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    /// Directory relative paths resolve against.
    pub root: PathBuf,
    pub records: Vec<AnnotationRecord>,
    pub split: Split,
}

/// Frames and decoded masks of one record.
#[derive(Clone, Debug)]
pub struct Sample {
    pub record: AnnotationRecord,
    pub frames: Vec<Frame>,
    pub masks: Vec<BinaryMask>,
}

fn load_err(record: &str, message: impl Into<String>) -> Error {
    Error::Load { record: record.to_string(), message: message.into() }
}

/// Parses and structurally checks a manifest without touching the disk.
pub fn parse_manifest(text: &str, root: &Path) -> Result<DatasetManifest> {
    let file: ManifestFile = serde_json::from_str(text)?;
    if file.version != MANIFEST_VERSION {
        return Err(load_err("<manifest>", format!("unsupported version {}", file.version)));
    }
    let mut ids = BTreeSet::new();
    for r in &file.records {
        if !ids.insert(r.record_id.as_str()) {
            return Err(load_err(&r.record_id, "duplicate record_id"));
        }
        if r.expression.trim().is_empty() {
            return Err(load_err(&r.record_id, "empty expression"));
        }
        if r.frames.is_empty() {
            return Err(load_err(&r.record_id, "record has no frames"));
        }
    }
    Ok(DatasetManifest { root: root.to_path_buf(), records: file.records, split: file.split })
}

/// Reads, parses and checks that every referenced file exists.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = parse_manifest(&text, &root)?;
    for r in &manifest.records {
        for (i, f) in r.frames.iter().enumerate() {
            for (kind, rel) in [("frame", &f.frame_path), ("mask", &f.mask_path)] {
                if !manifest.resolve(rel).is_file() {
                    return Err(load_err(
                        &r.record_id,
                        format!("video {} frame {i}: {kind} file {rel} not found", r.video_id),
                    ));
                }
            }
        }
    }
    Ok(manifest)
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DatasetManifest { root: root.into(), records: Vec::new(), split: Split::default() }
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn to_json(&self) -> String {
        let file = ManifestFile { version: MANIFEST_VERSION, records: self.records.clone(), split: self.split.clone() };
        serde_json::to_string_pretty(&file).expect("manifest serialises")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    /// Records whose video belongs to `split`, in manifest order.
    pub fn records_in(&self, split: SplitName) -> Vec<&AnnotationRecord> {
        let videos: BTreeSet<&str> = match split {
            SplitName::Train => &self.split.train,
            SplitName::Test => &self.split.test,
        }
        .iter()
        .map(String::as_str)
        .collect();
        self.records.iter().filter(|r| videos.contains(r.video_id.as_str())).collect()
    }

    pub fn load_sample(&self, record: &AnnotationRecord) -> Result<Sample> {
        let mut frames = Vec::with_capacity(record.frames.len());
        let mut masks = Vec::with_capacity(record.frames.len());
        for (i, f) in record.frames.iter().enumerate() {
            let ctx = |e: Error| load_err(&record.record_id, format!("video {} frame {i}: {e}", record.video_id));
            let frame = imageio::read_frame(&self.resolve(&f.frame_path)).map_err(ctx)?;
            let mask = imageio::read_mask(&self.resolve(&f.mask_path)).map_err(ctx)?;
            if (frame.width(), frame.height()) != (mask.width(), mask.height()) {
                return Err(ctx(Error::Input("frame and mask sizes differ".into())));
            }
            frames.push(frame);
            masks.push(mask);
        }
        Ok(Sample { record: record.clone(), frames, masks })
    }
}
