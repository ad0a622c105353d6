use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::DatasetManifest;
use crate::text::tokenize;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub records: usize,
    pub videos: usize,
    /// Sum of frame counts over records: one pair per expression and frame.
    pub pairs: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub mean_words: f64,
    pub shadow_type: BTreeMap<String, usize>,
    pub motion: BTreeMap<String, usize>,
    pub scene: BTreeMap<String, usize>,
    pub vocabulary_size: usize,
}

fn tag<T: Serialize>(v: &Option<T>) -> String {
    match v {
        Some(t) => serde_json::to_value(t).ok().and_then(|j| j.as_str().map(String::from)).unwrap_or_default(),
        None => "unlabelled".into(),
    }
}

pub fn stats(m: &DatasetManifest) -> DatasetStats {
    let mut s = DatasetStats { records: m.records.len(), ..DatasetStats::default() };
    let mut videos = BTreeSet::new();
    let mut vocab = BTreeSet::new();
    let mut total_words = 0;
    let mut min_words: Option<usize> = None;
    for r in &m.records {
        videos.insert(r.video_id.as_str());
        s.pairs += r.frames.len();
        let tokens = tokenize(&r.expression);
        let n = tokens.len();
        min_words = Some(min_words.map_or(n, |m| m.min(n)));
        s.max_words = s.max_words.max(n);
        total_words += n;
        vocab.extend(tokens);
        *s.shadow_type.entry(tag(&r.attributes.shadow_type)).or_default() += 1;
        *s.motion.entry(tag(&r.attributes.motion)).or_default() += 1;
        *s.scene.entry(tag(&r.attributes.scene)).or_default() += 1;
    }
    s.min_words = min_words.unwrap_or(0);
    s.videos = videos.len();
    s.vocabulary_size = vocab.len();
    if !m.records.is_empty() {
        s.mean_words = total_words as f64 / m.records.len() as f64;
    }
    s
}
