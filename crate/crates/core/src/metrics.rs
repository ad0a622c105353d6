//! Evaluation protocol: per-sample IoU, Precision@K, overall and mean IoU,
//! and mAP over IoU thresholds 0.50:0.05:0.95.
//!
//! A sample is one `(expression, frame)` pair with a single prediction and a
//! single ground-truth mask. Two empty masks agree perfectly (IoU 1).
//! Thresholds are inclusive.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::BinaryMask;

/// `K` values reported for Precision@K.
pub const PRECISION_KS: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

/// `0.50, 0.55, …, 0.95`, each correctly rounded.
pub fn map_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSample {
    pub sample_id: String,
    pub pred_mask: BinaryMask,
    pub gt_mask: BinaryMask,
    pub confidence: f64,
}

/// Counts extracted from one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample_id: String,
    pub intersection: usize,
    pub union: usize,
    pub confidence: f64,
}

impl SampleScore {
    pub fn iou(&self) -> f64 {
        if self.union == 0 {
            1.0
        } else {
            self.intersection as f64 / self.union as f64
        }
    }
}

pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let inter = pred.intersection_count(gt)?;
    let union = pred.union_count(gt)?;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

pub fn score(sample: &EvalSample) -> Result<SampleScore> {
    if !sample.confidence.is_finite() {
        return Err(Error::Input(format!("sample {} has a non-finite confidence", sample.sample_id)));
    }
    Ok(SampleScore {
        sample_id: sample.sample_id.clone(),
        intersection: sample.pred_mask.intersection_count(&sample.gt_mask)?,
        union: sample.pred_mask.union_count(&sample.gt_mask)?,
        confidence: sample.confidence,
    })
}

fn non_empty(scores: &[SampleScore]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Undefined("metrics need at least one sample".into()));
    }
    Ok(())
}

/// Fraction of samples with IoU ≥ `k`.
pub fn precision_at_k(scores: &[SampleScore], k: f64) -> Result<f64> {
    non_empty(scores)?;
    let hits = scores.iter().filter(|s| s.iou() >= k).count();
    Ok(hits as f64 / scores.len() as f64)
}

/// `(Σ intersections / Σ unions, mean per-sample IoU)`.
pub fn overall_and_mean_iou(scores: &[SampleScore]) -> Result<(f64, f64)> {
    non_empty(scores)?;
    let inter: usize = scores.iter().map(|s| s.intersection).sum();
    let union: usize = scores.iter().map(|s| s.union).sum();
    let overall = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    let mean = scores.iter().map(SampleScore::iou).sum::<f64>() / scores.len() as f64;
    Ok((overall, mean))
}

/// Average precision at one IoU threshold with all-point interpolation.
/// Every sample holds exactly one ground truth.
pub fn average_precision(scores: &[SampleScore], threshold: f64) -> Result<f64> {
    non_empty(scores)?;
    let mut order: Vec<&SampleScore> = scores.iter().collect();
    order.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then_with(|| a.sample_id.cmp(&b.sample_id)));
    let n = scores.len() as f64;
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(order.len());
    let mut recall = Vec::with_capacity(order.len());
    for (rank, s) in order.iter().enumerate() {
        if s.iou() >= threshold {
            tp += 1;
        }
        precision.push(tp as f64 / (rank + 1) as f64);
        recall.push(tp as f64 / n);
    }
    // Monotone envelope from the right.
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    Ok(ap)
}

pub fn map_50_95(scores: &[SampleScore]) -> Result<f64> {
    non_empty(scores)?;
    let mut total = 0.0;
    for t in map_thresholds() {
        total += average_precision(scores, t)?;
    }
    Ok(total / 10.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Keyed `"P@0.5"` … `"P@0.9"`.
    pub precision_at: BTreeMap<String, f64>,
    pub overall_iou: f64,
    pub mean_iou: f64,
    pub map_50_95: f64,
    pub n_samples: usize,
}

pub fn precision_key(k: f64) -> String {
    format!("P@{k:.1}")
}

impl MetricReport {
    pub fn from_scores(scores: &[SampleScore]) -> Result<Self> {
        let mut precision_at = BTreeMap::new();
        for k in PRECISION_KS {
            precision_at.insert(precision_key(k), precision_at_k(scores, k)?);
        }
        let (overall_iou, mean_iou) = overall_and_mean_iou(scores)?;
        Ok(MetricReport { precision_at, overall_iou, mean_iou, map_50_95: map_50_95(scores)?, n_samples: scores.len() })
    }

    pub fn evaluate(samples: &[EvalSample]) -> Result<Self> {
        let scores = samples.iter().map(score).collect::<Result<Vec<_>>>()?;
        Self::from_scores(&scores)
    }

    /// Column names in table order.
    pub fn columns() -> Vec<String> {
        let mut cols: Vec<String> = PRECISION_KS.iter().map(|&k| precision_key(k)).collect();
        cols.extend(["Overall".to_string(), "Mean".to_string(), "mAP".to_string()]);
        cols
    }

    /// Values in the same order as [`MetricReport::columns`].
    pub fn values(&self) -> Vec<f64> {
        let mut vals: Vec<f64> = PRECISION_KS.iter().map(|&k| self.precision_at[&precision_key(k)]).collect();
        vals.extend([self.overall_iou, self.mean_iou, self.map_50_95]);
        vals
    }

    /// Aligned plain-text table, values in percent.
    pub fn to_table(&self, label: &str) -> String {
        let cols = Self::columns();
        let width = label.len().max(6);
        let mut out = format!("{:<width$}", "Method");
        for c in &cols {
            let _ = write!(out, " | {c:>7}");
        }
        out.push('\n');
        out.push_str(&"-".repeat(out.len() - 1));
        out.push('\n');
        let _ = write!(out, "{label:<width$}");
        for v in self.values() {
            let _ = write!(out, " | {:>7.1}", 100.0 * v);
        }
        out.push('\n');
        out
    }
}
