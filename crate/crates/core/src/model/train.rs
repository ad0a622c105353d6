//! Training loop and held-out evaluation.

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FrameGeometry, FrameVars, Model, ModelConfig, VideoState};
use crate::autograd::{Graph, Var};
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::image::BinaryMask;
use crate::losses::{dice_loss, dice_loss_var, focal_loss_var, giou_loss, l1_box, refer_loss_var, Box, LossConfig, PROB_CLAMP};
use crate::metrics::{score, EvalSample, MetricReport, SampleScore};
use crate::optim::{Adam, AdamConfig, GradAccumulator};
use crate::tensor::Tensor;
use crate::tsm::{MemoryMode, TraceRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optimizer: AdamConfig,
    pub loss: LossConfig,
    /// Weight of the per-query confidence cross-entropy.
    pub score_weight: f64,
    /// Frames whose gradients are averaged into one optimizer step; the
    /// last partial group of a record still steps.
    pub frames_per_step: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 16, optimizer: AdamConfig::default(), loss: LossConfig::default(), score_weight: 1.0, frames_per_step: 1 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.frames_per_step == 0 {
            return Err(Error::Config("frames_per_step must be positive".into()));
        }
        if !(self.score_weight >= 0.0 && self.score_weight.is_finite()) {
            return Err(Error::Config("score_weight must be >= 0".into()));
        }
        self.optimizer.validate()?;
        self.loss.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
}

/// Inference switches; the ablation axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub msa: bool,
    pub memory: MemoryMode,
}

impl EvalOptions {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        EvalOptions { msa: cfg.msa_enabled, memory: cfg.memory }
    }
}

/// A record with its frames reduced to patch features.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub record_id: String,
    pub video_id: String,
    pub tokens: Vec<usize>,
    pub features: Vec<Tensor>,
    pub masks: Vec<BinaryMask>,
    pub boxes: Vec<Option<Box>>,
    pub geometry: Arc<FrameGeometry>,
}

pub fn prepare(model: &Model, samples: &[Sample], msa: bool) -> Result<Vec<PreparedSample>> {
    let mut geometries: HashMap<(usize, usize), Arc<FrameGeometry>> = HashMap::new();
    samples
        .iter()
        .map(|s| {
            let first = s.frames.first().ok_or_else(|| Error::Input(format!("{} has no frames", s.record.record_id)))?;
            let key = (first.width(), first.height());
            let geometry = match geometries.get(&key) {
                Some(g) => g.clone(),
                None => {
                    let g = Arc::new(model.geometry(key.0, key.1)?);
                    geometries.insert(key, g.clone());
                    g
                }
            };
            if s.frames.iter().any(|f| (f.width(), f.height()) != key) {
                return Err(Error::Input(format!("{} mixes frame sizes", s.record.record_id)));
            }
            Ok(PreparedSample {
                record_id: s.record.record_id.clone(),
                video_id: s.record.video_id.clone(),
                tokens: model.vocab.encode(&s.record.expression)?,
                features: s.frames.iter().map(|f| model.frame_features(f, msa)).collect::<Result<_>>()?,
                masks: s.masks.clone(),
                boxes: s.masks.iter().map(Box::from_mask).collect(),
                geometry,
            })
        })
        .collect()
}

fn row_box(boxes: &Tensor, q: usize) -> Box {
    let r = boxes.row(q);
    Box::new(r[0], r[1], r[2], r[3])
}

/// Query with the lowest mask + box cost against the ground truth.
fn match_query(vars: &FrameVars<'_>, gt_mask: &BinaryMask, gt_box: Option<&Box>, cfg: &TrainConfig) -> Result<usize> {
    let boxes = vars.boxes.value();
    let logits = vars.mask_logits.value();
    let mut best = (0, f64::INFINITY);
    for q in 0..boxes.shape()[0] {
        let probs: Vec<f64> = logits.row(q).iter().map(|&z| crate::autograd::sigmoid(z)).collect();
        let mut cost = dice_loss(&probs, gt_mask, cfg.loss.dice_eps)?;
        if let Some(b) = gt_box {
            let p = row_box(&boxes, q);
            cost += l1_box(&p, b) + giou_loss(&p, b);
        }
        if cost < best.1 {
            best = (q, cost);
        }
    }
    Ok(best.0)
}

/// Binary cross-entropy of the per-query confidences against soft targets.
fn score_bce<'g>(logits: Var<'g>, targets: &[f64]) -> Result<Var<'g>> {
    let g = logits.graph();
    let shape = logits.shape();
    let p = logits.sigmoid().clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let pos = p.ln().mul(g.constant(Tensor::new(&shape, targets.to_vec())?))?;
    let neg = p.rsub_scalar(1.0).ln().mul(g.constant(Tensor::new(&shape, targets.iter().map(|t| 1.0 - t).collect())?))?;
    Ok(pos.add(neg)?.mean().neg())
}

/// IoU of each query's binarised mask with the ground truth; the
/// confidence target, so the highest score marks the best mask.
fn query_ious(vars: &FrameVars<'_>, gt_mask: &BinaryMask) -> Vec<f64> {
    let logits = vars.mask_logits.value();
    let gt = gt_mask.bits();
    (0..logits.shape()[0])
        .map(|q| {
            let (mut inter, mut union) = (0usize, 0usize);
            for (&z, &g) in logits.row(q).iter().zip(gt) {
                let p = z >= 0.0;
                inter += usize::from(p && g);
                union += usize::from(p || g);
            }
            if union == 0 { 1.0 } else { inter as f64 / union as f64 }
        })
        .collect()
}

/// Training objective for one frame: referring loss on the matched query
/// plus confidence cross-entropy against each query's current mask IoU.
pub fn frame_loss<'g>(
    vars: &FrameVars<'g>,
    gt_mask: &BinaryMask,
    gt_box: Option<&Box>,
    cfg: &TrainConfig,
) -> Result<Var<'g>> {
    let q = match_query(vars, gt_mask, gt_box, cfg)?;
    let logits = vars.mask_logits.row(q)?;
    let main = match gt_box {
        Some(b) => refer_loss_var(vars.boxes.row(q)?, logits, b, gt_mask, &cfg.loss)?.total,
        None => {
            let l = &cfg.loss;
            let dice = dice_loss_var(logits.sigmoid(), gt_mask, l.dice_eps)?.scale(l.lambda_dice);
            let focal = focal_loss_var(logits, gt_mask, l.focal_alpha, l.focal_gamma)?.scale(l.lambda_focal);
            dice.add(focal)?.scale(l.beta_mask)
        }
    };
    main.add(score_bce(vars.score_logits, &query_ious(vars, gt_mask))?.scale(cfg.score_weight))
}

/// Epochs of per-record updates. `on_epoch` sees each report as soon as it
/// is complete, so callers keep partial progress if a later epoch diverges.
pub fn train(
    model: &mut Model,
    data: &[PreparedSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport) -> Result<()>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let mut opt = Adam::new(cfg.optimizer.clone(), &model.store)?;
    let mut acc = GradAccumulator::new(model.store.len());
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();
    let mode = model.config.memory;
    for epoch in 1..=cfg.epochs {
        let lr = cfg.optimizer.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let s = &data[i];
            let mut state = VideoState::new();
            let mut sample_loss = 0.0;
            for (t, f) in s.features.iter().enumerate() {
                let g = Graph::new();
                let vars = model.forward_frame(&g, f, &s.tokens, &s.geometry, &state, mode)?;
                let loss = frame_loss(&vars, &s.masks[t], s.boxes[t].as_ref(), cfg)?;
                let value = loss.item();
                if !value.is_finite() {
                    return Err(Error::Divergence { epoch, sample: s.record_id.clone(), loss: value });
                }
                sample_loss += value;
                acc.add(&g.backward(loss)?);
                state.record(vars.entity())?;
                if acc.count() == cfg.frames_per_step || t + 1 == s.features.len() {
                    opt.step(&mut model.store, |id| acc.mean(id), lr)?;
                    acc.clear();
                }
            }
            total += sample_loss / s.features.len() as f64;
        }
        let entry = EpochReport { epoch, mean_loss: total / data.len() as f64, lr };
        log::info!("epoch {epoch}: mean loss {:.5} (lr {lr:e})", entry.mean_loss);
        on_epoch(&entry)?;
        report.epochs.push(entry);
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub scores: Vec<SampleScore>,
    pub report: MetricReport,
    pub trace: Vec<TraceRecord>,
}

/// Scores every `(expression, frame)` pair with the referred query's mask.
pub fn evaluate(model: &Model, data: &[PreparedSample], opts: &EvalOptions) -> Result<Evaluation> {
    let mut scores = Vec::new();
    let mut trace = Vec::new();
    for s in data {
        let out = model.forward_features(&s.video_id, &s.features, &s.tokens, &s.geometry, opts.memory)?;
        for (t, frame) in out.frames.iter().enumerate() {
            let q = frame.referred();
            let pred = frame.mask(q);
            scores.push(SampleScore {
                sample_id: format!("{}/{t:03}", s.record_id),
                intersection: pred.intersection_count(&s.masks[t])?,
                union: pred.union_count(&s.masks[t])?,
                confidence: frame.query_scores[q],
            });
        }
        trace.extend(out.trace);
    }
    let report = MetricReport::from_scores(&scores)?;
    Ok(Evaluation { scores, report, trace })
}

/// Scores each ground-truth mask as its own prediction with confidence 1;
/// the pass-through check of the scoring pipeline.
pub fn ground_truth_scores(samples: &[Sample]) -> Result<Vec<SampleScore>> {
    let mut scores = Vec::new();
    for s in samples {
        for (t, gt) in s.masks.iter().enumerate() {
            scores.push(score(&EvalSample {
                sample_id: format!("{}/{t:03}", s.record.record_id),
                pred_mask: gt.clone(),
                gt_mask: gt.clone(),
                confidence: 1.0,
            })?);
        }
    }
    Ok(scores)
}
