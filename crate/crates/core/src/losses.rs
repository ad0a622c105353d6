//! Referring loss: a weighted box term (L1 + GIoU) plus a weighted mask term
//! (dice + focal).
//!
//! Each component exists twice: a plain `f64` evaluation used for matching
//! and reporting, and a `*_var` version recorded on the tape for training.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Error, Result};
use crate::image::BinaryMask;
use crate::tensor::Tensor;

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub alpha_box: f64,
    pub beta_mask: f64,
    pub lambda_l1: f64,
    pub lambda_giou: f64,
    pub lambda_dice: f64,
    pub lambda_focal: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub dice_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha_box: 1.0,
            beta_mask: 1.0,
            lambda_l1: 5.0,
            lambda_giou: 2.0,
            lambda_dice: 5.0,
            lambda_focal: 2.0,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            dice_eps: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            self.alpha_box,
            self.beta_mask,
            self.lambda_l1,
            self.lambda_giou,
            self.lambda_dice,
            self.lambda_focal,
            self.focal_alpha,
        ];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        if !(self.focal_gamma.is_finite() && self.focal_gamma >= 0.0) {
            return Err(Error::Config("focal gamma must be >= 0".into()));
        }
        if !(self.dice_eps.is_finite() && self.dice_eps > 0.0) {
            return Err(Error::Config("dice epsilon must be > 0".into()));
        }
        Ok(())
    }
}

/// Normalised `(cx, cy, w, h)` box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Box {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Box { cx, cy, w, h }
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Box { cx: 0.5 * (x1 + x2), cy: 0.5 * (y1 + y2), w: x2 - x1, h: y2 - y1 }
    }

    /// Bounding box of a mask, normalised by the mask size.
    pub fn from_mask(mask: &BinaryMask) -> Option<Self> {
        let (x0, y0, x1, y1) = mask.bounding_box()?;
        let (w, h) = (mask.width() as f64, mask.height() as f64);
        Some(Box::from_corners(x0 as f64 / w, y0 as f64 / h, x1 as f64 / w, y1 as f64 / h))
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.cx - 0.5 * self.w, self.cy - 0.5 * self.h, self.cx + 0.5 * self.w, self.cy + 0.5 * self.h]
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }
}

pub fn l1_box(pred: &Box, gt: &Box) -> f64 {
    pred.to_array().iter().zip(gt.to_array()).map(|(a, b)| (a - b).abs()).sum::<f64>() / 4.0
}

/// `1 − GIoU`, in `[0, 2]`. Two zero-area boxes give 1.
pub fn giou_loss(pred: &Box, gt: &Box) -> f64 {
    let [ax1, ay1, ax2, ay2] = pred.corners();
    let [bx1, by1, bx2, by2] = gt.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = pred.area() + gt.area() - inter;
    if union <= 0.0 {
        return 1.0;
    }
    let enclosing = (ax2.max(bx2) - ax1.min(bx1)) * (ay2.max(by2) - ay1.min(by1));
    let giou = inter / union - (enclosing - union) / enclosing;
    1.0 - giou
}

fn check_len(pred: usize, gt: &BinaryMask) -> Result<()> {
    if pred != gt.bits().len() {
        return Err(shape_err!("prediction has {} pixels, mask has {}", pred, gt.bits().len()));
    }
    Ok(())
}

/// `1 − (2 Σ p g + ε) / (Σ p + Σ g + ε)`.
pub fn dice_loss(pred_prob: &[f64], gt: &BinaryMask, eps: f64) -> Result<f64> {
    check_len(pred_prob.len(), gt)?;
    let (mut pg, mut ps, mut gs) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred_prob.iter().zip(gt.bits()) {
        ps += p;
        if g {
            pg += p;
            gs += 1.0;
        }
    }
    Ok(1.0 - (2.0 * pg + eps) / (ps + gs + eps))
}

/// Mean of `−α_t (1 − p_t)^γ log p_t` over pixels, `p = sigmoid(logit)`.
pub fn focal_loss(pred_logits: &[f64], gt: &BinaryMask, alpha: f64, gamma: f64) -> Result<f64> {
    check_len(pred_logits.len(), gt)?;
    let total: f64 = pred_logits
        .iter()
        .zip(gt.bits())
        .map(|(&z, &g)| {
            let p = crate::autograd::sigmoid(z).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            let (pt, at) = if g { (p, alpha) } else { (1.0 - p, 1.0 - alpha) };
            -at * (1.0 - pt).powf(gamma) * pt.ln()
        })
        .sum();
    Ok(total / pred_logits.len() as f64)
}

/// The four weighted components and their total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub giou: f64,
    pub dice: f64,
    pub focal: f64,
    pub total: f64,
}

/// Plain evaluation of the full referring loss.
pub fn refer_loss(pred_box: &Box, pred_logits: &[f64], gt_box: &Box, gt_mask: &BinaryMask, cfg: &LossConfig) -> Result<LossBreakdown> {
    let l1 = l1_box(pred_box, gt_box);
    let giou = giou_loss(pred_box, gt_box);
    let probs: Vec<f64> = pred_logits.iter().map(|&z| crate::autograd::sigmoid(z)).collect();
    let dice = dice_loss(&probs, gt_mask, cfg.dice_eps)?;
    let focal = focal_loss(pred_logits, gt_mask, cfg.focal_alpha, cfg.focal_gamma)?;
    let total = cfg.alpha_box * (cfg.lambda_l1 * l1 + cfg.lambda_giou * giou)
        + cfg.beta_mask * (cfg.lambda_dice * dice + cfg.lambda_focal * focal);
    Ok(LossBreakdown { l1, giou, dice, focal, total })
}

fn box_cols<'g>(b: Var<'g>) -> Result<[Var<'g>; 4]> {
    if b.value().len() != 4 {
        return Err(shape_err!("box must have 4 entries, got {:?}", b.shape()));
    }
    let b = b.reshape(&[1, 4])?;
    Ok([b.slice_cols(0, 1)?, b.slice_cols(1, 2)?, b.slice_cols(2, 3)?, b.slice_cols(3, 4)?])
}

pub fn l1_box_var<'g>(pred: Var<'g>, gt: &Box) -> Result<Var<'g>> {
    let g = pred.graph();
    let target = g.constant(Tensor::new(&[1, 4], gt.to_array().to_vec())?);
    Ok(pred.reshape(&[1, 4])?.sub(target)?.abs().mean())
}

pub fn giou_loss_var<'g>(pred: Var<'g>, gt: &Box) -> Result<Var<'g>> {
    let g = pred.graph();
    let [cx, cy, w, h] = box_cols(pred)?;
    let x1 = cx.sub(w.scale(0.5))?;
    let x2 = cx.add(w.scale(0.5))?;
    let y1 = cy.sub(h.scale(0.5))?;
    let y2 = cy.add(h.scale(0.5))?;
    let c = |v: f64| g.constant(Tensor::new(&[1, 1], vec![v]).expect("1x1"));
    let [gx1, gy1, gx2, gy2] = gt.corners().map(c);
    let iw = x2.minimum(gx2)?.sub(x1.maximum(gx1)?)?.relu();
    let ih = y2.minimum(gy2)?.sub(y1.maximum(gy1)?)?.relu();
    let inter = iw.mul(ih)?;
    let area = w.relu().mul(h.relu())?;
    let union = area.add(c(gt.area()))?.sub(inter)?;
    if union.item() <= 0.0 {
        return Ok(c(1.0).reshape(&[1])?);
    }
    let cw = x2.maximum(gx2)?.sub(x1.minimum(gx1)?)?;
    let ch = y2.maximum(gy2)?.sub(y1.minimum(gy1)?)?;
    let enclosing = cw.mul(ch)?;
    let iou = inter.div(union)?;
    let empty = enclosing.sub(union)?.div(enclosing)?;
    Ok(iou.sub(empty)?.rsub_scalar(1.0).reshape(&[1])?)
}

fn mask_constant<'g>(g: &'g Graph, shape: &[usize], gt: &BinaryMask) -> Result<Var<'g>> {
    let data = gt.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    Ok(g.constant(Tensor::new(shape, data)?))
}

pub fn dice_loss_var<'g>(pred_prob: Var<'g>, gt: &BinaryMask, eps: f64) -> Result<Var<'g>> {
    let shape = pred_prob.shape();
    check_len(pred_prob.value().len(), gt)?;
    let gv = mask_constant(pred_prob.graph(), &shape, gt)?;
    let inter = pred_prob.mul(gv)?.sum();
    let numer = inter.scale(2.0).add_scalar(eps);
    let denom = pred_prob.sum().add_scalar(gt.count() as f64 + eps);
    Ok(numer.div(denom)?.rsub_scalar(1.0))
}

pub fn focal_loss_var<'g>(pred_logits: Var<'g>, gt: &BinaryMask, alpha: f64, gamma: f64) -> Result<Var<'g>> {
    let shape = pred_logits.shape();
    check_len(pred_logits.value().len(), gt)?;
    let g = pred_logits.graph();
    let p = pred_logits.sigmoid().clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    // p_t = p on positives, 1 - p on negatives: p (2g - 1) + (1 - g)
    let sign = gt.bits().iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
    let offset = gt.bits().iter().map(|&b| if b { 0.0 } else { 1.0 }).collect();
    let alpha_t = gt.bits().iter().map(|&b| if b { alpha } else { 1.0 - alpha }).collect();
    let pt = p.mul(g.constant(Tensor::new(&shape, sign)?))?.add(g.constant(Tensor::new(&shape, offset)?))?;
    let modulating = pt.rsub_scalar(1.0).powf(gamma);
    let per_pixel = g.constant(Tensor::new(&shape, alpha_t)?).mul(modulating)?.mul(pt.ln())?;
    Ok(per_pixel.mean().neg())
}

/// Tape version of the referring loss for one matched query.
pub struct LossVars<'g> {
    pub total: Var<'g>,
    pub breakdown: LossBreakdown,
}

pub fn refer_loss_var<'g>(
    pred_box: Var<'g>,
    pred_logits: Var<'g>,
    gt_box: &Box,
    gt_mask: &BinaryMask,
    cfg: &LossConfig,
) -> Result<LossVars<'g>> {
    let l1 = l1_box_var(pred_box, gt_box)?;
    let giou = giou_loss_var(pred_box, gt_box)?;
    let dice = dice_loss_var(pred_logits.sigmoid(), gt_mask, cfg.dice_eps)?;
    let focal = focal_loss_var(pred_logits, gt_mask, cfg.focal_alpha, cfg.focal_gamma)?;
    let boxes = l1.scale(cfg.lambda_l1).add(giou.scale(cfg.lambda_giou))?.scale(cfg.alpha_box);
    let masks = dice.scale(cfg.lambda_dice).add(focal.scale(cfg.lambda_focal))?.scale(cfg.beta_mask);
    let total = boxes.add(masks)?;
    let breakdown = LossBreakdown {
        l1: l1.item(),
        giou: giou.item(),
        dice: dice.item(),
        focal: focal.item(),
        total: total.item(),
    };
    Ok(LossVars { total, breakdown })
}
