//! The standing gradient suite: every differentiable op, each loss term and
//! the composed per-frame objective checked against central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autograd::{Graph, Var};
use crate::dataset::{synthesize, AnnotationRecord, Attributes, Sample, SynthConfig};
use crate::error::Result;
use crate::gradcheck::{grad_check, grad_check_params, GradCheckReport, ParamEntry};
use crate::image::BinaryMask;
use crate::losses::{dice_loss_var, focal_loss_var, giou_loss_var, l1_box_var, Box};
use crate::model::{frame_loss, prepare, Model, ModelConfig, TrainConfig, VideoState, Vocabulary};
use crate::nn::{Linear, Mlp3, MultiHeadAttention};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const EPS: f64 = 1e-4;
pub const OP_TOL: f64 = 1e-4;
pub const COMPOSED_TOL: f64 = 1e-3;
pub const COMPOSED_PARAMS: usize = 32;

#[derive(Clone, Debug, Serialize)]
pub struct SuiteCase {
    pub name: String,
    pub report: GradCheckReport,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape")
}

/// Values with magnitude in `[0.2, 1.5]`, away from the kinks of relu/abs.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let t = rand_tensor(rng, shape, 0.2, 1.5);
    t.map(|v| if rng.clone().gen_bool(0.5) { v } else { -v })
}

/// Weighted sum with fixed random weights, so every output entry matters.
fn project<'g>(v: Var<'g>, w: &Tensor) -> Result<Var<'g>> {
    Ok(v.mul(v.graph().constant(w.clone()))?.sum())
}

type OpCase = (&'static str, Tensor, std::boxed::Box<dyn for<'g> Fn(&'g Graph, Var<'g>) -> Result<Var<'g>>>);

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<OpCase> {
    let mut cases: Vec<OpCase> = Vec::new();
    let b = rand_tensor(rng, &[4, 3], -1.0, 1.0);
    let w43 = rand_tensor(rng, &[4, 3], -1.0, 1.0);
    let w35 = rand_tensor(rng, &[3, 5], -1.0, 1.0);
    let w34 = rand_tensor(rng, &[3, 4], -1.0, 1.0);
    let w46 = rand_tensor(rng, &[4, 6], -1.0, 1.0);
    let m35 = rand_tensor(rng, &[3, 5], -1.0, 1.0);
    let other = rand_tensor(rng, &[3, 5], -1.0, 1.0);
    let row = rand_tensor(rng, &[5], -1.0, 1.0);
    let x35 = rand_tensor(rng, &[3, 5], -1.0, 1.0);

    macro_rules! case {
        ($name:expr, $x:expr, |$g:ident, $v:ident| $body:expr) => {{
            let f: std::boxed::Box<dyn for<'g> Fn(&'g Graph, Var<'g>) -> Result<Var<'g>>> =
                std::boxed::Box::new(move |$g, $v| $body);
            cases.push(($name, $x, f));
        }};
    }

    let (m35c, b35) = (m35.clone(), w35.clone());
    case!("matmul", rand_tensor(rng, &[4, 3], -1.0, 1.0), |g, v| project(v.matmul(g.constant(m35c.clone()))?, &w46_5(&b35)));
    let (bc, w) = (b.clone(), w43.clone());
    case!("add", rand_tensor(rng, &[4, 3], -1.0, 1.0), |g, v| project(v.add(g.constant(bc.clone()))?, &w));
    let (bc, w) = (b.clone(), w43.clone());
    case!("mul", rand_tensor(rng, &[4, 3], -1.0, 1.0), |g, v| project(v.mul(g.constant(bc.clone()))?, &w));
    let w = w43.clone();
    case!("relu", off_kink(rng, &[4, 3]), |_g, v| project(v.relu(), &w));
    let w = w43.clone();
    case!("sigmoid", rand_tensor(rng, &[4, 3], -3.0, 3.0), |_g, v| project(v.sigmoid(), &w));
    let (oc, w) = (other.clone(), w46.clone());
    case!("concat_cols", rand_tensor(rng, &[4, 2], -1.0, 1.0), |g, v| {
        let o = g.constant(oc.clone()).transpose()?.slice_cols(0, 3)?.slice_rows(0, 4)?;
        let o = g.concat_cols(&[o, o.scale(0.5)])?;
        project(g.concat_cols(&[v, o])?.slice_cols(0, 6)?, &w)
    });
    case!("sum", rand_tensor(rng, &[3, 5], -1.0, 1.0), |_g, v| Ok(v.mul(v)?.sum()));
    case!("mean", rand_tensor(rng, &[3, 5], -1.0, 1.0), |_g, v| Ok(v.exp().mean()));
    let (rc, w) = (row.clone(), w35.clone());
    case!("affine", rand_tensor(rng, &[3, 4], -1.0, 1.0), |g, v| {
        project(v.matmul(g.constant(w34_t(&rc)))?.add_row(g.constant(rc.clone()))?, &w)
    });
    let w = w35.clone();
    case!("softmax_rows", rand_tensor(rng, &[3, 5], -2.0, 2.0), |_g, v| project(v.softmax_rows()?, &w));
    let w = x35.clone();
    case!("exp", rand_tensor(rng, &[3, 5], -1.0, 1.0), |_g, v| project(v.exp(), &w));
    let w = x35.clone();
    case!("ln", rand_tensor(rng, &[3, 5], 0.3, 2.0), |_g, v| project(v.ln(), &w));
    let (oc, w) = (other.map(|v| v.abs() + 0.5), x35.clone());
    case!("div", rand_tensor(rng, &[3, 5], -1.0, 1.0), |g, v| project(g.constant(oc.clone()).div(v.abs().add_scalar(0.5))?, &w));
    let w = x35.clone();
    case!("abs", off_kink(rng, &[3, 5]), |_g, v| project(v.abs(), &w));
    let w = x35.clone();
    case!("powf", rand_tensor(rng, &[3, 5], 0.3, 2.0), |_g, v| project(v.powf(2.5), &w));
    let w = w34.clone();
    case!("transpose", rand_tensor(rng, &[4, 3], -1.0, 1.0), |_g, v| project(v.transpose()?, &w));
    let w = x35.clone();
    case!("maximum", rand_tensor(rng, &[3, 5], 0.5, 1.0), |g, v| {
        let o = g.constant(Tensor::full(&[3, 5], 0.0));
        project(v.maximum(o)?.add(v.minimum(o)?.scale(3.0))?, &w)
    });
    let w = x35;
    case!("clamp", rand_tensor(rng, &[3, 5], -0.5, 0.5), |_g, v| project(v.clamp(-0.9, 0.9), &w));
    cases
}

fn w46_5(w35: &Tensor) -> Tensor {
    // 4×5 weights derived from a 3×5 table.
    let mut data = w35.data().to_vec();
    data.extend_from_slice(&w35.data()[..5]);
    Tensor::new(&[4, 5], data).expect("shape")
}

fn w34_t(row: &Tensor) -> Tensor {
    let n = row.len();
    Tensor::new(&[4, n], (0..4 * n).map(|i| ((i * 7 % 11) as f64 - 5.0) / 7.0).collect()).expect("shape")
}

fn layer_cases(rng: &mut ChaCha8Rng, out: &mut Vec<SuiteCase>) -> Result<()> {
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "lin", 6, 5, rng);
    let mlp = Mlp3::new(&mut store, "mlp", [6, 6, 6, 3], rng);
    let mha = MultiHeadAttention::new(&mut store, "mha", 8, 4, rng)?;
    let x6 = rand_tensor(rng, &[4, 6], -1.0, 1.0);
    let x8 = rand_tensor(rng, &[5, 8], -1.0, 1.0);
    let kv = rand_tensor(rng, &[3, 8], -1.0, 1.0);
    let w5 = rand_tensor(rng, &[4, 5], -1.0, 1.0);
    let w3 = rand_tensor(rng, &[4, 3], -1.0, 1.0);
    let w8 = rand_tensor(rng, &[5, 8], -1.0, 1.0);
    out.push(SuiteCase {
        name: "linear (input)".into(),
        report: grad_check(|g, v| project(lin.forward(g, &store, v)?, &w5), &x6, EPS, OP_TOL)?,
    });
    out.push(SuiteCase {
        name: "mlp3 (input)".into(),
        report: grad_check(|g, v| project(mlp.forward(g, &store, v)?, &w3), &x6, EPS, OP_TOL)?,
    });
    out.push(SuiteCase {
        name: "multi_head_attention (query)".into(),
        report: grad_check(
            |g, v| {
                let k = g.constant(kv.clone());
                project(mha.forward(g, &store, v, k, k)?.output, &w8)
            },
            &x8,
            EPS,
            OP_TOL,
        )?,
    });
    out.push(SuiteCase {
        name: "multi_head_attention (keys)".into(),
        report: grad_check(
            |g, v| {
                let q = g.constant(x8.clone());
                project(mha.forward(g, &store, q, v, v)?.output, &w8)
            },
            &kv,
            EPS,
            OP_TOL,
        )?,
    });
    let entries: Vec<ParamEntry> = store
        .ids()
        .flat_map(|id| {
            let n = store.value(id).len();
            (0..n.min(3)).map(move |index| ParamEntry { param: id, index })
        })
        .collect();
    out.push(SuiteCase {
        name: "layers (parameters)".into(),
        report: grad_check_params(
            |g, s| {
                let a = project(lin.forward(g, s, g.constant(x6.clone()))?, &w5)?;
                let b = project(mlp.forward(g, s, g.constant(x6.clone()))?, &w3)?;
                let k = g.constant(kv.clone());
                let c = project(mha.forward(g, s, g.constant(x8.clone()), k, k)?.output, &w8)?;
                a.add(b)?.add(c)
            },
            &store,
            &entries,
            EPS,
            OP_TOL,
        )?,
    });
    Ok(())
}

fn loss_cases(rng: &mut ChaCha8Rng, out: &mut Vec<SuiteCase>) -> Result<()> {
    let gt = Box::new(0.45, 0.5, 0.3, 0.25);
    let pred = Tensor::new(&[4], vec![0.52, 0.41, 0.22, 0.37])?;
    out.push(SuiteCase { name: "l1_box".into(), report: grad_check(|_, v| l1_box_var(v, &gt), &pred, EPS, OP_TOL)? });
    out.push(SuiteCase { name: "giou_loss".into(), report: grad_check(|_, v| giou_loss_var(v, &gt), &pred, EPS, OP_TOL)? });
    let mask = BinaryMask::from_fn(6, 5, |x, y| (1..4).contains(&x) && (2..5).contains(&y));
    let logits = rand_tensor(rng, &[30], -2.0, 2.0);
    out.push(SuiteCase {
        name: "dice_loss".into(),
        report: grad_check(|_, v| dice_loss_var(v.sigmoid(), &mask, 1.0), &logits, EPS, OP_TOL)?,
    });
    out.push(SuiteCase {
        name: "focal_loss".into(),
        report: grad_check(|_, v| focal_loss_var(v, &mask, 0.25, 2.0), &logits, EPS, OP_TOL)?,
    });
    Ok(())
}

/// Per-frame training objective of a default-width model on a small
/// synthetic clip, checked on a random sample of parameter entries. The
/// memory is warmed first so the read path is on the tape.
pub fn composed_case(seed: u64) -> Result<SuiteCase> {
    let cfg = SynthConfig {
        n_videos: 1,
        n_test: 0,
        frames_per_video: 3,
        width: 16,
        height: 16,
        max_objects: 1,
        object_size: [3, 5],
        shadow_length: [3, 5],
        shadow_skew: [-1.0, 1.0],
        seed,
        ..SynthConfig::default()
    };
    let video = synthesize(&cfg)?.remove(0);
    let rec = &video.records[0];
    let sample = Sample {
        record: AnnotationRecord {
            record_id: rec.record_id.clone(),
            video_id: video.video_id.clone(),
            expression: rec.expression.clone(),
            frames: Vec::new(),
            attributes: Attributes::default(),
        },
        frames: video.frames.clone(),
        masks: rec.masks.clone(),
    };
    let model = Model::new(ModelConfig { seed, ..ModelConfig::default() }, Vocabulary::build([rec.expression.as_str()]))?;
    let data = prepare(&model, std::slice::from_ref(&sample), true)?;
    let s = &data[0];
    let mut state = VideoState::new();
    for f in &s.features[..2] {
        let g = Graph::new();
        let vars = model.forward_frame(&g, f, &s.tokens, &s.geometry, &state, model.config.memory)?;
        state.record(vars.entity())?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let ids: Vec<ParamId> = model.store.ids().collect();
    let entries: Vec<ParamEntry> = (0..COMPOSED_PARAMS)
        .map(|_| {
            let param = ids[rng.gen_range(0..ids.len())];
            ParamEntry { param, index: rng.gen_range(0..model.store.value(param).len()) }
        })
        .collect();
    let train_cfg = TrainConfig::default();
    let report = grad_check_params(
        |g, store| {
            let m = model.with_params(store)?;
            let vars = m.forward_frame(g, &s.features[2], &s.tokens, &s.geometry, &state, m.config.memory)?;
            frame_loss(&vars, &s.masks[2], s.boxes[2].as_ref(), &train_cfg)
        },
        &model.store,
        &entries,
        EPS,
        COMPOSED_TOL,
    )?;
    Ok(SuiteCase { name: format!("per-frame loss ({COMPOSED_PARAMS} parameters)"), report })
}

/// Runs every case; inspect `report.passed` on each.
pub fn gradient_suite(seed: u64) -> Result<Vec<SuiteCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, x, f) in op_cases(&mut rng) {
        out.push(SuiteCase { name: name.to_string(), report: grad_check(|g, v| f(g, v), &x, EPS, OP_TOL)? });
    }
    layer_cases(&mut rng, &mut out)?;
    loss_cases(&mut rng, &mut out)?;
    out.push(composed_case(seed)?);
    Ok(out)
}
