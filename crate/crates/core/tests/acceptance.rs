//! Acceptance run: one PASS/FAIL line per criterion. Runs without the test
//! harness so every line shows up in the output.
//!
//! Exact contracts (prior, morphology, gradients, losses, metrics, memory,
//! dataset tooling) fail the run. The two training outcomes are empirical:
//! they are measured and reported, and a FAIL there does not change the exit
//! status.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rvsd::autograd::Graph;
use rvsd::dataset::{generate_synthetic, load_manifest, stats, validate, Sample, SplitName, SynthConfig, MIN_WORDS, MAX_WORDS};
use rvsd::gradsuite::gradient_suite;
use rvsd::image::{BinaryMask, Frame};
use rvsd::losses::{dice_loss, focal_loss, giou_loss, l1_box, Box, LossConfig};
use rvsd::metrics::{map_thresholds, EvalSample, MetricReport};
use rvsd::model::{evaluate, ground_truth_scores, prepare, train, EvalOptions, Model, ModelConfig, TrainConfig, Vocabulary};
use rvsd::msa::{morph_open, msa_map, MsaConfig, Weighting};
use rvsd::params::ParamStore;
use rvsd::tensor::Tensor;
use rvsd::text::word_count;
use rvsd::tsm::{memory_read, ClipRecord, MemoryMode, MemoryParams, MemoryWindow, TripleEntity};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

// ---------------------------------------------------------------- 1: prior

fn random_scene(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Frame {
    let bg = [rng.gen_range(90..=255u8), rng.gen_range(90..=255u8), rng.gen_range(90..=255u8)];
    let mut f = Frame::filled(w, h, bg);
    for _ in 0..rng.gen_range(1..=4) {
        let (x0, y0) = (rng.gen_range(0..w), rng.gen_range(0..h));
        let (x1, y1) = ((x0 + rng.gen_range(1..=10)).min(w), (y0 + rng.gen_range(1..=10)).min(h));
        let c = [rng.gen_range(0..=140u8), rng.gen_range(0..=140u8), rng.gen_range(0..=160u8)];
        for y in y0..y1 {
            for x in x0..x1 {
                f.set_pixel(x, y, c);
            }
        }
    }
    for _ in 0..rng.gen_range(0..24) {
        let (x, y) = (rng.gen_range(0..w), rng.gen_range(0..h));
        f.set_pixel(x, y, [rng.gen(), rng.gen(), rng.gen()]);
    }
    f
}

/// Rounds half up, computed in floating point.
fn round_half_up(v: f64) -> u8 {
    (v + 0.5 + 1e-9).floor() as u8
}

/// Pixel loop over the whole pipeline: per-pixel channel tests, opening as a
/// window search (outside pixels unset), union, weighting.
fn prior_oracle(frame: &Frame, cfg: &MsaConfig) -> (Vec<bool>, Vec<f64>) {
    let (w, h) = (frame.width() as isize, frame.height() as isize);
    let r = (cfg.kernel / 2) as isize;
    let mut gray = vec![false; (w * h) as usize];
    let mut hsv = vec![false; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let [pr, pg, pb] = frame.pixel(x as usize, y as usize).map(f64::from);
            let l = round_half_up(0.299 * pr + 0.587 * pg + 0.114 * pb);
            let (mx, mn) = (pr.max(pg).max(pb), pr.min(pg).min(pb));
            let s = if mx == 0.0 { 0 } else { round_half_up(255.0 * (mx - mn) / mx) };
            let v = mx as u8;
            let i = (y * w + x) as usize;
            gray[i] = (cfg.gray_min..=cfg.gray_max).contains(&l);
            hsv[i] = (cfg.s_min..=cfg.s_max).contains(&s) && (cfg.v_min..=cfg.v_max).contains(&v);
        }
    }
    let at = |m: &[bool], x: isize, y: isize| x >= 0 && y >= 0 && x < w && y < h && m[(y * w + x) as usize];
    let open = |m: &[bool]| -> Vec<bool> {
        let mut eroded = vec![false; m.len()];
        for y in 0..h {
            for x in 0..w {
                eroded[(y * w + x) as usize] =
                    (-r..=r).all(|dy| (-r..=r).all(|dx| at(m, x + dx, y + dy)));
            }
        }
        let mut out = vec![false; m.len()];
        for y in 0..h {
            for x in 0..w {
                out[(y * w + x) as usize] = (-r..=r).any(|dy| (-r..=r).any(|dx| at(&eroded, x + dx, y + dy)));
            }
        }
        out
    };
    let combined: Vec<bool> = open(&gray).iter().zip(open(&hsv)).map(|(a, b)| *a || b).collect();
    let mut weighted = Vec::new();
    for (px, &m) in frame.pixels().zip(&combined) {
        match cfg.weighting {
            Weighting::Multiplicative => {
                let gain = if m { 1.0 + cfg.weight_strength } else { 1.0 };
                weighted.extend(px.iter().map(|&c| f64::from(c) * gain));
            }
            Weighting::Concat => {
                weighted.extend(px.iter().map(|&c| f64::from(c)));
                weighted.push(if m { 255.0 * cfg.weight_strength } else { 0.0 });
            }
        }
    }
    (combined, weighted)
}

fn prior_configs(rng: &mut ChaCha8Rng) -> Vec<MsaConfig> {
    let mut cfgs = vec![
        MsaConfig::default(),
        MsaConfig { weighting: Weighting::Concat, ..MsaConfig::default() },
        MsaConfig { kernel: 3, weight_strength: 0.5, ..MsaConfig::default() },
    ];
    while cfgs.len() < 10 {
        let mut range = || {
            let (a, b) = (rng.gen::<u8>(), rng.gen::<u8>());
            (a.min(b), a.max(b))
        };
        let ((g0, g1), (s0, s1), (v0, v1)) = (range(), range(), range());
        cfgs.push(MsaConfig {
            gray_min: g0,
            gray_max: g1,
            s_min: s0,
            s_max: s1,
            v_min: v0,
            v_max: v1,
            kernel: [1, 3, 5][rng.gen_range(0..3)],
            weight_strength: rng.gen_range(0.0..2.0),
            weighting: if rng.gen_bool(0.5) { Weighting::Multiplicative } else { Weighting::Concat },
        });
    }
    cfgs
}

fn criterion_prior() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let cfgs = prior_configs(&mut rng);
    let frames: Vec<Frame> = (0..100).map(|_| random_scene(&mut rng, 16, 16)).collect();
    let (mut mismatches, mut non_trivial) = (0, 0);
    for cfg in &cfgs {
        for f in &frames {
            let out = msa_map(f, cfg).expect("valid config");
            let (mask, weighted) = prior_oracle(f, cfg);
            if out.combined.bits() != &mask[..] || out.weighted.data != weighted {
                mismatches += 1;
            }
            non_trivial += usize::from(out.combined.count() > 0);
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches == 0 && elapsed < Duration::from_secs(5),
        format!("{} cases, {mismatches} mismatches, {non_trivial} with a non-empty mask, {elapsed:.2?}", frames.len() * cfgs.len()),
    )
}

// ----------------------------------------------------------- 2: morphology

fn criterion_morphology() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut mismatches, mut not_idempotent, mut cases) = (0, 0, 0);
    for _ in 0..50 {
        let density = rng.gen_range(0.3..0.9);
        let bits: Vec<bool> = (0..32 * 32).map(|_| rng.gen_bool(density)).collect();
        let m = BinaryMask::new(32, 32, bits).unwrap();
        for k in [3usize, 5] {
            cases += 1;
            let r = (k / 2) as isize;
            let at = |m: &BinaryMask, x: isize, y: isize| (0..32).contains(&x) && (0..32).contains(&y) && m.get(x as usize, y as usize);
            let eroded = BinaryMask::from_fn(32, 32, |x, y| {
                (-r..=r).all(|dy| (-r..=r).all(|dx| at(&m, x as isize + dx, y as isize + dy)))
            });
            let oracle = BinaryMask::from_fn(32, 32, |x, y| {
                (-r..=r).any(|dy| (-r..=r).any(|dx| at(&eroded, x as isize + dx, y as isize + dy)))
            });
            let opened = morph_open(&m, k).unwrap();
            mismatches += usize::from(opened != oracle);
            not_idempotent += usize::from(morph_open(&opened, k).unwrap() != opened);
        }
    }
    outcome(
        mismatches == 0 && not_idempotent == 0,
        format!("{cases} cases, {mismatches} oracle mismatches, {not_idempotent} idempotence failures"),
    )
}

// ------------------------------------------------------------ 3: gradients

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let cases = gradient_suite(3).expect("suite runs");
    let elapsed = start.elapsed();
    let failed: Vec<&str> = cases.iter().filter(|c| !c.report.passed).map(|c| c.name.as_str()).collect();
    let worst = cases.iter().map(|c| c.report.max_rel_error).fold(0.0, f64::max);
    outcome(
        failed.is_empty() && elapsed < Duration::from_secs(60),
        format!("{} cases, failed {failed:?}, worst relative error {worst:.2e}, {elapsed:.2?}", cases.len()),
    )
}

// ---------------------------------------------------------- 4: loss anchors

fn criterion_loss_anchors() -> Outcome {
    let b = Box::new(0.4, 0.6, 0.3, 0.2);
    let l1 = l1_box(&b, &b);
    let giou_same = giou_loss(&b, &b);
    let giou_abut = giou_loss(&Box::from_corners(0.0, 0.0, 1.0, 1.0), &Box::from_corners(1.0, 0.0, 2.0, 1.0));
    let mask = BinaryMask::from_fn(12, 10, |x, y| (3..9).contains(&x) && (2..7).contains(&y));
    let probs: Vec<f64> = mask.bits().iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let logits: Vec<f64> = mask.bits().iter().map(|&m| if m { 40.0 } else { -40.0 }).collect();
    let cfg = LossConfig::default();
    let dice = dice_loss(&probs, &mask, cfg.dice_eps).unwrap();
    let focal = focal_loss(&logits, &mask, cfg.focal_alpha, cfg.focal_gamma).unwrap();
    outcome(
        l1 == 0.0 && giou_same == 0.0 && (giou_abut - 1.0).abs() <= 1e-12 && dice <= 1e-6 && focal <= 1e-6,
        format!("L1 {l1}, GIoU same {giou_same}, GIoU abutting {giou_abut}, dice {dice:.1e}, focal {focal:.1e}"),
    )
}

// ---------------------------------------------------------------- 5: metrics

fn random_sample(rng: &mut ChaCha8Rng, i: usize) -> EvalSample {
    let (w, h) = (rng.gen_range(4..12), rng.gen_range(4..12));
    let blob = |rng: &mut ChaCha8Rng| {
        if rng.gen_bool(0.05) {
            return BinaryMask::empty(w, h);
        }
        let (x0, y0) = (rng.gen_range(0..w), rng.gen_range(0..h));
        let (x1, y1) = (rng.gen_range(x0..=w), rng.gen_range(y0..=h));
        BinaryMask::from_fn(w, h, |x, y| (x0..x1).contains(&x) && (y0..y1).contains(&y))
    };
    let gt = blob(rng);
    let pred = if rng.gen_bool(0.2) { gt.clone() } else { blob(rng) };
    // Coarse confidences so ties occur.
    EvalSample { sample_id: format!("s{i:03}"), pred_mask: pred, gt_mask: gt, confidence: f64::from(rng.gen_range(0..20u8)) / 20.0 }
}

fn oracle_iou(s: &EvalSample) -> (usize, usize) {
    let (mut inter, mut union) = (0, 0);
    for (p, g) in s.pred_mask.bits().iter().zip(s.gt_mask.bits()) {
        inter += usize::from(*p && *g);
        union += usize::from(*p || *g);
    }
    (inter, union)
}

/// All-point AP straight from the definition: area under the precision
/// envelope `max_{r' ≥ r} P(r')`, summed over each recall increment.
fn oracle_ap(samples: &[EvalSample], ious: &[f64], t: f64) -> f64 {
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.sort_by(|&a, &b| {
        samples[b].confidence.partial_cmp(&samples[a].confidence).unwrap().then(samples[a].sample_id.cmp(&samples[b].sample_id))
    });
    let n = samples.len() as f64;
    let mut points = Vec::new();
    let mut tp = 0.0;
    for (rank, &i) in idx.iter().enumerate() {
        if ious[i] >= t {
            tp += 1.0;
        }
        points.push((tp / n, tp / (rank as f64 + 1.0)));
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (k, &(r, _)) in points.iter().enumerate() {
        let envelope = points[k..].iter().map(|p| p.1).fold(0.0, f64::max);
        ap += (r - prev) * envelope;
        prev = r;
    }
    ap
}

fn criterion_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let samples: Vec<EvalSample> = (0..200).map(|i| random_sample(&mut rng, i)).collect();
    let report = MetricReport::evaluate(&samples).unwrap();
    let counts: Vec<(usize, usize)> = samples.iter().map(oracle_iou).collect();
    let ious: Vec<f64> = counts.iter().map(|&(i, u)| if u == 0 { 1.0 } else { i as f64 / u as f64 }).collect();
    let n = samples.len() as f64;
    let mut worst: f64 = 0.0;
    for (key, k) in [("P@0.5", 0.5), ("P@0.6", 0.6), ("P@0.7", 0.7), ("P@0.8", 0.8), ("P@0.9", 0.9)] {
        let p = ious.iter().filter(|&&v| v >= k).count() as f64 / n;
        worst = worst.max((report.precision_at[key] - p).abs());
    }
    let (inter, union) = counts.iter().fold((0, 0), |a, c| (a.0 + c.0, a.1 + c.1));
    worst = worst.max((report.overall_iou - inter as f64 / union as f64).abs());
    worst = worst.max((report.mean_iou - ious.iter().sum::<f64>() / n).abs());
    let map = map_thresholds().iter().map(|&t| oracle_ap(&samples, &ious, t)).sum::<f64>() / 10.0;
    worst = worst.max((report.map_50_95 - map).abs());

    // Every prediction at IoU 0.6: a true positive at 0.50, 0.55, 0.60 only.
    let gt = BinaryMask::from_fn(5, 1, |x, _| x < 5);
    let pred = BinaryMask::from_fn(5, 1, |x, _| x < 3);
    let flat: Vec<EvalSample> = (0..7)
        .map(|i| EvalSample { sample_id: format!("f{i}"), pred_mask: pred.clone(), gt_mask: gt.clone(), confidence: 0.1 * i as f64 })
        .collect();
    let flat_map = MetricReport::evaluate(&flat).unwrap().map_50_95;
    outcome(
        worst <= 1e-9 && flat_map == 0.3,
        format!("max deviation from oracles {worst:.1e} over 200 samples, IoU-0.6 construction mAP {flat_map}"),
    )
}

// ----------------------------------------------------------------- 6: memory

fn criterion_memory() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let rep = |rng: &mut ChaCha8Rng| Tensor::new(&[5, 8], (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let mut window = MemoryWindow::new();
    for c in 0..7 {
        let frames = (0..3)
            .map(|_| TripleEntity::new(Tensor::full(&[5, 4], 0.5), rep(&mut rng), rep(&mut rng)).unwrap())
            .collect();
        window.push_clip(ClipRecord::new(c, frames).unwrap()).unwrap();
    }
    let window_ok = window.indices() == vec![2, 3, 4, 5, 6];

    let mut store = ParamStore::new();
    let p = MemoryParams::new(&mut store, 8, 4, &mut rng).unwrap();
    let g = Graph::new();
    let row = rep(&mut rng).row(0).to_vec();
    let h_mem = g.constant(Tensor::new(&[5, 8], row.repeat(5)).unwrap());
    let read = memory_read(&g, &store, g.constant(rep(&mut rng)), h_mem, &p).unwrap();
    let uniform_err = read.weights.iter().flat_map(|w| w.value().data().to_vec()).map(|v| (v - 0.2).abs()).fold(0.0, f64::max);

    let cfg = ModelConfig { d: 16, heads: 4, ffn_width: 32, ..ModelConfig::default() };
    let expr = "the hard shadow is on the left side";
    let model = Model::new(cfg, Vocabulary::build([expr])).unwrap();
    let frame = random_scene(&mut rng, 16, 16);
    let mut cold_ok = true;
    for memory in [MemoryMode::Intra, MemoryMode::IntraSingle, MemoryMode::IntraHier] {
        let with = model.forward_video("v", std::slice::from_ref(&frame), expr, &EvalOptions { msa: true, memory }).unwrap();
        let without =
            model.forward_video("v", std::slice::from_ref(&frame), expr, &EvalOptions { msa: true, memory: MemoryMode::Off }).unwrap();
        cold_ok &= with.frames == without.frames;
    }
    outcome(
        window_ok && uniform_err <= 1e-12 && cold_ok,
        format!("window after 7 clips {:?}, uniform read error {uniform_err:.1e}, cold start bit-exact {cold_ok}", window.indices()),
    )
}

// ------------------------------------------------------- 7 and 8: training

struct Benchmark {
    _dir: tempfile::TempDir,
    train: Vec<Sample>,
    test: Vec<Sample>,
}

fn benchmark() -> Benchmark {
    let dir = tempfile::tempdir().unwrap();
    let (_, summary) = generate_synthetic(&SynthConfig::default(), dir.path()).unwrap();
    assert_eq!((summary.train_videos, summary.test_videos), (20, 8));
    let m = load_manifest(&dir.path().join("manifest.json")).unwrap();
    let load = |split| m.records_in(split).into_iter().map(|r| m.load_sample(r).unwrap()).collect::<Vec<_>>();
    let (train, test) = (load(SplitName::Train), load(SplitName::Test));
    Benchmark { _dir: dir, train, test }
}

struct RunResult {
    first_loss: f64,
    last_loss: f64,
    test_mean_iou: f64,
    elapsed: Duration,
}

fn run_config(bench: &Benchmark, seed: u64, msa: bool, memory: MemoryMode) -> RunResult {
    let start = Instant::now();
    let cfg = ModelConfig { seed, msa_enabled: msa, memory, ..ModelConfig::default() };
    let vocab = Vocabulary::build(bench.train.iter().map(|s| s.record.expression.as_str()));
    let mut model = Model::new(cfg, vocab).unwrap();
    let train_data = prepare(&model, &bench.train, msa).unwrap();
    let report = train(&mut model, &train_data, &TrainConfig::default(), |_| Ok(())).unwrap();
    let test_data = prepare(&model, &bench.test, msa).unwrap();
    let ev = evaluate(&model, &test_data, &EvalOptions { msa, memory }).unwrap();
    RunResult {
        first_loss: report.epochs.first().unwrap().mean_loss,
        last_loss: report.epochs.last().unwrap().mean_loss,
        test_mean_iou: ev.report.mean_iou,
        elapsed: start.elapsed(),
    }
}

fn criterion_training(full: &RunResult) -> Outcome {
    let ratio = full.last_loss / full.first_loss;
    outcome(
        ratio <= 0.5 && full.test_mean_iou >= 0.5 && full.elapsed < Duration::from_secs(600),
        format!(
            "loss {:.4} -> {:.4} ({:.1}% of epoch 1), held-out Mean IoU {:.3}, {:.1?}",
            full.first_loss,
            full.last_loss,
            100.0 * ratio,
            full.test_mean_iou,
            full.elapsed
        ),
    )
}

const SEEDS: [u64; 3] = [1, 2, 3];

fn criterion_ablation(bench: &Benchmark, full_seed1: RunResult) -> Outcome {
    // (msa, hierarchical memory) -> Mean IoU per seed.
    let mut table: BTreeMap<(bool, bool), Vec<f64>> = BTreeMap::new();
    let mut first = Some(full_seed1);
    for seed in SEEDS {
        for (msa, hier) in [(true, true), (false, true), (true, false), (false, false)] {
            let iou = match (&mut first, seed, msa, hier) {
                (f @ Some(_), 1, true, true) => f.take().unwrap().test_mean_iou,
                _ => {
                    let memory = if hier { MemoryMode::IntraHier } else { MemoryMode::Off };
                    run_config(bench, seed, msa, memory).test_mean_iou
                }
            };
            table.entry((msa, hier)).or_default().push(iou);
        }
    }
    let mean = |k: (bool, bool)| table[&k].iter().sum::<f64>() / SEEDS.len() as f64;
    let msa_ok = mean((true, true)) >= mean((false, true)) - 0.02 && mean((true, false)) >= mean((false, false)) - 0.02;
    let mem_ok = mean((true, true)) >= mean((true, false)) - 0.02 && mean((false, true)) >= mean((false, false)) - 0.02;
    let full_best = (0..SEEDS.len())
        .filter(|&i| table.iter().all(|(k, v)| *k == (true, true) || v[i] <= table[&(true, true)][i]))
        .count();
    let fmt = |k: (bool, bool)| table[&k].iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join("/");
    outcome(
        msa_ok && mem_ok && full_best >= 2,
        format!(
            "Mean IoU per seed: baseline {}, +MSA {}, +memory {}, full {}; full best in {full_best}/3 seeds",
            fmt((false, false)),
            fmt((true, false)),
            fmt((false, true)),
            fmt((true, true))
        ),
    )
}

// --------------------------------------------------------------- 9: dataset

fn criterion_dataset(bench: &Benchmark) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (m, summary) = generate_synthetic(&SynthConfig::default(), dir.path()).unwrap();
    let report = validate(&m);
    let st = stats(&m);
    let short = word_count("the soft shadow is located below");
    let long = word_count("the hard shadow of a person who is holding an umbrella and walking is in the upper left corner");
    let mut all = bench.train.clone();
    all.extend(bench.test.iter().cloned());
    let gt = MetricReport::from_scores(&ground_truth_scores(&all).unwrap()).unwrap();
    let gt_ok = gt.values().iter().all(|&v| v == 1.0);
    outcome(
        report.is_clean() && st.pairs == summary.pairs && short == 6 && long == 19 && MIN_WORDS == 6 && gt_ok,
        format!(
            "{} violations over {} frames; word counts {short} and {long}; bounds {MIN_WORDS}..={MAX_WORDS}; ground truth scores {:?}",
            report.violations.len(),
            report.frames_checked,
            gt.values()
        ),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 prior oracle equivalence", criterion_prior()),
        ("2 morphology correctness", criterion_morphology()),
        ("3 gradient suite", criterion_gradients()),
        ("4 loss anchors", criterion_loss_anchors()),
        ("5 metrics oracle equivalence", criterion_metrics()),
        ("6 memory invariants", criterion_memory()),
    ];
    let bench = benchmark();
    let full = run_config(&bench, SEEDS[0], true, MemoryMode::IntraHier);
    results.push(("7 end-to-end toy training", criterion_training(&full)));
    results.push(("8 ablation trend", criterion_ablation(&bench, full)));
    results.push(("9 dataset tooling", criterion_dataset(&bench)));

    let empirical = ["7 end-to-end toy training", "8 ablation trend"];
    let (mut failed, mut contract_failed) = (0, 0);
    for (name, o) in &results {
        println!("criterion {name}: {} ({})", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.passed);
        contract_failed += usize::from(!o.passed && !empirical.contains(name));
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if contract_failed > 0 {
        std::process::exit(1);
    }
}
