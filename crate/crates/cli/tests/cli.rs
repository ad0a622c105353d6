use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rvsd::dataset::{load_manifest, SplitName};
use rvsd::image::{Frame, GrayImage};
use rvsd::imageio::{read_mask, write_frame_png, write_gray_png};
use rvsd::model::{Checkpoint, Model, Vocabulary};
use rvsd::tsm::TraceRecord;
use serde_json::Value;

const SMALL: &str = r#"{
  "synth": {"n_videos": 4, "n_test": 2, "frames_per_video": 7, "width": 32, "height": 32},
  "model": {"d": 8, "heads": 2, "ffn_width": 16},
  "train": {"epochs": 2}
}"#;

fn rvsd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rvsd")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    data: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("config.json");
        fs::write(&config, SMALL).unwrap();
        let data = root.join("data");
        let out = rvsd(&["synth", "--config", s(&config), "--out", s(&data)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        Fixture { _dir: dir, root, config, data }
    }

    fn manifest(&self) -> PathBuf {
        self.data.join("manifest.json")
    }

    fn train(&self, name: &str, extra: &[&str]) -> PathBuf {
        let out_dir = self.root.join(name);
        let manifest = self.manifest();
        let mut args = vec!["train", "--config", s(&self.config), "--manifest", s(&manifest), "--out", s(&out_dir)];
        args.extend(extra);
        let out = rvsd(&args);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        out_dir
    }
}

#[test]
fn synth_validate_and_stats_agree() {
    let fx = Fixture::new();
    let summary = json(&fx.data.join("synth_summary.json"));
    assert!(fx.data.join("resolved_config.json").is_file());

    let out = rvsd(&["validate", "--manifest", s(&fx.manifest())]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("0 violations"));

    let stats_dir = fx.root.join("stats");
    let out = rvsd(&["stats", "--manifest", s(&fx.manifest()), "--out", s(&stats_dir)]);
    assert_eq!(code(&out), 0);
    let stats = json(&stats_dir.join("stats.json"));
    for key in ["records", "pairs", "min_words", "max_words"] {
        assert_eq!(stats[key], summary[key], "{key}");
    }
    assert_eq!(stats["videos"], summary["videos"]);
}

#[test]
fn corrupted_mask_fails_validation_with_listing() {
    let fx = Fixture::new();
    let m = load_manifest(&fx.manifest()).unwrap();
    let rec = &m.records[0];
    let target = m.resolve(&rec.frames[1].mask_path);
    let (w, h) = rvsd::imageio::dimensions(&target).unwrap();
    write_gray_png(&target, &GrayImage::new(w, h, vec![128; w * h]).unwrap()).unwrap();
    let out = rvsd(&["validate", "--manifest", s(&fx.manifest())]);
    assert_eq!(code(&out), 1);
    let text = stdout(&out);
    assert!(text.contains(&rec.record_id) && text.contains("NonBinaryMask"), "{text}");
}

#[test]
fn io_and_config_failures_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&rvsd(&["validate", "--manifest", s(&missing)])), 2);
    assert_eq!(code(&rvsd(&["stats", "--config", s(&missing), "--manifest", s(&missing)])), 2);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"model": {"d": 30}}"#).unwrap();
    assert_eq!(code(&rvsd(&["synth", "--config", s(&bad), "--out", s(dir.path())])), 1);
    fs::write(&bad, r#"{"unknown": true}"#).unwrap();
    assert_eq!(code(&rvsd(&["synth", "--config", s(&bad), "--out", s(dir.path())])), 1);
}

fn write_frames(dir: &Path) -> Vec<Frame> {
    fs::create_dir_all(dir).unwrap();
    let mut frames = Vec::new();
    for i in 0..3u8 {
        let mut f = Frame::filled(20, 16, [200, 190, 180]);
        for y in 4..12 {
            for x in (2 + 3 * i as usize)..(11 + 3 * i as usize) {
                f.set_pixel(x, y, [40 + 10 * i, 40, 45]);
            }
        }
        write_frame_png(&dir.join(format!("f{i}.png")), &f).unwrap();
        frames.push(f);
    }
    frames
}

#[test]
fn msa_writes_masks_overlays_and_fractions() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("frames");
    write_frames(&input);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&rvsd(&["msa", "--input", s(&input), "--out", s(&a)])), 0);
    assert_eq!(code(&rvsd(&["msa", "--input", s(&input), "--out", s(&b)])), 0);
    let summary = json(&a.join("summary.json"));
    let frames = summary["frames"].as_array().unwrap();
    assert_eq!(frames.len(), 3);
    for (i, f) in frames.iter().enumerate() {
        let mask = read_mask(&a.join("masks").join(format!("f{i}.png"))).unwrap();
        let expected = mask.count() as f64 / (mask.width() * mask.height()) as f64;
        assert_eq!(f["shadow_fraction"].as_f64().unwrap(), expected);
        assert!(mask.count() > 0);
        assert!(a.join("overlays").join(format!("f{i}.png")).is_file());
        for sub in ["masks", "overlays"] {
            let name = format!("f{i}.png");
            assert_eq!(fs::read(a.join(sub).join(&name)).unwrap(), fs::read(b.join(sub).join(&name)).unwrap());
        }
    }
    assert_eq!(fs::read(a.join("summary.json")).unwrap(), fs::read(b.join("summary.json")).unwrap());
}

#[test]
fn msa_reports_unreadable_frames() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("frames");
    write_frames(&input);
    fs::write(input.join("zz.png"), b"not an image").unwrap();
    let out_dir = dir.path().join("out");
    let out = rvsd(&["msa", "--input", s(&input), "--out", s(&out_dir)]);
    assert_ne!(code(&out), 0);
    let summary = json(&out_dir.join("summary.json"));
    assert_eq!(summary["frames"].as_array().unwrap().len(), 3);
    assert_eq!(summary["failures"][0]["file"], "zz.png");
}

#[test]
fn zero_learning_rate_keeps_initial_parameters() {
    let fx = Fixture::new();
    let out = fx.train("lr0", &["--lr", "0"]);
    let trained = Checkpoint::load(&out.join("checkpoint.json")).unwrap();
    let m = load_manifest(&fx.manifest()).unwrap();
    let exprs: Vec<&str> = m.records_in(SplitName::Train).iter().map(|r| r.expression.as_str()).collect();
    let init = Model::new(trained.config.clone(), Vocabulary::build(exprs)).unwrap();
    assert_eq!(trained.vocab, init.vocab);
    assert_eq!(trained.store.to_named(), init.store.to_named());
    let resolved = json(&out.join("resolved_config.json"));
    assert_eq!(resolved["train"]["optimizer"]["lr"], 0.0);
}

#[test]
fn training_is_deterministic_and_eval_writes_reports() {
    let fx = Fixture::new();
    let a = fx.train("a", &["--seed", "5"]);
    let b = fx.train("b", &["--seed", "5"]);
    let report = fs::read_to_string(a.join("train_report.jsonl")).unwrap();
    assert_eq!(report.lines().count(), 2);
    assert_eq!(report, fs::read_to_string(b.join("train_report.jsonl")).unwrap());
    assert_eq!(json(&a.join("resolved_config.json"))["model"]["seed"], 5);

    let ckpt = a.join("checkpoint.json");
    let eval = |name: &str, memory: &str| {
        let dir = fx.root.join(name);
        let out = rvsd(&[
            "eval", "--manifest", s(&fx.manifest()), "--checkpoint", s(&ckpt), "--memory", memory, "--out", s(&dir),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        dir
    };
    let hier = eval("eval_hier", "intra+hier");
    let off = eval("eval_off", "off");
    let table = fs::read_to_string(hier.join("metrics.txt")).unwrap();
    let header = table.lines().next().unwrap();
    let cols = ["P@0.5", "P@0.6", "P@0.7", "P@0.8", "P@0.9", "Overall", "Mean", "mAP"];
    let pos: Vec<usize> = cols.iter().map(|c| header.find(c).unwrap()).collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]), "{header}");
    let metrics = json(&hier.join("metrics.json"));
    assert_eq!(metrics["columns"].as_array().unwrap().len(), 8);

    let trace = |dir: &Path| -> Vec<TraceRecord> {
        fs::read_to_string(dir.join("trace.jsonl")).unwrap().lines().map(|l| TraceRecord::parse_line(l).unwrap()).collect()
    };
    let (th, to) = (trace(&hier), trace(&off));
    assert_eq!(th.len(), to.len());
    assert!(th.iter().any(|r| r.memory_read) && to.iter().all(|r| !r.memory_read));
    assert!(th.iter().zip(&to).any(|(x, y)| x.t_rep_norm != y.t_rep_norm));
}

#[test]
fn ground_truth_pass_through_scores_one() {
    let fx = Fixture::new();
    let dir = fx.root.join("gt");
    let out = rvsd(&["eval", "--manifest", s(&fx.manifest()), "--ground-truth", "--out", s(&dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = json(&dir.join("metrics.json"));
    for v in metrics["values"].as_array().unwrap() {
        assert_eq!(v.as_f64().unwrap(), 1.0);
    }
}

#[test]
fn eval_rejects_mismatched_checkpoint() {
    let fx = Fixture::new();
    let bad = fx.root.join("bad_ckpt.json");
    fs::write(&bad, r#"{"format": "something-else"}"#).unwrap();
    let out = rvsd(&["eval", "--manifest", s(&fx.manifest()), "--checkpoint", s(&bad), "--out", s(&fx.root.join("e"))]);
    assert_eq!(code(&out), 1);
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = rvsd(&["gradcheck", "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let cases = json(&dir.path().join("gradcheck.json"));
    assert!(cases.as_array().unwrap().iter().all(|c| c["report"]["passed"] == true));
}
