use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use log::info;
use serde::Serialize;

use rvsd::config::RunConfig;
use rvsd::dataset::{generate_synthetic, load_manifest, stats, validate, DatasetManifest, Sample, SplitName};
use rvsd::gradsuite::gradient_suite;
use rvsd::imageio::{read_frame, write_frame_png, write_mask_png};
use rvsd::metrics::MetricReport;
use rvsd::model::{evaluate, ground_truth_scores, prepare, train, Checkpoint, EvalOptions, Model, Vocabulary};
use rvsd::msa::msa_map;

use crate::{Cli, Command, SplitArg, Toggle};

/// Library errors caused by the filesystem map to 2, every other library
/// error to 1. Errors from this crate's own file handling are I/O.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<rvsd::Error>() {
            return if e.is_io() { 2 } else { 1 };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    Ok(cfg.resolved())
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    match &cli.out {
        Some(p) => {
            fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
            Ok(p)
        }
        None => bail!("--out is required for this command"),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn echo_config(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    info!("resolved config: {}", serde_json::to_string(cfg)?);
    if let Some(dir) = out {
        write_json(&dir.join("resolved_config.json"), cfg)?;
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<ExitCode> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Msa { input } => cmd_msa(cli, &cfg, input),
        Command::Synth => {
            let out = out_dir(cli)?;
            echo_config(&cfg, Some(out))?;
            let (_, summary) = generate_synthetic(&cfg.synth, out)?;
            write_json(&out.join("synth_summary.json"), &summary)?;
            println!(
                "{} videos ({} train / {} test), {} records, {} frames, {} pairs, {}-{} words",
                summary.videos,
                summary.train_videos,
                summary.test_videos,
                summary.records,
                summary.frames,
                summary.pairs,
                summary.min_words,
                summary.max_words
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { manifest } => {
            let out = cli.out.as_ref().map(|_| out_dir(cli)).transpose()?;
            echo_config(&cfg, out)?;
            let m = load_manifest(manifest)?;
            let report = validate(&m);
            for v in &report.violations {
                println!("{v}");
            }
            println!(
                "{} records, {} frames checked, {} violations",
                report.records_checked,
                report.frames_checked,
                report.violations.len()
            );
            if let Some(dir) = out {
                write_json(&dir.join("validation.json"), &report)?;
            }
            Ok(if report.is_clean() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Stats { manifest } => {
            let out = cli.out.as_ref().map(|_| out_dir(cli)).transpose()?;
            echo_config(&cfg, out)?;
            let s = stats(&load_manifest(manifest)?);
            println!("{}", serde_json::to_string_pretty(&s)?);
            if let Some(dir) = out {
                write_json(&dir.join("stats.json"), &s)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Train { manifest, epochs, lr } => {
            let mut cfg = cfg.clone();
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            if let Some(lr) = lr {
                cfg.train.optimizer.lr = *lr;
            }
            cfg.validate()?;
            cmd_train(cli, &cfg, manifest)
        }
        Command::Eval { manifest, checkpoint, split, msa, memory, ground_truth } => {
            let out = out_dir(cli)?;
            echo_config(&cfg, Some(out))?;
            let m = load_manifest(manifest)?;
            let samples = load_split(&m, *split)?;
            if *ground_truth {
                return cmd_eval_ground_truth(out, &samples);
            }
            let path = checkpoint.as_ref().expect("clap requires --checkpoint");
            let model = Checkpoint::load(path)?;
            let mut opts = EvalOptions::from_config(&model.config);
            if let Some(t) = msa {
                opts.msa = *t == Toggle::On;
            }
            if let Some(mode) = memory {
                opts.memory = *mode;
            }
            cmd_eval(out, &model, &samples, &opts)
        }
        Command::Gradcheck => {
            let out = cli.out.as_ref().map(|_| out_dir(cli)).transpose()?;
            echo_config(&cfg, out)?;
            let cases = gradient_suite(cfg.seed.unwrap_or(0))?;
            let mut failed = 0;
            for c in &cases {
                let status = if c.report.passed { "ok" } else { "FAIL" };
                println!("{status:<4} {:<40} max rel err {:.3e} (tol {:e})", c.name, c.report.max_rel_error, c.report.tol);
                failed += usize::from(!c.report.passed);
            }
            println!("{} cases, {failed} failed", cases.len());
            if let Some(dir) = out {
                write_json(&dir.join("gradcheck.json"), &cases)?;
            }
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}

#[derive(Serialize)]
struct MsaFrame {
    file: String,
    width: usize,
    height: usize,
    shadow_pixels: usize,
    shadow_fraction: f64,
}

#[derive(Serialize)]
struct MsaFailure {
    file: String,
    error: String,
}

#[derive(Serialize)]
struct MsaSummary {
    frames: Vec<MsaFrame>,
    failures: Vec<MsaFailure>,
}

fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry.with_context(|| format!("reading {}", dir.display()))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("png" | "ppm" | "pnm")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn cmd_msa(cli: &Cli, cfg: &RunConfig, input: &Path) -> Result<ExitCode> {
    let out = out_dir(cli)?;
    echo_config(cfg, Some(out))?;
    cfg.msa.validate()?;
    let mut summary = MsaSummary { frames: Vec::new(), failures: Vec::new() };
    let mut worst = 0u8;
    for path in list_frames(input)? {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let stem = path.file_stem().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let result = read_frame(&path).and_then(|frame| {
            let m = msa_map(&frame, &cfg.msa)?;
            write_mask_png(&out.join("masks").join(format!("{stem}.png")), &m.combined)?;
            write_frame_png(&out.join("overlays").join(format!("{stem}.png")), &m.weighted.to_frame())?;
            Ok(MsaFrame {
                file: name.clone(),
                width: frame.width(),
                height: frame.height(),
                shadow_pixels: m.combined.count(),
                shadow_fraction: m.shadow_fraction(),
            })
        });
        match result {
            Ok(f) => summary.frames.push(f),
            Err(e) => {
                eprintln!("{name}: {e}");
                worst = worst.max(if e.is_io() { 2 } else { 1 });
                summary.failures.push(MsaFailure { file: name, error: e.to_string() });
            }
        }
    }
    write_json(&out.join("summary.json"), &summary)?;
    println!("{} frames processed, {} failed", summary.frames.len(), summary.failures.len());
    Ok(ExitCode::from(worst))
}

fn load_split(m: &DatasetManifest, split: SplitArg) -> Result<Vec<Sample>> {
    let name = match split {
        SplitArg::Train => SplitName::Train,
        SplitArg::Test => SplitName::Test,
    };
    let samples = m.records_in(name).into_iter().map(|r| m.load_sample(r)).collect::<rvsd::Result<Vec<_>>>()?;
    if samples.is_empty() {
        bail!(rvsd::Error::Input(format!("{name:?} split has no records")));
    }
    Ok(samples)
}

fn cmd_train(cli: &Cli, cfg: &RunConfig, manifest: &Path) -> Result<ExitCode> {
    let out = out_dir(cli)?;
    echo_config(cfg, Some(out))?;
    let m = load_manifest(manifest)?;
    let samples = load_split(&m, SplitArg::Train)?;
    let vocab = Vocabulary::build(samples.iter().map(|s| s.record.expression.as_str()));
    let mut model = Model::new(cfg.model.clone(), vocab)?;
    info!("{} parameters, vocabulary of {}", model.store.scalar_count(), model.vocab.len());
    let data = prepare(&model, &samples, cfg.model.msa_enabled)?;
    let report_path = out.join("train_report.jsonl");
    let mut report = BufWriter::new(File::create(&report_path).with_context(|| format!("creating {}", report_path.display()))?);
    let result = train(&mut model, &data, &cfg.train, |e| {
        writeln!(report, "{}", serde_json::to_string(e)?)
            .and_then(|_| report.flush())
            .map_err(|err| rvsd::Error::Input(format!("writing {}: {err}", report_path.display())))
    });
    report.flush().with_context(|| format!("writing {}", report_path.display()))?;
    let report = result?;
    Checkpoint::save(&model, &out.join("checkpoint.json"))?;
    if let (Some(first), Some(last)) = (report.epochs.first(), report.epochs.last()) {
        println!("epoch 1 loss {:.5}, epoch {} loss {:.5}", first.mean_loss, last.epoch, last.mean_loss);
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct EvalFile<'a> {
    label: String,
    options: Option<EvalOptions>,
    columns: Vec<String>,
    values: Vec<f64>,
    report: &'a MetricReport,
}

fn write_metrics(out: &Path, label: String, options: Option<EvalOptions>, report: &MetricReport) -> Result<()> {
    let table = report.to_table(&label);
    print!("{table}");
    write_text(&out.join("metrics.txt"), &table)?;
    let file = EvalFile { label, options, columns: MetricReport::columns(), values: report.values(), report };
    write_json(&out.join("metrics.json"), &file)
}

fn cmd_eval_ground_truth(out: &Path, samples: &[Sample]) -> Result<ExitCode> {
    let report = MetricReport::from_scores(&ground_truth_scores(samples)?)?;
    write_metrics(out, "ground-truth".into(), None, &report)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(out: &Path, model: &Model, samples: &[Sample], opts: &EvalOptions) -> Result<ExitCode> {
    let data = prepare(model, samples, opts.msa)?;
    let ev = evaluate(model, &data, opts)?;
    let label = format!("msa={} memory={}", if opts.msa { "on" } else { "off" }, opts.memory.as_str());
    write_metrics(out, label, Some(*opts), &ev.report)?;
    let mut trace = String::new();
    for r in &ev.trace {
        trace.push_str(&r.to_line());
        trace.push('\n');
    }
    write_text(&out.join("trace.jsonl"), &trace)?;
    Ok(ExitCode::SUCCESS)
}
