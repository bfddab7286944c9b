use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::info;

use cellprep_core::data::load_image;
use cellprep_core::gradcheck::pipeline_check_config;
use cellprep_core::train::{check_classes, Model};
use cellprep_core::{
    ablate, argmax_labels, evaluate, export_filters, holdout_split, load_dataset, op_suite,
    pipeline_check, resume, synth_dataset, write_dataset, AblationReport, CheckResult, Checkpoint,
    ClassColormap, EpochRecord, TrainOutcome,
};

use crate::settings::Settings;
use crate::{AblateArgs, Cli, Command, EvalArgs, GradcheckArgs, PredictArgs, SynthArgs, TrainArgs};

pub fn run(cli: &Cli) -> Result<()> {
    let settings = Settings::load(&cli.global)?;
    let out = cli.global.out_dir.as_path();
    match &cli.command {
        Command::Synth(a) => synth(a, settings, out),
        Command::Train(a) => train(a, settings, out),
        Command::Eval(a) => eval(a, out),
        Command::Predict(a) => predict(a, out),
        Command::ExportFilters(a) => filters(a, out),
        Command::Ablate(a) => ablation(a, settings, out),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn synth(a: &SynthArgs, mut s: Settings, out: &Path) -> Result<()> {
    let spec = &mut s.synth;
    if let Some(v) = a.size {
        spec.size = v;
    }
    if let Some(v) = a.cells {
        spec.n_cells = v;
    }
    if let Some(v) = a.contrast {
        spec.contrast = v;
    }
    if let Some(v) = a.noise {
        spec.noise_sigma = v;
    }
    spec.validate()?;
    let samples = synth_dataset(spec, a.n)?;
    write_dataset(out, &samples, &ClassColormap::default())?;
    info!(
        "wrote {} synthetic pairs to {}",
        samples.len(),
        out.display()
    );
    Ok(())
}

fn train(a: &TrainArgs, mut s: Settings, out: &Path) -> Result<()> {
    a.flags.apply(&mut s.train)?;
    let (samples, cmap) = load_dataset(&a.data)?;
    let (train_idx, val_idx) = holdout_split(samples.len(), a.val, s.train.seed)?;
    let start = match &a.resume {
        Some(p) => {
            let mut ck = Checkpoint::load(p)?;
            if let Some(e) = a.flags.epochs {
                ck.config.epochs = e;
            }
            ck
        }
        None => Checkpoint::init(&s.train)?,
    };
    check_classes(start.config.num_classes(), &cmap)?;
    create_dir(out)?;
    write(&out.join("config.toml"), &start.config.to_toml())?;
    info!(
        "training on {} images ({} validation) from epoch {} to {}",
        train_idx.len(),
        val_idx.len(),
        start.epoch,
        start.config.epochs
    );
    let mut log = String::new();
    let TrainOutcome { best, last, .. } =
        resume(start, &samples, &train_idx, &val_idx, |r: &EpochRecord| {
            let line = r.to_kv();
            info!("{line}");
            log.push_str(&line);
            log.push('\n');
        })?;
    let log_path = out.join("train_log.txt");
    let mut previous = if a.resume.is_some() {
        fs::read_to_string(&log_path).unwrap_or_default()
    } else {
        String::new()
    };
    previous.push_str(&log);
    write(&log_path, &previous)?;
    best.save(&out.join("checkpoint.bin"))?;
    last.save(&out.join("last.bin"))?;
    info!(
        "best epoch {} saved to {}",
        best.epoch,
        out.join("checkpoint.bin").display()
    );
    Ok(())
}

fn eval(a: &EvalArgs, out: &Path) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let (samples, cmap) = load_dataset(&a.data)?;
    check_classes(ck.model.num_classes(), &cmap)?;
    let all: Vec<usize> = (0..samples.len()).collect();
    let report = evaluate(&ck.model, &samples, &all, ck.config.batch)?;
    let names = cmap.names();
    create_dir(out)?;
    write(&out.join("metrics.csv"), &report.to_csv(&names))?;
    print!("{}", report.to_kv(&names));
    Ok(())
}

/// `input` itself, or the image files directly inside it, sorted.
fn input_images(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(input).with_context(|| format!("reading {}", input.display()))? {
        let p = entry?.path();
        let ext = p
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if p.is_file()
            && matches!(
                ext.as_deref(),
                Some("png" | "tif" | "tiff" | "jpg" | "jpeg" | "bmp")
            )
        {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        bail!("no images found in {}", input.display());
    }
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

fn colormap(a: &PredictArgs, classes: usize) -> Result<ClassColormap> {
    let cmap = match &a.colormap {
        Some(p) => ClassColormap::load(p)?,
        None => ClassColormap::default(),
    };
    check_classes(classes, &cmap)?;
    Ok(cmap)
}

fn predict(a: &PredictArgs, out: &Path) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let cmap = colormap(a, ck.model.num_classes())?;
    create_dir(out)?;
    for path in input_images(&a.input)? {
        let img = load_image(&path)?;
        let (h, w) = (img.shape()[1], img.shape()[2]);
        let logits = ck.model.predict_logits(&img.reshape([1, 1, h, w])?)?;
        let dst = out.join(format!("{}_mask.png", stem(&path)));
        cmap.encode(&argmax_labels(&logits)?, 0)?
            .save(&dst)
            .with_context(|| format!("writing {}", dst.display()))?;
        info!("{} -> {}", path.display(), dst.display());
    }
    Ok(())
}

fn filters(a: &PredictArgs, out: &Path) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let Model::Pipeline(pipeline) = &ck.model else {
        bail!(
            "{} holds a baseline model, which has no translation filters",
            a.checkpoint.display()
        );
    };
    let names = colormap(a, pipeline.num_classes())?.names();
    for path in input_images(&a.input)? {
        let written = export_filters(pipeline, &load_image(&path)?, &stem(&path), out, &names)?;
        info!("{}: wrote {} files", path.display(), written.len());
    }
    Ok(())
}

fn runs_csv(report: &AblationReport) -> String {
    let mut s = String::from("arm,seed,fold,split_hash,best_epoch,miou,mdice\n");
    for r in &report.runs {
        let _ = writeln!(
            s,
            "{},{},{},{:016x},{},{},{}",
            r.arm.name(),
            r.seed,
            r.fold,
            r.split_hash,
            r.best_epoch,
            r.test.miou,
            r.test.mdice
        );
    }
    s
}

fn ablation(a: &AblateArgs, mut s: Settings, out: &Path) -> Result<()> {
    a.flags.apply(&mut s.train)?;
    let ab = &mut s.ablation;
    if let Some(v) = a.folds {
        ab.folds = v;
    }
    if let Some(v) = a.val {
        ab.val = v;
    }
    if let Some(v) = &a.seeds {
        ab.seeds = v.clone();
    }
    if let Some(v) = a.threads {
        ab.threads = v;
    }
    let (samples, names) = match &a.data {
        Some(dir) => {
            let (samples, cmap) = load_dataset(dir)?;
            check_classes(s.train.num_classes(), &cmap)?;
            (samples, cmap.names())
        }
        None => {
            s.synth.validate()?;
            (
                synth_dataset(&s.synth, a.synth)?,
                ClassColormap::default().names(),
            )
        }
    };
    let t0 = Instant::now();
    let report = ablate(&s.train, &s.ablation, &samples, &names, |r| {
        info!(
            "{} seed {} fold {}: mIoU {:.4} (best epoch {}) [{:.0}s]",
            r.arm.name(),
            r.seed,
            r.fold,
            r.test.miou,
            r.best_epoch,
            t0.elapsed().as_secs_f64()
        );
    })?;
    create_dir(out)?;
    write(&out.join("ablation.csv"), &report.to_csv())?;
    write(&out.join("runs.csv"), &runs_csv(&report))?;
    print!("{}", report.to_table());
    Ok(())
}

fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    let mut results: Vec<CheckResult> = Vec::new();
    for seed in 0..a.seeds {
        results.extend(op_suite(seed)?);
    }
    if !a.ops_only {
        results.push(pipeline_check(0, pipeline_check_config())?);
    }
    let mut failed = 0;
    for r in &results {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        if !r.passed() {
            failed += 1;
        }
        println!(
            "{:<20} max_rel_err {:.3e} (tol {:.0e}) {verdict}",
            r.name, r.report.max_rel_err, r.tolerance
        );
    }
    if failed > 0 {
        bail!("{failed} of {} gradient checks failed", results.len());
    }
    println!("all {} gradient checks passed", results.len());
    Ok(())
}
