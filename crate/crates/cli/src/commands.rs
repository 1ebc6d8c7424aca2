use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use cropseg_core::imagery::{
    crop_resize, load_dataset_dir, render_sequence, split_dataset, write_synthetic_dataset, write_tracking_crops, AnnotatedSample, CropWindow,
    RasterImage, SceneSpec, SequenceSpec,
};
use cropseg_core::netbuilder::{build_network, load_checkpoint};
use cropseg_core::plot::{Canvas, BLACK, RED};
use cropseg_core::predictor::{binarize, predict_averaged_with, render_overlay, Averaging, DEFAULT_ALPHA};
use cropseg_core::tracker::{
    clamp_outliers, load_manifest, read_track_csv, report as write_report, track_with, write_frame_artifacts,
    write_track_csv, FrameOutcome, ReportOptions, TrackConfig, TrackSeries,
};
use cropseg_core::trainer::{evaluate, run_depth_ablation, write_training_artifacts, TrainConfig, Trainer};

use crate::config::{RunConfig, TrackingConfig};
use crate::{EvalArgs, FinetuneArgs, ProbeArgs, ReportArgs, SegmentArgs, SynthArgs, SynthKind, TrackArgs, TrainArgs};

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.apply_seed(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_dir(dir: &Path, label: Option<&str>, side: usize) -> Result<Vec<AnnotatedSample>> {
    ensure!(dir.is_dir(), "dataset directory {} does not exist", dir.display());
    Ok(load_dataset_dir(dir, label, side)?)
}

/// Training and validation samples as the config describes them.
fn load_data(cfg: &RunConfig, side: usize) -> Result<(Vec<AnnotatedSample>, Vec<AnnotatedSample>)> {
    let Some(train_dir) = &cfg.data.train_dir else {
        bail!("data.train_dir is not set");
    };
    let label = cfg.data.label.as_deref();
    let samples = load_dir(train_dir, label, side)?;
    match &cfg.data.val_dir {
        Some(v) => Ok((samples, load_dir(v, label, side)?)),
        None => Ok(split_dataset(&samples, cfg.data.train_fraction, cfg.seeds.split)?),
    }
}

fn run_training(
    cfg: &RunConfig,
    out: &Path,
    net: cropseg_core::NetworkHandle,
    training: TrainConfig,
    train: &[AnnotatedSample],
    val: &[AnnotatedSample],
) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    eprintln!(
        "training {} parameters on {} samples ({} validation)",
        net.parameter_count(),
        train.len(),
        val.len()
    );
    let start = Instant::now();
    let mut trainer = Trainer::new(net, train, val, training)?;
    while !trainer.is_done() {
        if let Some(r) = trainer.run_epoch()? {
            eprintln!(
                "epoch {:4}  loss {:.4}  iou {:.4}  val iou {}  ({:.0}s)",
                r.epoch,
                r.train_loss,
                r.train_iou,
                r.val_iou.map_or("-".into(), |v| format!("{v:.4}")),
                start.elapsed().as_secs_f64()
            );
        }
    }
    let mut outcome = trainer.finish();
    let best = write_training_artifacts(out, &cfg.tag, &mut outcome, cfg.seeds.init, train, val)?;
    fs::write(out.join("config.toml"), toml::to_string(cfg)?)?;
    println!("best epoch: {}", outcome.best_epoch);
    if let Some(v) = outcome.best_val_iou {
        println!("best validation IoU: {v:.4}");
    }
    println!("checkpoint: {}", best.display());
    Ok(())
}

pub fn train(a: &TrainArgs, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(&a.config, seed)?;
    let out = a.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    let (tr, va) = load_data(&cfg, cfg.network.input_side)?;
    let net = build_network(cfg.network, cfg.seeds.init)?;
    let training = cfg.training.clone().unwrap_or_default();
    run_training(&cfg, &out, net, training, &tr, &va)
}

pub fn finetune(a: &FinetuneArgs, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(&a.config, seed)?;
    let out = a.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    let (tr, va) = load_data(&cfg, cfg.network.input_side)?;
    let training = cfg.training.clone().unwrap_or_else(TrainConfig::fine_tune);
    // Fails early on an architecture mismatch.
    let (net, meta) = load_checkpoint(&a.checkpoint, Some(&cfg.network))?;
    eprintln!("fine-tuning {} (epoch {})", meta.name, meta.epoch);
    run_training(&cfg, &out, net, training, &tr, &va)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let (net, meta) = load_checkpoint(&a.checkpoint, None)?;
    let samples = load_dir(&a.data, a.label.as_deref(), meta.config.input_side)?;
    let e = evaluate(&net, &samples, None)?;
    println!("samples: {}", samples.len());
    println!("mean IoU: {:.6}", e.mean_iou);
    println!("mean loss: {:.6}", e.mean_loss);
    if let Some(path) = &a.out {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sample", "iou", "loss"])?;
        for ((s, iou), loss) in samples.iter().zip(&e.ious).zip(&e.losses) {
            w.write_record([s.source_id.clone(), iou.to_string(), loss.to_string()])?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn ablate(a: &TrainArgs, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(&a.config, seed)?;
    let Some(spec) = &cfg.ablation else {
        bail!("config has no [ablation] section");
    };
    ensure!(
        spec.deep.input_side == spec.shallow.input_side,
        "ablation variants must share input_side"
    );
    let Some(dir) = &cfg.data.train_dir else {
        bail!("data.train_dir is not set");
    };
    let samples = load_dir(dir, cfg.data.label.as_deref(), spec.deep.input_side)?;
    let out = a.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    fs::create_dir_all(&out)?;
    let start = Instant::now();
    let table = run_depth_ablation(&samples, spec)?;
    table.write_csv(&out.join("ablation.csv"))?;
    for r in &table.rows {
        println!(
            "seed {:3}  {:8} depth {} width {:3}  params {:9}  best epoch {:4}  best val IoU {:.4}",
            r.seed, r.variant, r.depth, r.base_width, r.parameters, r.best_epoch, r.best_val_iou
        );
    }
    println!("mean deep: {:.4}  mean shallow: {:.4}", table.mean("deep"), table.mean("shallow"));
    for (s, m) in table.margins() {
        println!("margin seed {s}: {m:+.4}");
    }
    println!("wall time: {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}

pub fn segment(a: &SegmentArgs) -> Result<()> {
    ensure!(
        a.threshold > 0.0 && a.threshold <= 1.0,
        "threshold must be in (0, 1], got {}",
        a.threshold
    );
    let (net, _) = load_checkpoint(&a.checkpoint, None)?;
    let photo = RasterImage::load(&a.image)?;
    let side = net.config().input_side;
    let window = CropWindow::centered_square(photo.width(), photo.height());
    let (crop, _) = crop_resize(&photo, &window, side)?;
    let prob = predict_averaged_with(&net, &crop, !a.no_d4, Averaging::Probability)?;
    let mask = binarize(&prob, a.threshold);

    let dir = match &a.out {
        Some(d) => d.clone(),
        None => a.image.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    fs::create_dir_all(&dir)?;
    let stem = a.image.file_stem().unwrap_or_default().to_string_lossy();
    prob.save_png16(dir.join(format!("{stem}_prob.png")))?;
    mask.save(dir.join(format!("{stem}_mask.png")))?;
    render_overlay(&crop, &mask, DEFAULT_ALPHA)?.save(dir.join(format!("{stem}_overlay.png")))?;
    println!("foreground pixels: {}", mask.count());
    println!("network input: {side}x{side} from a {0}x{0} center square", window.side);
    println!("forward passes: {}", net.forward_samples());
    Ok(())
}

pub fn track(a: &TrackArgs) -> Result<()> {
    let mut tc = match &a.config {
        Some(p) => RunConfig::load(p)?.tracking,
        None => TrackingConfig::default(),
    };
    if let Some(w) = a.window {
        tc.base_window = Some(w);
    }
    if a.no_d4 {
        tc.use_d4 = false;
    }
    if let Some(t) = a.threshold {
        tc.threshold = t;
    }
    if let Some(c) = a.cap {
        tc.cap = c;
    }
    ensure!(tc.cap > 0.0, "cap must be > 0");

    let (net, _) = load_checkpoint(&a.checkpoint, None)?;
    let photos = load_manifest(&a.manifest)?;
    fs::create_dir_all(&a.out)?;
    let start = Instant::now();
    let config: TrackConfig = tc.track_config();
    let series = track_with(
        &net,
        &photos,
        a.center,
        &config,
        |e| RasterImage::load(&e.path),
        |_, outcome| match outcome {
            FrameOutcome::Measured(m) => write_frame_artifacts(&a.out, m).map(drop),
            FrameOutcome::Unreadable(_) => Ok(()),
        },
    )?;
    write_track_csv(&a.out.join("raw.csv"), &series.records)?;
    let clamped = clamp_outliers(&series, tc.cap)?;
    write_track_csv(&a.out.join("clamped.csv"), &clamped.records)?;
    write_report(&clamped, &a.out.join("report"), &tc.report)?;
    fs::write(a.out.join("track.json"), serde_json::to_string_pretty(&series)?)?;

    let low = series.records.iter().filter(|r| r.flags.low_confidence).count();
    let capped = clamped.records.iter().filter(|r| r.flags.clamped).count();
    println!("frames processed: {}", series.records.len());
    println!("flagged: {} (low confidence {low}, clamped {capped})", low + capped);
    println!("base window: {} px", series.base_window);
    println!("wall time: {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let records = read_track_csv(&a.csv)?;
    let series = TrackSeries {
        records,
        manifest: Vec::new(),
        config: TrackConfig::default(),
        base_window: 0,
    };
    let opts = ReportOptions {
        night_spans: a.night.clone(),
        highlight_spans: a.highlight.clone(),
        ..ReportOptions::default()
    };
    let files = write_report(&series, &a.out, &opts)?;
    for f in files.all() {
        println!("{}", f.display());
    }
    Ok(())
}

pub fn synth(a: &SynthArgs, seed: u64) -> Result<()> {
    match a.kind {
        SynthKind::Scenes | SynthKind::Hard => {
            let spec = if a.kind == SynthKind::Hard {
                SceneSpec::hard(a.side)
            } else {
                SceneSpec::at_side(a.side)
            };
            write_synthetic_dataset(&a.out, &spec, a.count, seed)?;
            println!("wrote {} scenes to {}", a.count, a.out.display());
        }
        SynthKind::Crops => {
            write_tracking_crops(&a.out, &SequenceSpec::default(), a.side, a.count, seed)?;
            println!("wrote {} crops to {}", a.count, a.out.display());
        }
        SynthKind::Sequence => {
            let spec = SequenceSpec {
                frames: a.count,
                ..SequenceSpec::default()
            };
            let frames = render_sequence(&spec, seed)?;
            fs::create_dir_all(&a.out)?;
            let mut manifest = csv::Writer::from_path(a.out.join("manifest.csv"))?;
            manifest.write_record(["photo_id", "path"])?;
            let mut truth = csv::Writer::from_path(a.out.join("truth.csv"))?;
            truth.write_record(["photo_id", "cx", "cy", "area", "mask_area"])?;
            for (i, f) in frames.iter().enumerate() {
                let name = format!("frame_{:04}.png", i + 1);
                f.image.save(a.out.join(&name))?;
                let id = (i + 1).to_string();
                manifest.write_record([id.as_str(), name.as_str()])?;
                truth.write_record([
                    id,
                    f.true_centroid.0.to_string(),
                    f.true_centroid.1.to_string(),
                    f.true_area.to_string(),
                    f.mask.count().to_string(),
                ])?;
            }
            manifest.flush()?;
            truth.flush()?;
            let c = frames[0].true_centroid;
            println!("wrote {} frames to {}", frames.len(), a.out.display());
            println!("fruit starts at {:.1},{:.1}", c.0, c.1);
        }
    }
    Ok(())
}

const RAMP: &[u8] = b" .:-=+*#%@";

pub fn probe(a: &ProbeArgs) -> Result<()> {
    ensure!(a.grid > 0, "grid spacing must be positive");
    let photo = RasterImage::load(&a.image)?;
    let (w, h) = (photo.width(), photo.height());
    let luma = |x: usize, y: usize| {
        let [r, g, b] = photo.pixel(x, y);
        0.299 * r + 0.587 * g + 0.114 * b
    };

    // ASCII: one character per cell, 64 columns wide.
    let cols = 64.min(w);
    let cell = w.div_ceil(cols);
    let rows = h.div_ceil(cell * 2);
    println!("{w}x{h} photo, one character = {cell}x{} pixels", cell * 2);
    for r in 0..rows {
        let y = (r * cell * 2 + cell).min(h - 1);
        let line: String = (0..cols)
            .map(|c| {
                let x = (c * cell + cell / 2).min(w - 1);
                let v = luma(x, y).clamp(0.0, 1.0);
                RAMP[((v * (RAMP.len() - 1) as f32).round()) as usize] as char
            })
            .collect();
        println!("{:6} |{line}", r * cell * 2);
    }
    let ruler: String = (0..cols).map(|c| if c % 8 == 0 { '|' } else { ' ' }).collect();
    println!("       {ruler}");
    let labels: String = (0..cols)
        .step_by(8)
        .map(|c| format!("{:<8}", c * cell))
        .collect();
    println!("       {labels}");

    if let Some(out) = &a.out {
        let scale = (w.max(h) as f64 / 1024.0).max(1.0);
        let (pw, ph) = ((w as f64 / scale) as u32, (h as f64 / scale) as u32);
        let mut canvas = Canvas::new(pw, ph);
        for y in 0..ph {
            for x in 0..pw {
                let p = photo.pixel(
                    ((x as f64 * scale) as usize).min(w - 1),
                    ((y as f64 * scale) as usize).min(h - 1),
                );
                canvas.put(x as i64, y as i64, image::Rgb(p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)));
            }
        }
        for gx in (0..w).step_by(a.grid) {
            let x = (gx as f64 / scale) as i64;
            canvas.line((x, 0), (x, ph as i64 - 1), RED);
            canvas.text(x + 2, 2, &gx.to_string(), BLACK);
        }
        for gy in (0..h).step_by(a.grid) {
            let y = (gy as f64 / scale) as i64;
            canvas.line((0, y), (pw as i64 - 1, y), RED);
            canvas.text(2, y + 2, &gy.to_string(), BLACK);
        }
        canvas.save(out)?;
        println!("grid image: {}", PathBuf::from(out).display());
    }
    Ok(())
}
