//! Files written by a training run: curves, plots, checkpoints, manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{TrainConfig, TrainOutcome, TrainingRecord};
use crate::error::{Error, Result};
use crate::imagery::AnnotatedSample;
use crate::netbuilder::{checkpoint_name, save_checkpoint, NetworkConfig};
use crate::plot::{LineChart, Series, BLUE, ORANGE};

/// SHA-256 over every sample's id, pixels and mask, in order.
pub fn dataset_digest(samples: &[AnnotatedSample]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        h.update(s.source_id.as_bytes());
        h.update((s.image.width() as u64).to_le_bytes());
        h.update((s.image.height() as u64).to_le_bytes());
        for v in s.image.as_planar() {
            h.update(v.to_le_bytes());
        }
        h.update(s.mask.values());
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tag: String,
    pub network: NetworkConfig,
    pub training: TrainConfig,
    pub init_seed: u64,
    pub train_samples: usize,
    pub val_samples: usize,
    pub train_digest: String,
    pub val_digest: String,
    pub best_epoch: usize,
    pub best_val_iou: Option<f64>,
    pub best_checkpoint: String,
    pub created: String,
}

/// Curves as `epoch,train_loss,val_loss,train_iou,val_iou`; missing
/// validation values are left empty.
pub fn write_curves(path: &Path, records: &[TrainingRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_curves(path: &Path) -> Result<Vec<TrainingRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::csv(path, e)))
        .collect()
}

fn curve_chart(records: &[TrainingRecord], title: &str, y_label: &str, pick: fn(&TrainingRecord) -> (f64, Option<f64>)) -> LineChart {
    let mut chart = LineChart::new(title, "EPOCH", y_label);
    let train: Vec<(f64, f64)> = records.iter().map(|r| (r.epoch as f64, pick(r).0)).collect();
    let val: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| pick(r).1.map(|v| (r.epoch as f64, v)))
        .collect();
    chart.series.push(Series::line("train", train, BLUE));
    if !val.is_empty() {
        chart.series.push(Series::line("validation", val, ORANGE));
    }
    chart
}

fn write_plots(dir: &Path, records: &[TrainingRecord]) -> Result<Vec<PathBuf>> {
    let half = &records[records.len() / 2..];
    let loss = |r: &TrainingRecord| (r.train_loss, r.val_loss);
    let iou = |r: &TrainingRecord| (r.train_iou, r.val_iou);
    let mut out = Vec::new();
    for (name, recs, title, label, pick) in [
        ("loss.png", records, "LOSS", "LOSS", loss as fn(&TrainingRecord) -> _),
        ("iou.png", records, "IOU", "IOU", iou),
        ("loss_last_half.png", half, "LOSS (LAST HALF)", "LOSS", loss),
        ("iou_last_half.png", half, "IOU (LAST HALF)", "IOU", iou),
    ] {
        let path = dir.join(name);
        curve_chart(recs, title, label, pick).save(&path, 800, 500)?;
        out.push(path);
    }
    Ok(out)
}

/// Write curves (CSV and PNG), the best and final checkpoints, and the run
/// manifest into `dir`. Returns the best checkpoint path.
pub fn write_training_artifacts(
    dir: &Path,
    tag: &str,
    outcome: &mut TrainOutcome,
    init_seed: u64,
    train_set: &[AnnotatedSample],
    val_set: &[AnnotatedSample],
) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_curves(&dir.join("curves.csv"), &outcome.records)?;
    if !outcome.records.is_empty() {
        write_plots(dir, &outcome.records)?;
    }
    let ckpt_dir = dir.join("checkpoints");
    let best = save_checkpoint(&mut outcome.best, &ckpt_dir, tag, outcome.best_epoch, outcome.best_val_iou)?;
    let last_epoch = outcome.records.last().map_or(outcome.best_epoch, |r| r.epoch);
    let last_iou = outcome.records.last().and_then(|r| r.val_iou);
    save_checkpoint(&mut outcome.last, &ckpt_dir, &format!("{tag}_last"), last_epoch, last_iou)?;

    let manifest = RunManifest {
        tag: tag.into(),
        network: *outcome.best.config(),
        training: outcome.config.clone(),
        init_seed,
        train_samples: train_set.len(),
        val_samples: val_set.len(),
        train_digest: dataset_digest(train_set),
        val_digest: dataset_digest(val_set),
        best_epoch: outcome.best_epoch,
        best_val_iou: outcome.best_val_iou,
        best_checkpoint: checkpoint_name(tag, outcome.best_epoch),
        created: chrono::Local::now().to_rfc3339(),
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(best)
}
