//! Deep-versus-shallow comparison under identical training conditions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{train, TrainConfig};
use crate::error::{Error, Result};
use crate::imagery::{split_dataset, AnnotatedSample};
use crate::netbuilder::{build_network, NetworkConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    pub deep: NetworkConfig,
    pub shallow: NetworkConfig,
    /// Shared by both variants; its seed is replaced per run.
    pub training: TrainConfig,
    pub seeds: Vec<u64>,
    pub train_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub variant: String,
    pub depth: usize,
    pub base_width: usize,
    pub parameters: usize,
    pub best_epoch: usize,
    pub best_val_iou: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    fn values<'a>(&'a self, variant: &'a str) -> impl Iterator<Item = &'a AblationRow> + 'a {
        self.rows.iter().filter(move |r| r.variant == variant)
    }

    pub fn mean(&self, variant: &str) -> f64 {
        let v: Vec<f64> = self.values(variant).map(|r| r.best_val_iou).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    /// Deep minus shallow best IoU for each seed.
    pub fn margins(&self) -> Vec<(u64, f64)> {
        self.values("deep")
            .filter_map(|d| {
                self.values("shallow")
                    .find(|s| s.seed == d.seed)
                    .map(|s| (d.seed, d.best_val_iou - s.best_val_iou))
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Train both variants on the same split for every seed; the seed drives
/// the split, the initialisation and the batch order.
pub fn run_depth_ablation(samples: &[AnnotatedSample], spec: &AblationSpec) -> Result<AblationTable> {
    if spec.seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    for cfg in [&spec.deep, &spec.shallow] {
        cfg.validate()?;
    }
    let mut table = AblationTable::default();
    for &seed in &spec.seeds {
        let (train_set, val_set) = split_dataset(samples, spec.train_fraction, seed)?;
        if val_set.is_empty() {
            return Err(Error::Config("ablation split left no validation samples".into()));
        }
        for (variant, cfg) in [("deep", spec.deep), ("shallow", spec.shallow)] {
            let net = build_network(cfg, seed)?;
            let parameters = net.parameter_count();
            let config = TrainConfig {
                seed,
                ..spec.training.clone()
            };
            let out = train(net, &train_set, &val_set, config)?;
            let best = out.best_val_iou.expect("validation set is non-empty");
            log::info!("ablation seed {seed} {variant}: best val IoU {best:.4} at epoch {}", out.best_epoch);
            table.rows.push(AblationRow {
                seed,
                variant: variant.into(),
                depth: cfg.depth,
                base_width: cfg.base_width,
                parameters,
                best_epoch: out.best_epoch,
                best_val_iou: best,
            });
        }
    }
    Ok(table)
}
