//! The run configuration file: one TOML tree describing network, training,
//! data, ablation and tracking settings. Relative paths resolve against the
//! file's own directory.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use cropseg_core::netbuilder::NetworkConfig;
use cropseg_core::tracker::{ReportOptions, TrackConfig, DEFAULT_CAP};
use cropseg_core::trainer::{AblationSpec, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Where every output of the run goes.
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    /// Checkpoint and manifest name.
    #[serde(default = "default_tag")]
    pub tag: String,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default = "NetworkConfig::crop")]
    pub network: NetworkConfig,
    /// Omitted: paper defaults (or fine-tuning defaults for `finetune`).
    #[serde(default)]
    pub training: Option<TrainConfig>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub ablation: Option<AblationSpec>,
    #[serde(default)]
    pub tracking: TrackingConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

fn default_tag() -> String {
    "crop".into()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    /// Network initialisation.
    pub init: u64,
    /// Train/validation split.
    pub split: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory of image + polygon-annotation pairs.
    pub train_dir: Option<PathBuf>,
    /// Separate validation directory; otherwise `train_dir` is split.
    pub val_dir: Option<PathBuf>,
    pub train_fraction: f64,
    /// Polygon label to rasterize; `None` takes the first polygon.
    pub label: Option<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_dir: None,
            val_dir: None,
            train_fraction: 0.8,
            label: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingConfig {
    pub base_window: Option<usize>,
    pub use_d4: bool,
    pub threshold: f64,
    pub cap: f64,
    pub report: ReportOptions,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        let t = TrackConfig::default();
        Self {
            base_window: t.base_window,
            use_d4: t.use_d4,
            threshold: t.threshold,
            cap: DEFAULT_CAP,
            report: ReportOptions::default(),
        }
    }
}

impl TrackingConfig {
    pub fn track_config(&self) -> TrackConfig {
        TrackConfig {
            base_window: self.base_window,
            use_d4: self.use_d4,
            threshold: self.threshold,
            ..TrackConfig::default()
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config is valid")
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| anyhow!("invalid config {}: {}", path.display(), e.message()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        for p in [&mut self.data.train_dir, &mut self.data.val_dir].into_iter().flatten() {
            fix(p);
        }
    }

    /// `--seed` replaces every seed the run draws from.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seeds = Seeds { init: seed, split: seed };
        if let Some(t) = &mut self.training {
            t.seed = seed;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if let Some(t) = &self.training {
            t.validate()?;
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction <= 1.0) {
            bail!("data.train_fraction must be in (0, 1], got {}", self.data.train_fraction);
        }
        if !(self.tracking.cap > 0.0) {
            bail!("tracking.cap must be > 0, got {}", self.tracking.cap);
        }
        Ok(())
    }
}
