//! Layered experiment configuration: defaults < profile preset < file < flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use semidense::corruption::CorruptionConfig;
use semidense::data::{DatasetProfile, SceneConfig};
use semidense::metrics::MetricProfile;
use semidense::network::{ModelConfig, SizeTier, Variant};
use semidense::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

pub const VERSION: &str = concat!("semidense ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub variant: Variant,
    pub size_tier: SizeTier,
    pub decoder_channels: usize,
    pub decoder_levels: usize,
    pub mask_channels: usize,
    pub min_depth: f64,
    pub max_depth: f64,
    pub align_to_sensor: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let base = ModelConfig::new(Variant::DmLrn, SizeTier::T0);
        Self {
            variant: base.variant,
            size_tier: base.size_tier,
            decoder_channels: base.decoder_channels,
            decoder_levels: base.decoder_levels,
            mask_channels: base.mask_channels,
            min_depth: base.min_depth,
            max_depth: base.max_depth,
            align_to_sensor: base.align_to_sensor,
        }
    }
}

impl ModelSection {
    pub fn build(&self, variant: Variant, tier: SizeTier, seed: u64) -> ModelConfig {
        let mut c = ModelConfig::new(variant, tier)
            .with_seed(seed)
            .with_depth_range(self.min_depth, self.max_depth);
        c.decoder_channels = self.decoder_channels;
        c.decoder_levels = self.decoder_levels;
        c.mask_channels = self.mask_channels;
        c.align_to_sensor = self.align_to_sensor;
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Base seed; propagated to scene generation, initialization, training
    /// and corruption.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub profile: DatasetProfile,
    pub scene: SceneConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub metrics: MetricProfile,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let scene = SceneConfig::default();
        let mut train = TrainConfig::default();
        train.pairs.corruption = CorruptionConfig::for_resolution(scene.height, scene.width);
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            profile: DatasetProfile::synthetic(),
            scene,
            model: ModelSection::default(),
            train,
            metrics: MetricProfile::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn model_config(&self) -> ModelConfig {
        self.model.build(self.model.variant, self.model.size_tier, self.seed)
    }

    /// Writes the resolved configuration and the toolkit version into `dir`.
    pub fn dump(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join("config.toml"), toml::to_string_pretty(self)?)?;
        fs::write(dir.join("VERSION"), format!("{VERSION}\n"))?;
        Ok(())
    }
}

fn apply_preset(cfg: &mut ExperimentConfig, name: &str) -> Result<()> {
    cfg.profile = name.parse::<DatasetProfile>()?;
    if name.eq_ignore_ascii_case("kitti") {
        cfg.model.max_depth = 80.0;
        cfg.metrics.max_depth = 80.0;
    }
    Ok(())
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub profile: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub fn resolve(o: &Overrides) -> Result<ExperimentConfig> {
    let file: Option<toml::Value> = match &o.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            Some(toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?)
        }
        None => None,
    };
    let preset = o.profile.clone().or_else(|| {
        file.as_ref()
            .and_then(|f| f.get("preset"))
            .and_then(|v| v.as_str())
            .map(str::to_string)
    });
    let mut cfg = ExperimentConfig::default();
    if let Some(p) = &preset {
        apply_preset(&mut cfg, p)?;
    }
    if let Some(mut f) = file {
        if let Some(t) = f.as_table_mut() {
            t.remove("preset");
        }
        let mut value = toml::Value::try_from(&cfg)?;
        merge(&mut value, f);
        cfg = value.try_into().context("config file does not match the expected schema")?;
    }
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &o.out {
        cfg.out_dir = out.clone();
    }
    // One base seed drives every stochastic component.
    cfg.scene.rng_seed = cfg.seed;
    cfg.train.seed = cfg.seed;
    cfg.train.pairs.corruption.rng_seed = cfg.seed;
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &ExperimentConfig) -> Result<()> {
    cfg.scene.validate()?;
    cfg.train.validate()?;
    cfg.profile.validate()?;
    cfg.model_config().validate()?;
    if cfg.metrics.max_depth <= 0.0 {
        bail!("metrics.max_depth must be positive");
    }
    Ok(())
}
