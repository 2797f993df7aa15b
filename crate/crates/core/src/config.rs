//! Run configuration: built-in defaults < TOML file < dotted `section.key` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{GenConfig, LoaderOptions};
use crate::error::{Error, Result};
use crate::losses::{LayerWeights, LossWeights};
use crate::nets::ModelConfig;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "DISE_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub root: String,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub train_height: usize,
    pub train_width: usize,
    pub crop_height: usize,
    pub crop_width: usize,
    pub eval_height: usize,
    pub eval_width: usize,
    /// Images per domain per step.
    pub batch_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        let gen = GenConfig::default();
        let opts = LoaderOptions::default();
        Self {
            root: "data/toy".into(),
            seed: 0,
            height: gen.height,
            width: gen.width,
            num_classes: gen.num_classes,
            min_objects: gen.min_objects,
            max_objects: gen.max_objects,
            n_train: 400,
            n_val: 50,
            train_height: opts.train_size[0],
            train_width: opts.train_size[1],
            crop_height: opts.crop_size[0],
            crop_width: opts.crop_size[1],
            eval_height: opts.eval_size[0],
            eval_width: opts.eval_size[1],
            batch_size: 2,
        }
    }
}

impl DataConfig {
    pub fn generator(&self) -> GenConfig {
        GenConfig {
            height: self.height,
            width: self.width,
            num_classes: self.num_classes,
            min_objects: self.min_objects,
            max_objects: self.max_objects,
        }
    }

    pub fn loader_options(&self) -> LoaderOptions {
        LoaderOptions {
            train_size: [self.train_height, self.train_width],
            crop_size: [self.crop_height, self.crop_width],
            eval_size: [self.eval_height, self.eval_width],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayerWeightsConfig {
    pub rec: LayerWeights,
    pub str: LayerWeights,
    pub tex: LayerWeights,
}

impl Default for LayerWeightsConfig {
    fn default() -> Self {
        Self {
            rec: LayerWeights::rec(),
            str: LayerWeights::structure(),
            tex: LayerWeights::texture(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    /// Momentum SGD for the common encoder and classifier.
    pub sgd_lr: f64,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    /// Adam for the decoder.
    pub decoder_lr: f64,
    /// Adam for the private encoders and all discriminators.
    pub others_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            sgd_lr: 2.5e-4,
            sgd_momentum: 0.9,
            weight_decay: 5e-4,
            decoder_lr: 1e-3,
            others_lr: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.99,
            adam_eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub max_iters: usize,
    pub power: f64,
    /// Evaluate on target val every this many iterations; 0 disables.
    pub eval_interval: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            power: 0.9,
            eval_interval: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub out_dir: String,
    /// Seeds both domain loaders.
    pub seed: u64,
    /// Re-encode a detached `x̂_s2t` for the label-transfer term.
    pub detach_label_transfer: bool,
    /// Nearest 2x upsampling of predictions before scoring.
    pub upsample_predictions: bool,
    pub eval_batch: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: "runs/dise".into(),
            seed: 0,
            detach_label_transfer: true,
            upsample_predictions: false,
            eval_batch: 10,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss_weights: LossWeights,
    pub layer_weights: LayerWeightsConfig,
    pub optim: OptimConfig,
    pub schedule: ScheduleConfig,
    pub run: RunConfig,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Value = text
            .parse::<toml::Table>()
            .map(toml::Value::Table)
            .map_err(|e| Error::Config(format!("invalid config document: {e}")))?;
        check_known_keys(&value, &Config::default().to_value(), "")?;
        let config: Config = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config always serializes")
    }

    fn to_value(&self) -> toml::Value {
        toml::Value::try_from(self).expect("config always serializes")
    }

    /// Sets `section.key` from a string; the value is parsed as a TOML literal and
    /// falls back to a bare string.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut value = self.to_value();
        let (section, field) = key.split_once('.').ok_or_else(|| Error::ConfigKey {
            key: key.into(),
            reason: "expected `section.key`".into(),
        })?;
        let unknown = || Error::ConfigKey {
            key: key.into(),
            reason: "no such config key".into(),
        };
        let slot = value
            .get_mut(section)
            .and_then(|s| s.get_mut(field))
            .ok_or_else(unknown)?;
        *slot = coerce(slot, parse_literal(raw)).ok_or_else(|| Error::ConfigKey {
            key: key.into(),
            reason: format!("cannot use `{raw}` here (expected {})", slot.type_str()),
        })?;
        let updated: Config = value.try_into().map_err(|e: toml::de::Error| Error::ConfigKey {
            key: key.into(),
            reason: e.message().to_string(),
        })?;
        *self = updated;
        Ok(())
    }

    /// Defaults, then the optional file, then each override in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut config = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        for (k, v) in overrides {
            config.set(k, v)?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Config file named by [`CONFIG_ENV`], if set.
    pub fn env_path() -> Option<PathBuf> {
        std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.generator().validate()?;
        self.data.loader_options().validate()?;
        self.loss_weights.validate()?;
        for (name, w) in [("rec", &self.layer_weights.rec), ("str", &self.layer_weights.str), ("tex", &self.layer_weights.tex)] {
            w.validate().map_err(|e| Error::ConfigKey {
                key: format!("layer_weights.{name}"),
                reason: e.to_string(),
            })?;
        }
        self.model.dtype()?;
        if self.data.batch_size == 0 {
            return Err(Error::ConfigKey {
                key: "data.batch_size".into(),
                reason: "must be positive".into(),
            });
        }
        if self.schedule.power <= 0.0 {
            return Err(Error::ConfigKey {
                key: "schedule.power".into(),
                reason: "must be positive".into(),
            });
        }
        let [ch, cw] = [self.data.crop_height, self.data.crop_width];
        let [eh, ew] = [self.data.eval_height, self.data.eval_width];
        if ch % 16 != 0 || cw % 16 != 0 || eh % 16 != 0 || ew % 16 != 0 {
            return Err(Error::Config(format!(
                "crop {ch}x{cw} and eval {eh}x{ew} sizes must be divisible by 16"
            )));
        }
        Ok(())
    }
}

fn check_known_keys(given: &toml::Value, known: &toml::Value, prefix: &str) -> Result<()> {
    if let (Some(g), Some(k)) = (given.as_table(), known.as_table()) {
        for (key, v) in g {
            let path = if prefix.is_empty() {
                key.clone()
            } else {
                format!("{prefix}.{key}")
            };
            match k.get(key) {
                Some(kv) if kv.is_table() => check_known_keys(v, kv, &path)?,
                Some(_) => {}
                None => {
                    return Err(Error::ConfigKey {
                        key: path,
                        reason: "no such config key".into(),
                    })
                }
            }
        }
    }
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn coerce(existing: &toml::Value, new: toml::Value) -> Option<toml::Value> {
    use toml::Value as V;
    match (existing, new) {
        (V::Float(_), V::Integer(i)) => Some(V::Float(i as f64)),
        (V::String(_), V::String(s)) => Some(V::String(s)),
        (V::String(_), other) => Some(V::String(other.to_string())),
        (e, n) if std::mem::discriminant(e) == std::mem::discriminant(&n) => Some(n),
        _ => None,
    }
}

/// The four λ masks of the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Only the source segmentation term.
    SourceOnly,
    /// Source segmentation plus output-space adversarial alignment.
    SegmapAdapt,
    /// Everything except label transfer.
    NoLabelTransfer,
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::SourceOnly,
        Ablation::SegmapAdapt,
        Ablation::NoLabelTransfer,
        Ablation::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::SourceOnly => "source-only",
            Ablation::SegmapAdapt => "segmap-adapt",
            Ablation::NoLabelTransfer => "no-label-transfer",
            Ablation::Full => "full",
        }
    }

    /// Row label used in result tables.
    pub fn title(self) -> &'static str {
        match self {
            Ablation::SourceOnly => "Source Only",
            Ablation::SegmapAdapt => "Seg-map Adaptation",
            Ablation::NoLabelTransfer => "DISE w/o Label Transfer",
            Ablation::Full => "DISE",
        }
    }

    pub fn apply(self, w: &LossWeights) -> LossWeights {
        let mut out = *w;
        match self {
            Ablation::SourceOnly => {
                out = LossWeights::zero();
                out.seg_source = w.seg_source;
            }
            Ablation::SegmapAdapt => {
                out = LossWeights::zero();
                out.seg_source = w.seg_source;
                out.seg_adv = w.seg_adv;
            }
            Ablation::NoLabelTransfer => out.seg_s2t = 0.0,
            Ablation::Full => {}
        }
        out
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation `{s}`")))
    }
}
