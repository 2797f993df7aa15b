use std::path::PathBuf;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::decoder::Decoder;
use super::encoders::{CommonEncoder, PrivateEncoder, StructureCode, TextureCode};
use super::extractor::ConvExtractor;
use super::heads::{Classifier, Head, PatchDiscriminator};
use super::params::{Mode, ParamSet};
use crate::error::{Error, Result};
use crate::types::{Domain, LabelMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Channel count `F_c` of the structure code.
    pub common_width: usize,
    pub private_width: usize,
    pub decoder_width: usize,
    pub disc_width: usize,
    pub init_seed: u64,
    /// `f32` for training, `f64` for gradient checks.
    pub dtype: String,
    /// Optional five-tap extractor weights; empty selects the built-in proxy.
    pub extractor_weights: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            common_width: 64,
            private_width: 32,
            decoder_width: 32,
            disc_width: 16,
            init_seed: 0,
            dtype: "f32".into(),
            extractor_weights: String::new(),
        }
    }
}

impl ModelConfig {
    pub fn dtype(&self) -> Result<DType> {
        match self.dtype.as_str() {
            "f32" => Ok(DType::F32),
            "f64" => Ok(DType::F64),
            other => Err(Error::ConfigKey {
                key: "model.dtype".into(),
                reason: format!("unsupported dtype `{other}` (use f32 or f64)"),
            }),
        }
    }
}

/// All sub-networks. Parameter groups are disjoint; the extractor has none.
pub struct DiseModel {
    pub common: CommonEncoder,
    pub private_source: PrivateEncoder,
    pub private_target: PrivateEncoder,
    pub decoder: Decoder,
    pub classifier: Classifier,
    pub seg_disc: PatchDiscriminator,
    pub img_disc_source: PatchDiscriminator,
    pub img_disc_target: PatchDiscriminator,
    pub extractor: ConvExtractor,
    pub num_classes: usize,
}

impl DiseModel {
    pub fn new(config: &ModelConfig, num_classes: usize) -> Result<Self> {
        let dtype = config.dtype()?;
        let seed = config.init_seed;
        let extractor = if config.extractor_weights.is_empty() {
            ConvExtractor::proxy(dtype)?
        } else {
            ConvExtractor::load(&PathBuf::from(&config.extractor_weights), dtype)?
        };
        Ok(Self {
            common: CommonEncoder::new(config.common_width, seed, dtype)?,
            private_source: PrivateEncoder::new("E_p_s", config.private_width, seed, dtype)?,
            private_target: PrivateEncoder::new("E_p_t", config.private_width, seed, dtype)?,
            decoder: Decoder::new(config.common_width, config.decoder_width, seed, dtype)?,
            classifier: Classifier::new(config.common_width, num_classes, seed, dtype)?,
            seg_disc: PatchDiscriminator::new(PatchDiscriminator::SEG_GROUP, num_classes, config.disc_width, Head::Sigmoid, seed, dtype)?,
            img_disc_source: PatchDiscriminator::new(PatchDiscriminator::IMG_SOURCE_GROUP, 3, config.disc_width, Head::Raw, seed, dtype)?,
            img_disc_target: PatchDiscriminator::new(PatchDiscriminator::IMG_TARGET_GROUP, 3, config.disc_width, Head::Raw, seed, dtype)?,
            extractor,
            num_classes,
        })
    }

    pub fn private(&self, domain: Domain) -> &PrivateEncoder {
        match domain {
            Domain::Source => &self.private_source,
            Domain::Target => &self.private_target,
        }
    }

    pub fn image_disc(&self, domain: Domain) -> &PatchDiscriminator {
        match domain {
            Domain::Source => &self.img_disc_source,
            Domain::Target => &self.img_disc_target,
        }
    }

    /// Every parameter group in checkpoint order.
    pub fn groups(&self) -> [&ParamSet; 8] {
        [
            self.common.params(),
            self.private_source.params(),
            self.private_target.params(),
            self.decoder.params(),
            self.classifier.params(),
            self.seg_disc.params(),
            self.img_disc_source.params(),
            self.img_disc_target.params(),
        ]
    }

    pub fn group(&self, name: &str) -> Option<&ParamSet> {
        self.groups().into_iter().find(|g| g.group() == name)
    }

    pub fn encode(&self, x: &Tensor, domain: Domain, mode: Mode) -> Result<(StructureCode, TextureCode)> {
        Ok((self.common.forward(x, mode)?, self.private(domain).forward(x, mode)?))
    }

    /// Structure from `structure_img`, texture from `texture_img`, decoded with the texture's flag.
    pub fn translate(&self, structure_img: &Tensor, texture_img: &Tensor, texture_domain: Domain) -> Result<Tensor> {
        let z_c = self.common.forward(structure_img, Mode::EVAL)?;
        let z_p = self.private(texture_domain).forward(texture_img, Mode::EVAL)?;
        self.decoder.forward(&z_c, &z_p, texture_domain, Mode::EVAL)
    }

    /// Eval-mode class scores at input resolution.
    pub fn segment_scores(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        let z_c = self.common.forward(x, Mode::EVAL)?;
        self.classifier.forward(&z_c, (h, w), Mode::EVAL)
    }
}

/// Anything that maps an image batch to a label map.
pub trait Segmenter {
    fn predict(&self, x: &Tensor) -> Result<LabelMap>;
}

impl Segmenter for DiseModel {
    fn predict(&self, x: &Tensor) -> Result<LabelMap> {
        argmax_labels(&self.segment_scores(x)?)
    }
}

/// Per-pixel argmax over dimension 1 of `(batch, C, H, W)` scores.
pub fn argmax_labels(scores: &Tensor) -> Result<LabelMap> {
    let (b, _, h, w) = scores.dims4()?;
    let idx: Vec<u32> = scores.argmax(1)?.flatten_all()?.to_vec1()?;
    LabelMap::new(b, h, w, idx.into_iter().map(|v| v as u8).collect())
}
