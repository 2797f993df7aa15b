//! Sub-networks, discriminators and the frozen perceptual extractor.
//!
//! Every network reads its parameters through a [`Mode`], so the same forward code
//! serves training, deterministic evaluation, and "frozen" use where the network
//! acts as a fixed function inside another network's loss.

mod decoder;
mod encoders;
mod extractor;
mod heads;
pub mod layers;
mod model;
mod params;

pub use decoder::Decoder;
pub use encoders::{CommonEncoder, PrivateEncoder, StructureCode, TextureCode, STRUCTURE_STRIDE};
pub use extractor::{ConvExtractor, FeatureExtractor, FeatureStack, NUM_TAPS, PROXY_VERSION, TAP_NAMES};
pub use heads::{Classifier, Head, PatchDiscriminator, PATCH_STRIDE};
pub use model::{argmax_labels, DiseModel, ModelConfig, Segmenter};
pub use params::{Init, Mode, ParamSet};
