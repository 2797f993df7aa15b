use candle_core::{DType, Tensor};

use super::encoders::StructureCode;
use super::layers::{leaky_relu, resize_bilinear, sigmoid, softmax_channels, Conv2d};
use super::params::{Init, Mode, ParamSet};
use crate::error::{Error, Result};

/// Pixel-wise classifier: 3x3 conv, relu, 1x1 conv to class scores, bilinear upsample.
#[derive(Debug, Clone)]
pub struct Classifier {
    hidden: Conv2d,
    out: Conv2d,
    num_classes: usize,
    params: ParamSet,
}

impl Classifier {
    pub const GROUP: &'static str = "T";

    pub fn new(common_width: usize, num_classes: usize, seed: u64, dtype: DType) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config("a classifier needs at least two classes".into()));
        }
        let mut init = Init::new(Self::GROUP, seed, dtype);
        let hidden_width = (common_width / 2).max(8);
        let hidden = Conv2d::new(&mut init, "hidden", common_width, hidden_width, 3, 1, 1, true)?;
        let out = Conv2d::new(&mut init, "out", hidden_width, num_classes, 1, 1, 0, true)?;
        Ok(Self {
            hidden,
            out,
            num_classes,
            params: init.finish(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Class scores (logits) of shape `(batch, C, height, width)`.
    pub fn forward(&self, z_c: &StructureCode, out_size: (usize, usize), mode: Mode) -> Result<Tensor> {
        let h = self.hidden.forward(z_c.tensor(), mode)?.relu()?;
        let logits = self.out.forward(&h, mode)?;
        resize_bilinear(&logits, out_size.0, out_size.1)
    }

    pub fn probabilities(&self, z_c: &StructureCode, out_size: (usize, usize), mode: Mode) -> Result<Tensor> {
        softmax_channels(&self.forward(z_c, out_size, mode)?)
    }
}

/// Downsampling factor of both patch discriminators.
pub const PATCH_STRIDE: usize = 16;

/// Patch discriminator: four 4x4 stride-2 convolutions with leaky relu in between.
///
/// `Sigmoid` heads score segmentation maps (log loss); `Raw` heads score images (least squares).
#[derive(Debug, Clone)]
pub struct PatchDiscriminator {
    convs: Vec<Conv2d>,
    head: Head,
    in_channels: usize,
    params: ParamSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Sigmoid,
    Raw,
}

impl PatchDiscriminator {
    pub const SEG_GROUP: &'static str = "D_seg";
    pub const IMG_SOURCE_GROUP: &'static str = "D_img_s";
    pub const IMG_TARGET_GROUP: &'static str = "D_img_t";

    pub fn new(group: &str, in_channels: usize, width: usize, head: Head, seed: u64, dtype: DType) -> Result<Self> {
        let mut init = Init::new(group, seed, dtype);
        let widths = [in_channels, width, width * 2, width * 2, 1];
        let convs = (0..4)
            .map(|i| Conv2d::new(&mut init, &format!("conv{i}"), widths[i], widths[i + 1], 4, 2, 1, true))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            convs,
            head,
            in_channels,
            params: init.finish(),
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// `(batch, 1, H/16, W/16)` patch scores.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.in_channels {
            return Err(Error::shape(format!(
                "discriminator expects {} channels, got {c}",
                self.in_channels
            )));
        }
        if h % PATCH_STRIDE != 0 || w % PATCH_STRIDE != 0 {
            return Err(Error::shape(format!(
                "discriminator input {h}x{w} is not divisible by {PATCH_STRIDE}"
            )));
        }
        let mut y = match self.head {
            Head::Raw => (x - 0.5)?,
            Head::Sigmoid => x.clone(),
        };
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            y = conv.forward(&y, mode)?;
            if i < last {
                y = leaky_relu(&y, 0.2)?;
            }
        }
        match self.head {
            Head::Sigmoid => sigmoid(&y),
            Head::Raw => Ok(y),
        }
    }
}
