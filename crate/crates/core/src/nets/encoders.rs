use candle_core::Tensor;

use super::layers::{leaky_relu, BatchNorm2d, Conv2d, Linear, ResBlock};
use super::params::{Init, Mode, ParamSet};
use crate::error::{Error, Result};
use crate::types::TEXTURE_DIM;

/// Output stride of the common encoder.
pub const STRUCTURE_STRIDE: usize = 8;

/// Domain-invariant structure code, `(batch, F_c, H/8, W/8)`.
#[derive(Debug, Clone)]
pub struct StructureCode(pub Tensor);

/// Domain-specific texture code, `(batch, 8)`.
#[derive(Debug, Clone)]
pub struct TextureCode(pub Tensor);

impl StructureCode {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn detach(&self) -> StructureCode {
        StructureCode(self.0.detach())
    }
}

impl TextureCode {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

/// Shared encoder: three stride-2 conv-bn-relu stages and a residual block.
#[derive(Debug, Clone)]
pub struct CommonEncoder {
    stages: Vec<(Conv2d, BatchNorm2d)>,
    res: ResBlock,
    width: usize,
    params: ParamSet,
}

impl CommonEncoder {
    pub const GROUP: &'static str = "E_c";

    pub fn new(width: usize, seed: u64, dtype: candle_core::DType) -> Result<Self> {
        if width < 4 {
            return Err(Error::Config(format!("common width {width} is too small")));
        }
        let mut init = Init::new(Self::GROUP, seed, dtype);
        let widths = [3, width / 4, width / 2, width];
        let mut stages = Vec::new();
        for i in 0..3 {
            stages.push((
                Conv2d::new(&mut init, &format!("stage{i}.conv"), widths[i], widths[i + 1], 3, 2, 1, false)?,
                BatchNorm2d::new(&mut init, &format!("stage{i}.bn"), widths[i + 1])?,
            ));
        }
        let res = ResBlock::new(&mut init, "res", width)?;
        Ok(Self {
            stages,
            res,
            width,
            params: init.finish(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<StructureCode> {
        let (_, c, h, w) = x.dims4()?;
        if c != 3 {
            return Err(Error::shape(format!("common encoder expects 3 channels, got {c}")));
        }
        if h % STRUCTURE_STRIDE != 0 || w % STRUCTURE_STRIDE != 0 {
            return Err(Error::shape(format!(
                "input {h}x{w} is not divisible by the encoder stride {STRUCTURE_STRIDE}"
            )));
        }
        let mut y = (x - 0.5)?;
        for (conv, bn) in &self.stages {
            y = bn.forward(&conv.forward(&y, mode)?, mode)?.relu()?;
        }
        Ok(StructureCode(self.res.forward(&y, mode)?))
    }
}

/// Private encoder: four stride-2 conv blocks, global average pooling, one linear layer.
#[derive(Debug, Clone)]
pub struct PrivateEncoder {
    blocks: Vec<Conv2d>,
    fc: Linear,
    params: ParamSet,
}

impl PrivateEncoder {
    pub fn new(group: &str, width: usize, seed: u64, dtype: candle_core::DType) -> Result<Self> {
        let mut init = Init::new(group, seed, dtype);
        let widths = [3, width / 2, width, width, width];
        let blocks = (0..4)
            .map(|i| Conv2d::new(&mut init, &format!("block{i}"), widths[i], widths[i + 1], 3, 2, 1, true))
            .collect::<Result<Vec<_>>>()?;
        let fc = Linear::new(&mut init, "fc", width, TEXTURE_DIM)?;
        Ok(Self {
            blocks,
            fc,
            params: init.finish(),
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<TextureCode> {
        let (_, c, _, _) = x.dims4()?;
        if c != 3 {
            return Err(Error::shape(format!("private encoder expects 3 channels, got {c}")));
        }
        let mut y = (x - 0.5)?;
        for conv in &self.blocks {
            y = leaky_relu(&conv.forward(&y, mode)?, 0.2)?;
        }
        let pooled = y.mean((2, 3))?;
        Ok(TextureCode(self.fc.forward(&pooled, mode)?))
    }
}
