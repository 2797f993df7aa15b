use candle_core::{DType, Tensor};

use super::encoders::{StructureCode, TextureCode};
use super::layers::{sigmoid, BatchNorm2d, Conv2d, ConvTranspose2d, ResBlock};
use super::params::{Init, Mode, ParamSet};
use crate::error::{Error, Result};
use crate::types::{Domain, TEXTURE_DIM};

/// Shared decoder: `[z_c, z_p broadcast, one-hot flag broadcast]` -> conv -> three residual
/// blocks -> three stride-2 deconvolutions -> sigmoid.
#[derive(Debug, Clone)]
pub struct Decoder {
    entry: Conv2d,
    entry_bn: BatchNorm2d,
    res: Vec<ResBlock>,
    up: Vec<(ConvTranspose2d, Option<BatchNorm2d>)>,
    common_width: usize,
    params: ParamSet,
}

impl Decoder {
    pub const GROUP: &'static str = "D";

    pub fn new(common_width: usize, width: usize, seed: u64, dtype: DType) -> Result<Self> {
        if width < 4 {
            return Err(Error::Config(format!("decoder width {width} is too small")));
        }
        let mut init = Init::new(Self::GROUP, seed, dtype);
        let c_in = common_width + TEXTURE_DIM + 2;
        let entry = Conv2d::new(&mut init, "entry", c_in, width, 3, 1, 1, false)?;
        let entry_bn = BatchNorm2d::new(&mut init, "entry_bn", width)?;
        let res = (0..3)
            .map(|i| ResBlock::new(&mut init, &format!("res{i}"), width))
            .collect::<Result<Vec<_>>>()?;
        let widths = [width, width / 2, width / 4];
        let mut up = Vec::new();
        for i in 0..3 {
            let last = i == 2;
            let c_out = if last { 3 } else { widths[i + 1] };
            let deconv = ConvTranspose2d::new(&mut init, &format!("up{i}"), widths[i], c_out, 4, 2, 1, last)?;
            let bn = if last {
                None
            } else {
                Some(BatchNorm2d::new(&mut init, &format!("up{i}_bn"), c_out)?)
            };
            up.push((deconv, bn));
        }
        Ok(Self {
            entry,
            entry_bn,
            res,
            up,
            common_width,
            params: init.finish(),
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Decodes with one domain flag for the whole batch.
    pub fn forward(&self, z_c: &StructureCode, z_p: &TextureCode, flag: Domain, mode: Mode) -> Result<Tensor> {
        let b = z_c.tensor().dims()[0];
        self.forward_flags(z_c, z_p, &vec![flag; b], mode)
    }

    /// Decodes with a per-sample domain flag.
    pub fn forward_flags(&self, z_c: &StructureCode, z_p: &TextureCode, flags: &[Domain], mode: Mode) -> Result<Tensor> {
        let (b, f, h, w) = z_c.tensor().dims4()?;
        let (bp, dp) = z_p.tensor().dims2()?;
        if b != bp || b != flags.len() {
            return Err(Error::shape(format!(
                "decoder batch mismatch: z_c {b}, z_p {bp}, flags {}",
                flags.len()
            )));
        }
        if f != self.common_width || dp != TEXTURE_DIM {
            return Err(Error::shape(format!(
                "decoder expects {} structure channels and {TEXTURE_DIM}-d texture codes, got {f} and {dp}",
                self.common_width
            )));
        }
        let dev = z_c.tensor().device();
        let dtype = z_c.tensor().dtype();
        let z_p_map = z_p.tensor().reshape((b, dp, 1, 1))?.broadcast_as((b, dp, h, w))?;
        let onehot: Vec<f64> = flags.iter().flat_map(|d| d.one_hot()).collect();
        let flag_map = Tensor::from_vec(onehot, (b, 2, 1, 1), dev)?
            .to_dtype(dtype)?
            .broadcast_as((b, 2, h, w))?;
        let x = Tensor::cat(&[z_c.tensor(), &z_p_map, &flag_map], 1)?;

        let mut y = self.entry_bn.forward(&self.entry.forward(&x, mode)?, mode)?.relu()?;
        for block in &self.res {
            y = block.forward(&y, mode)?;
        }
        for (deconv, bn) in &self.up {
            y = deconv.forward(&y, mode)?;
            if let Some(bn) = bn {
                y = bn.forward(&y, mode)?.relu()?;
            }
        }
        sigmoid(&y)
    }
}
