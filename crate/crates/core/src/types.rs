//! Data types shared by every stage of the pipeline.

use std::fmt;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label value marking a pixel that is excluded from losses and metrics.
pub const IGNORE_LABEL: u8 = 255;

/// Length of the texture code produced by the private encoders.
pub const TEXTURE_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub const ALL: [Domain; 2] = [Domain::Source, Domain::Target];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }

    pub fn other(self) -> Domain {
        match self {
            Domain::Source => Domain::Target,
            Domain::Target => Domain::Source,
        }
    }

    /// One-hot encoding fed to the decoder: source = (1, 0), target = (0, 1).
    pub fn one_hot(self) -> [f64; 2] {
        match self {
            Domain::Source => [1.0, 0.0],
            Domain::Target => [0.0, 1.0],
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" | "s" => Ok(Domain::Source),
            "target" | "t" => Ok(Domain::Target),
            other => Err(Error::Config(format!("unknown domain `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// A batch of RGB rasters laid out as `(batch, 3, height, width)` with values in [0, 1].
#[derive(Debug, Clone)]
pub struct ImageBatch {
    pub tensor: Tensor,
    pub domain: Domain,
}

impl ImageBatch {
    pub fn new(tensor: Tensor, domain: Domain) -> Result<Self> {
        let (_, c, _, _) = tensor.dims4()?;
        if c != 3 {
            return Err(Error::shape(format!("image batch needs 3 channels, got {c}")));
        }
        Ok(Self { tensor, domain })
    }

    pub fn batch(&self) -> usize {
        self.tensor.dims()[0]
    }

    pub fn height(&self) -> usize {
        self.tensor.dims()[2]
    }

    pub fn width(&self) -> usize {
        self.tensor.dims()[3]
    }
}

/// Per-pixel class indices for a batch, row-major `(batch, height, width)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(batch: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != batch * height * width {
            return Err(Error::shape(format!(
                "label data has {} entries, expected {batch}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            batch,
            height,
            width,
            data,
        })
    }

    pub fn filled(batch: usize, height: usize, width: usize, value: u8) -> Self {
        Self {
            batch,
            height,
            width,
            data: vec![value; batch * height * width],
        }
    }

    pub fn plane(&self, index: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.data[index * n..(index + 1) * n]
    }

    /// Stacks single-image maps of equal size into one batch.
    pub fn stack(maps: &[LabelMap]) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::shape("cannot stack zero label maps"))?;
        let mut data = Vec::with_capacity(maps.len() * first.data.len());
        let mut batch = 0;
        for m in maps {
            if m.height != first.height || m.width != first.width {
                return Err(Error::shape("label maps differ in size"));
            }
            batch += m.batch;
            data.extend_from_slice(&m.data);
        }
        LabelMap::new(batch, first.height, first.width, data)
    }

    /// Distinct non-ignore class ids, ascending.
    pub fn classes_present(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &v in &self.data {
            seen[v as usize] = true;
        }
        (0..=254u8).filter(|&c| seen[c as usize]).collect()
    }

    /// Nearest-neighbour upsampling by an integer factor (used for prediction maps only).
    pub fn upsample_nearest(&self, factor: usize) -> LabelMap {
        let (h, w) = (self.height * factor, self.width * factor);
        let mut data = Vec::with_capacity(self.batch * h * w);
        for b in 0..self.batch {
            let plane = self.plane(b);
            for y in 0..h {
                for x in 0..w {
                    data.push(plane[(y / factor) * self.width + x / factor]);
                }
            }
        }
        LabelMap {
            batch: self.batch,
            height: h,
            width: w,
            data,
        }
    }
}
