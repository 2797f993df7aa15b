//! Frozen perceptual feature extractor with five rectified taps at strides 1, 2, 4, 8, 16.
//!
//! The default weights are a fixed-seed random conv stack (`proxy-v1`), regenerated
//! bit-identically on every run. Pretrained weights in the same five-tap layout can be
//! loaded from a safetensors file with entries `tap{0..4}.weight` / `tap{0..4}.bias`.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

pub const NUM_TAPS: usize = 5;
pub const TAP_NAMES: [&str; NUM_TAPS] = ["relu1_1", "relu2_1", "relu3_1", "relu4_1", "relu5_1"];
pub const PROXY_VERSION: &str = "proxy-v1";
const PROXY_SEED: u64 = 0x7667_6731;
const PROXY_WIDTHS: [usize; NUM_TAPS] = [8, 16, 32, 32, 32];

/// Per-layer activations `ψ^(l)`, each `(batch, C_l, H_l, W_l)`.
#[derive(Debug, Clone)]
pub struct FeatureStack {
    pub layers: Vec<Tensor>,
}

impl FeatureStack {
    pub fn channels(&self, layer: usize) -> Result<usize> {
        Ok(self.layers[layer].dims4()?.1)
    }

    /// Splits a stack computed on a concatenated batch back into consecutive chunks.
    pub fn split(&self, sizes: &[usize]) -> Result<Vec<FeatureStack>> {
        let mut out: Vec<FeatureStack> = sizes.iter().map(|_| FeatureStack { layers: Vec::new() }).collect();
        for layer in &self.layers {
            let mut start = 0;
            for (i, &n) in sizes.iter().enumerate() {
                out[i].layers.push(layer.narrow(0, start, n)?);
                start += n;
            }
        }
        Ok(out)
    }
}

pub trait FeatureExtractor: Send + Sync {
    fn extract(&self, x: &Tensor) -> Result<FeatureStack>;
}

#[derive(Debug, Clone)]
pub struct ConvExtractor {
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
    version: String,
}

impl ConvExtractor {
    /// The fixed-seed proxy weights.
    pub fn proxy(dtype: DType) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(PROXY_SEED);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut c_in = 3;
        for &c_out in &PROXY_WIDTHS {
            let fan_in = (c_in * 9) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            let w: Vec<f64> = (0..c_out * c_in * 9).map(|_| normal.sample(&mut rng)).collect();
            let uniform = Uniform::new_inclusive(-0.05, 0.05);
            let b: Vec<f64> = (0..c_out).map(|_| uniform.sample(&mut rng)).collect();
            weights.push(Tensor::from_vec(w, (c_out, c_in, 3, 3), &Device::Cpu)?.to_dtype(dtype)?);
            biases.push(Tensor::from_vec(b, c_out, &Device::Cpu)?.to_dtype(dtype)?);
            c_in = c_out;
        }
        Ok(Self {
            weights,
            biases,
            version: PROXY_VERSION.to_string(),
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        Ok(Self {
            weights: self.weights.iter().map(|w| w.to_dtype(dtype)).collect::<candle_core::Result<_>>()?,
            biases: self.biases.iter().map(|b| b.to_dtype(dtype)).collect::<candle_core::Result<_>>()?,
            version: self.version.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = HashMap::new();
        for i in 0..NUM_TAPS {
            tensors.insert(format!("tap{i}.weight"), self.weights[i].to_dtype(DType::F32)?);
            tensors.insert(format!("tap{i}.bias"), self.biases[i].to_dtype(DType::F32)?);
        }
        let meta = HashMap::from([
            ("format".to_string(), "dise-extractor".to_string()),
            ("version".to_string(), self.version.clone()),
            ("taps".to_string(), TAP_NAMES.join(",")),
        ]);
        safetensors::serialize_to_file(tensors.iter().map(|(k, v)| (k.as_str(), v)), Some(meta), path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    /// Loads five-tap weights; tap `i` must map `C_{i-1}` channels to `C_i` with a 3x3 kernel.
    pub fn load(path: &Path, dtype: DType) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (_, meta) = safetensors::SafeTensors::read_metadata(&bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let version = meta
            .metadata()
            .as_ref()
            .and_then(|m| m.get("version").cloned())
            .unwrap_or_else(|| "external".to_string());
        let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut c_in = 3;
        for i in 0..NUM_TAPS {
            let w = tensors
                .get(&format!("tap{i}.weight"))
                .ok_or_else(|| Error::Checkpoint(format!("extractor file lacks tap{i}.weight")))?;
            let (c_out, ci, kh, kw) = w.dims4()?;
            if ci != c_in || kh != 3 || kw != 3 {
                return Err(Error::Checkpoint(format!(
                    "tap{i}.weight has shape {:?}, expected (_, {c_in}, 3, 3)",
                    w.dims()
                )));
            }
            let b = tensors
                .get(&format!("tap{i}.bias"))
                .cloned()
                .unwrap_or(Tensor::zeros(c_out, DType::F32, &Device::Cpu)?);
            weights.push(w.to_dtype(dtype)?);
            biases.push(b.to_dtype(dtype)?);
            c_in = c_out;
        }
        Ok(Self {
            weights,
            biases,
            version,
        })
    }
}

/// 2x2 max pooling as reshape + reduce: candle's own max-pool backward scales the
/// gradient by the tie fraction instead of dividing by it.
fn max_pool2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    Ok(x.reshape((b, c, h / 2, 2, w / 2, 2))?.max(5)?.max(3)?)
}

impl FeatureExtractor for ConvExtractor {
    fn extract(&self, x: &Tensor) -> Result<FeatureStack> {
        let (_, c, h, w) = x.dims4()?;
        if c != 3 {
            return Err(Error::shape(format!("extractor expects 3 channels, got {c}")));
        }
        if h % 16 != 0 || w % 16 != 0 {
            return Err(Error::shape(format!("extractor input {h}x{w} is not divisible by 16")));
        }
        let mut y = ((x - 0.45)? * 4.0)?;
        let mut layers = Vec::with_capacity(NUM_TAPS);
        for i in 0..NUM_TAPS {
            if i > 0 {
                y = max_pool2(&y)?;
            }
            let c_out = self.biases[i].dims()[0];
            y = y
                .conv2d(&self.weights[i], 1, 1, 1, 1)?
                .broadcast_add(&self.biases[i].reshape((1, c_out, 1, 1))?)?
                .relu()?;
            layers.push(y.clone());
        }
        Ok(FeatureStack { layers })
    }
}
