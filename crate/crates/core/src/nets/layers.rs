use candle_core::{Tensor, Var, D};

use super::params::{Init, Mode};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(init: &mut Init, name: &str, c_in: usize, c_out: usize, kernel: usize, stride: usize, padding: usize, bias: bool) -> Result<Self> {
        let fan_in = (c_in * kernel * kernel) as f64;
        let weight = init.normal(&format!("{name}.weight"), &[c_out, c_in, kernel, kernel], (2.0 / fan_in).sqrt())?;
        let bias = if bias {
            Some(init.constant(&format!("{name}.bias"), &[c_out], 0.0)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        // Trailing rows/columns the kernel never reaches are cut off first: the output is
        // unchanged, and candle's conv backward assumes equal remainders in both dims.
        let k = self.weight.dims()[2];
        let (_, _, h, w) = x.dims4()?;
        let trim = |n: usize| (n + 2 * self.padding).saturating_sub(k) % self.stride;
        let x = x.narrow(2, 0, h - trim(h))?.narrow(3, 0, w - trim(w))?;
        let y = x.conv2d(&mode.read(&self.weight), self.padding, self.stride, 1, 1)?;
        add_channel_bias(y, self.bias.as_ref(), mode)
    }
}

/// Transposed convolution; kernel layout `(c_in, c_out, k, k)`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
}

impl ConvTranspose2d {
    pub fn new(init: &mut Init, name: &str, c_in: usize, c_out: usize, kernel: usize, stride: usize, padding: usize, bias: bool) -> Result<Self> {
        let fan_in = (c_in * kernel * kernel / (stride * stride)).max(1) as f64;
        let weight = init.normal(&format!("{name}.weight"), &[c_in, c_out, kernel, kernel], (2.0 / fan_in).sqrt())?;
        let bias = if bias {
            Some(init.constant(&format!("{name}.bias"), &[c_out], 0.0)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let y = x.conv_transpose2d(&mode.read(&self.weight), self.padding, 0, self.stride, 1)?;
        add_channel_bias(y, self.bias.as_ref(), mode)
    }
}

fn add_channel_bias(y: Tensor, bias: Option<&Var>, mode: Mode) -> Result<Tensor> {
    match bias {
        Some(b) => {
            let c = b.dims()[0];
            Ok(y.broadcast_add(&mode.read(b).reshape((1, c, 1, 1))?)?)
        }
        None => Ok(y),
    }
}

/// Per-channel normalization over `(batch, height, width)`.
///
/// Train mode normalizes with batch statistics and folds them into the running
/// estimates (momentum 0.1, unbiased variance); eval mode uses the running estimates.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    gamma: Var,
    beta: Var,
    running_mean: Var,
    running_var: Var,
    channels: usize,
}

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

impl BatchNorm2d {
    pub fn new(init: &mut Init, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: init.constant(&format!("{name}.gamma"), &[channels], 1.0)?,
            beta: init.constant(&format!("{name}.beta"), &[channels], 0.0)?,
            running_mean: init.buffer(&format!("{name}.running_mean"), &[channels], 0.0)?,
            running_var: init.buffer(&format!("{name}.running_var"), &[channels], 1.0)?,
            channels,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let c = self.channels;
        let (mean, var) = if mode.train {
            let mean = x.mean_keepdim((0, 2, 3))?;
            let centered = x.broadcast_sub(&mean)?;
            let var = centered.sqr()?.mean_keepdim((0, 2, 3))?;
            let (b, _, h, w) = x.dims4()?;
            let n = (b * h * w) as f64;
            let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            let new_mean = ((self.running_mean.as_tensor() * (1.0 - BN_MOMENTUM))?
                + (mean.detach().reshape(c)? * BN_MOMENTUM)?)?;
            let new_var = ((self.running_var.as_tensor() * (1.0 - BN_MOMENTUM))?
                + (var.detach().reshape(c)? * (BN_MOMENTUM * unbiased))?)?;
            self.running_mean.set(&new_mean)?;
            self.running_var.set(&new_var)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().detach().reshape((1, c, 1, 1))?,
                self.running_var.as_tensor().detach().reshape((1, c, 1, 1))?,
            )
        };
        let normed = x.broadcast_sub(&mean)?.broadcast_div(&(var + BN_EPS)?.sqrt()?)?;
        let gamma = mode.read(&self.gamma).reshape((1, c, 1, 1))?;
        let beta = mode.read(&self.beta).reshape((1, c, 1, 1))?;
        Ok(normed.broadcast_mul(&gamma)?.broadcast_add(&beta)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    pub fn new(init: &mut Init, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let bound = 1.0 / (d_in as f64).sqrt();
        Ok(Self {
            weight: init.uniform(&format!("{name}.weight"), &[d_out, d_in], bound)?,
            bias: init.uniform(&format!("{name}.bias"), &[d_out], bound)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let w = mode.read(&self.weight);
        Ok(x.matmul(&w.t()?)?.broadcast_add(&mode.read(&self.bias))?)
    }
}

/// conv-bn-relu-conv-bn plus identity skip, then relu.
#[derive(Debug, Clone)]
pub struct ResBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
}

impl ResBlock {
    pub fn new(init: &mut Init, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(init, &format!("{name}.conv1"), channels, channels, 3, 1, 1, false)?,
            bn1: BatchNorm2d::new(init, &format!("{name}.bn1"), channels)?,
            conv2: Conv2d::new(init, &format!("{name}.conv2"), channels, channels, 3, 1, 1, false)?,
            bn2: BatchNorm2d::new(init, &format!("{name}.bn2"), channels)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = self.bn1.forward(&self.conv1.forward(x, mode)?, mode)?.relu()?;
        let h = self.bn2.forward(&self.conv2.forward(&h, mode)?, mode)?;
        Ok((h + x)?.relu()?)
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}

/// Softmax over dimension 1 of a `(batch, C, H, W)` tensor.
pub fn softmax_channels(x: &Tensor) -> Result<Tensor> {
    let shifted = x.broadcast_sub(&x.max_keepdim(1)?.detach())?;
    let e = shifted.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(1)?)?)
}

/// Log-softmax over dimension 1 of a `(batch, C, H, W)` tensor.
pub fn log_softmax_channels(x: &Tensor) -> Result<Tensor> {
    let shifted = x.broadcast_sub(&x.max_keepdim(1)?.detach())?;
    let lse = shifted.exp()?.sum_keepdim(1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// Log-softmax over the last dimension.
pub fn log_softmax_last(x: &Tensor) -> Result<Tensor> {
    let shifted = x.broadcast_sub(&x.max_keepdim(D::Minus1)?.detach())?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// `(dst, src)` matrix of half-pixel bilinear interpolation weights with edge clamping.
pub fn bilinear_matrix(src: usize, dst: usize) -> Vec<f64> {
    let mut m = vec![0.0; dst * src];
    let scale = src as f64 / dst as f64;
    for d in 0..dst {
        let pos = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (pos.floor() as usize).min(src - 1);
        let i1 = (i0 + 1).min(src - 1);
        let f = pos - i0 as f64;
        m[d * src + i0] += 1.0 - f;
        m[d * src + i1] += f;
    }
    m
}

/// Differentiable bilinear resize of `(batch, C, h, w)` to `(batch, C, height, width)`.
pub fn resize_bilinear(x: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if (h, w) == (height, width) {
        return Ok(x.clone());
    }
    let dev = x.device();
    // (h, height) and (w, width): right-multiplication matrices.
    let rows = Tensor::from_vec(bilinear_matrix(h, height), (height, h), dev)?
        .to_dtype(x.dtype())?
        .t()?
        .contiguous()?;
    let cols = Tensor::from_vec(bilinear_matrix(w, width), (width, w), dev)?
        .to_dtype(x.dtype())?
        .t()?
        .contiguous()?;
    let n = b * c;
    let y = x
        .reshape((n, h, w))?
        .transpose(1, 2)?
        .contiguous()?
        .reshape((n * w, h))?
        .matmul(&rows)?;
    let y = y
        .reshape((n, w, height))?
        .transpose(1, 2)?
        .contiguous()?
        .reshape((n * height, w))?
        .matmul(&cols)?;
    Ok(y.reshape((b, c, height, width))?)
}
