//! In-memory RGB rasters, PNG persistence and the resize/crop geometry used by the loader.

use std::io::Cursor;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::{GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::types::LabelMap;

/// Row-major `height x width x 3` image with channel values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::shape(format!(
                "raster data has {} values, expected {height}x{width}x3",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn channel_means(&self) -> [f64; 3] {
        let mut acc = [0f64; 3];
        for px in self.data.chunks_exact(3) {
            for c in 0..3 {
                acc[c] += px[c] as f64;
            }
        }
        let n = (self.height * self.width) as f64;
        acc.map(|v| v / n)
    }

    /// Quantizes to 8 bits per channel.
    pub fn to_rgb8(&self) -> RgbImage {
        let bytes = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches dimensions")
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let data = img.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
        Self {
            height: img.height() as usize,
            width: img.width() as usize,
            data,
        }
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let mut out = Cursor::new(Vec::new());
        self.to_rgb8()
            .write_to(&mut out, ImageFormat::Png)
            .expect("png encoding into memory cannot fail");
        out.into_inner()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode_png()).map_err(|e| Error::io(path, e))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    /// Bilinear resize with half-pixel centres and edge clamping.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Raster {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let ys = bilinear_taps(self.height, height);
        let xs = bilinear_taps(self.width, width);
        let mut data = Vec::with_capacity(height * width * 3);
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let p00 = self.pixel(y0, x0);
                let p01 = self.pixel(y0, x1);
                let p10 = self.pixel(y1, x0);
                let p11 = self.pixel(y1, x1);
                for c in 0..3 {
                    let top = p00[c] * (1.0 - fx) + p01[c] * fx;
                    let bot = p10[c] * (1.0 - fx) + p11[c] * fx;
                    data.push(top * (1.0 - fy) + bot * fy);
                }
            }
        }
        Raster {
            height,
            width,
            data,
        }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Raster> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::shape(format!(
                "crop {height}x{width}@({top},{left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * 3);
        for y in top..top + height {
            let start = (y * self.width + left) * 3;
            data.extend_from_slice(&self.data[start..start + width * 3]);
        }
        Ok(Raster {
            height,
            width,
            data,
        })
    }

    /// Channel-first tensor of shape `(3, height, width)`.
    pub fn to_chw(&self) -> Vec<f32> {
        let n = self.height * self.width;
        let mut out = vec![0f32; 3 * n];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            out[i] = px[0];
            out[n + i] = px[1];
            out[2 * n + i] = px[2];
        }
        out
    }

    pub fn from_chw(height: usize, width: usize, chw: &[f32]) -> Result<Raster> {
        let n = height * width;
        if chw.len() != 3 * n {
            return Err(Error::shape("channel-first buffer has the wrong length"));
        }
        let mut data = Vec::with_capacity(3 * n);
        for i in 0..n {
            data.extend_from_slice(&[chw[i], chw[n + i], chw[2 * n + i]]);
        }
        Ok(Raster {
            height,
            width,
            data,
        })
    }
}

/// Stacks rasters of equal size into a `(batch, 3, H, W)` tensor.
pub fn rasters_to_tensor(rasters: &[Raster], dtype: DType, device: &Device) -> Result<Tensor> {
    let first = rasters
        .first()
        .ok_or_else(|| Error::shape("cannot stack zero rasters"))?;
    let (h, w) = (first.height, first.width);
    let mut buf = Vec::with_capacity(rasters.len() * 3 * h * w);
    for r in rasters {
        if r.height != h || r.width != w {
            return Err(Error::shape("rasters differ in size"));
        }
        buf.extend(r.to_chw());
    }
    Ok(Tensor::from_vec(buf, (rasters.len(), 3, h, w), device)?.to_dtype(dtype)?)
}

/// Inverse of [`rasters_to_tensor`]; values are clamped into [0, 1].
pub fn tensor_to_rasters(t: &Tensor) -> Result<Vec<Raster>> {
    let (b, c, h, w) = t.dims4()?;
    if c != 3 {
        return Err(Error::shape(format!("expected 3 channels, got {c}")));
    }
    let flat: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    let per = 3 * h * w;
    (0..b)
        .map(|i| {
            let chw: Vec<f32> = flat[i * per..(i + 1) * per]
                .iter()
                .map(|v| v.clamp(0.0, 1.0))
                .collect();
            Raster::from_chw(h, w, &chw)
        })
        .collect()
}

fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let pos = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, (pos - i0 as f64) as f32)
        })
        .collect()
}

/// Source index for each destination index under nearest-neighbour resampling.
pub(crate) fn nearest_taps(src: usize, dst: usize) -> Vec<usize> {
    (0..dst)
        .map(|d| (((d as f64 + 0.5) * src as f64 / dst as f64).floor() as usize).min(src - 1))
        .collect()
}

impl LabelMap {
    /// Nearest-neighbour resize; class ids are never interpolated.
    pub fn resize_nearest(&self, height: usize, width: usize) -> LabelMap {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let ys = nearest_taps(self.height, height);
        let xs = nearest_taps(self.width, width);
        let mut data = Vec::with_capacity(self.batch * height * width);
        for b in 0..self.batch {
            let plane = self.plane(b);
            for &sy in &ys {
                for &sx in &xs {
                    data.push(plane[sy * self.width + sx]);
                }
            }
        }
        LabelMap {
            batch: self.batch,
            height,
            width,
            data,
        }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<LabelMap> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::shape("label crop exceeds map bounds"));
        }
        let mut data = Vec::with_capacity(self.batch * height * width);
        for b in 0..self.batch {
            let plane = self.plane(b);
            for y in top..top + height {
                data.extend_from_slice(&plane[y * self.width + left..y * self.width + left + width]);
            }
        }
        Ok(LabelMap {
            batch: self.batch,
            height,
            width,
            data,
        })
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        if self.batch != 1 {
            return Err(Error::shape("only single label maps can be written as png"));
        }
        let img = GrayImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer length matches dimensions");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .expect("png encoding into memory cannot fail");
        Ok(out.into_inner())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode_png()?).map_err(|e| Error::io(path, e))
    }

    pub fn load_png(path: &Path) -> Result<LabelMap> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let gray = img.to_luma8();
        LabelMap::new(
            1,
            gray.height() as usize,
            gray.width() as usize,
            gray.into_raw(),
        )
    }
}
