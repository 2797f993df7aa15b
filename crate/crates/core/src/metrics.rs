//! Segmentation evaluation (confusion matrix, per-class IoU, mIoU) and
//! structure/texture diagnostics for translated images.

use std::fmt::Write as _;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{perceptual_metric, texture_metric, LayerWeights};
use crate::nets::{FeatureExtractor, Segmenter};
use crate::types::{LabelMap, IGNORE_LABEL};

/// `counts[gt][pred]` over non-ignored pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds every pixel whose ground truth is not [`IGNORE_LABEL`].
    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if (pred.batch, pred.height, pred.width) != (gt.batch, gt.height, gt.width) {
            return Err(Error::shape(format!(
                "prediction {}x{}x{} vs ground truth {}x{}x{}",
                pred.batch, pred.height, pred.width, gt.batch, gt.height, gt.width
            )));
        }
        let c = self.num_classes;
        let mut delta = vec![0u64; c * c];
        for (&p, &g) in pred.data.iter().zip(&gt.data) {
            if g == IGNORE_LABEL {
                continue;
            }
            if g as usize >= c || p as usize >= c {
                return Err(Error::Data(format!(
                    "class id out of range (gt {g}, pred {p}) for {c} classes"
                )));
            }
            delta[g as usize * c + p as usize] += 1;
        }
        for (a, d) in self.counts.iter_mut().zip(delta) {
            *a += d;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::shape("cannot merge confusion matrices of different sizes"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `None` marks a class absent from both prediction and ground truth.
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub pixel_accuracy: f64,
    pub undefined_classes: usize,
}

/// `IoU_c = TP / (TP + FP + FN)`; classes with a zero denominator are excluded from the mean.
pub fn iou_report(cm: &ConfusionMatrix) -> Result<EvalReport> {
    let c = cm.num_classes;
    let mut per_class = Vec::with_capacity(c);
    let mut diag = 0u64;
    for k in 0..c {
        let tp = cm.get(k, k);
        let fn_: u64 = (0..c).filter(|&p| p != k).map(|p| cm.get(k, p)).sum();
        let fp: u64 = (0..c).filter(|&g| g != k).map(|g| cm.get(g, k)).sum();
        let denom = tp + fp + fn_;
        per_class.push((denom > 0).then(|| tp as f64 / denom as f64));
        diag += tp;
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::EmptyReport);
    }
    let total = cm.total();
    Ok(EvalReport {
        miou: defined.iter().sum::<f64>() / defined.len() as f64,
        pixel_accuracy: if total > 0 { diag as f64 / total as f64 } else { 0.0 },
        undefined_classes: c - defined.len(),
        per_class_iou: per_class,
    })
}

impl EvalReport {
    /// Aligned text table: one column per class, then mIoU, values in percent.
    pub fn table(&self, class_names: &[String], row_label: &str) -> String {
        let mut header = format!("{:<16}", "");
        let mut row = format!("{row_label:<16}");
        for (k, iou) in self.per_class_iou.iter().enumerate() {
            let name = class_names.get(k).map_or_else(|| format!("class{k}"), Clone::clone);
            let width = name.len().max(6) + 1;
            let _ = write!(header, "{name:>width$}");
            let cell = iou.map_or_else(|| "-".to_string(), |v| format!("{:.1}", v * 100.0));
            let _ = write!(row, "{cell:>width$}");
        }
        let _ = write!(header, "{:>8}", "mIoU");
        let _ = write!(row, "{:>8.1}", self.miou * 100.0);
        format!("{header}\n{row}\n")
    }
}

/// Texture distance of a source-to-target translation to the target image and to the source image.
pub fn texture_report(
    ex: &dyn FeatureExtractor,
    s2t: &Tensor,
    x_s: &Tensor,
    x_t: &Tensor,
    w_tex: &LayerWeights,
) -> Result<(f64, f64)> {
    let to_target = texture_metric(ex, s2t, x_t, w_tex)?.to_dtype(candle_core::DType::F64)?.to_scalar()?;
    let to_source = texture_metric(ex, s2t, x_s, w_tex)?.to_dtype(candle_core::DType::F64)?.to_scalar()?;
    Ok((to_target, to_source))
}

/// Structure distance of a translation to its structure image, and the pixel accuracy of
/// `segmenter` on the translation against the structure image's labels.
pub fn structure_report(
    ex: &dyn FeatureExtractor,
    s2t: &Tensor,
    x_s: &Tensor,
    y_s: &LabelMap,
    segmenter: &dyn Segmenter,
    w_str: &LayerWeights,
) -> Result<(f64, f64)> {
    let d_struct = perceptual_metric(ex, s2t, x_s, w_str)?.to_dtype(candle_core::DType::F64)?.to_scalar()?;
    let pred = segmenter.predict(s2t)?;
    Ok((d_struct, pixel_accuracy(&pred, y_s)?))
}

/// Fraction of non-ignored pixels where `pred` equals `gt`.
pub fn pixel_accuracy(pred: &LabelMap, gt: &LabelMap) -> Result<f64> {
    if pred.data.len() != gt.data.len() {
        return Err(Error::shape("prediction and ground truth differ in size"));
    }
    let (mut hit, mut n) = (0usize, 0usize);
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        if g != IGNORE_LABEL {
            n += 1;
            hit += usize::from(p == g);
        }
    }
    if n == 0 {
        return Err(Error::UndefinedMean);
    }
    Ok(hit as f64 / n as f64)
}
