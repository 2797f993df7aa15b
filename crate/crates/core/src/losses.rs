//! Objective terms as pure differentiable functions of network outputs, and their
//! weighted combination.

use std::sync::atomic::{AtomicU64, Ordering};

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::layers::log_softmax_channels;
use crate::nets::{FeatureExtractor, FeatureStack, NUM_TAPS};
use crate::types::{LabelMap, IGNORE_LABEL};

/// Lower/upper clamp applied to discriminator probabilities before taking logs.
pub const LOG_EPS: f64 = 1e-8;

static GUARD_HITS: AtomicU64 = AtomicU64::new(0);

/// Number of discriminator outputs clamped by the log-loss guard so far.
pub fn numeric_guard_hits() -> u64 {
    GUARD_HITS.load(Ordering::Relaxed)
}

/// Per-layer weights `w^(l)` over the five extractor taps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LayerWeights(pub [f64; NUM_TAPS]);

impl LayerWeights {
    pub fn new(w: [f64; NUM_TAPS]) -> Result<Self> {
        let lw = LayerWeights(w);
        lw.validate()?;
        Ok(lw)
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!("layer weights must be finite and >= 0: {:?}", self.0)));
        }
        if self.0.iter().all(|v| *v == 0.0) {
            return Err(Error::Config("at least one layer weight must be positive".into()));
        }
        Ok(())
    }

    /// High-layer-heavy weighting used for reconstruction.
    pub fn rec() -> Self {
        LayerWeights([0.1, 0.1, 0.5, 1.0, 1.0])
    }

    /// High-layer-heavy weighting used for translation structure.
    pub fn structure() -> Self {
        LayerWeights([0.1, 0.1, 0.5, 1.0, 1.0])
    }

    /// Early-layer-heavy weighting used for texture.
    pub fn texture() -> Self {
        LayerWeights([1.0, 1.0, 0.5, 0.1, 0.1])
    }

    pub fn single(layer: usize) -> Self {
        let mut w = [0.0; NUM_TAPS];
        w[layer] = 1.0;
        LayerWeights(w)
    }
}

fn zero_like_scalar(t: &Tensor) -> Result<Tensor> {
    Ok(Tensor::zeros((), t.dtype(), t.device())?)
}

fn check_same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// `Σ_l w_l / N_l · ‖ψ_l(x) − ψ_l(y)‖₁` on precomputed features.
///
/// `N_l` counts the activations of the whole batch, so the value is the batch mean
/// of the per-image metric.
pub fn perceptual_from_features(fx: &FeatureStack, fy: &FeatureStack, w: &LayerWeights) -> Result<Tensor> {
    let mut total = zero_like_scalar(&fx.layers[0])?;
    for (l, (a, b)) in fx.layers.iter().zip(&fy.layers).enumerate() {
        check_same_shape(a, b, "perceptual metric")?;
        if w.0[l] == 0.0 {
            continue;
        }
        let n = a.elem_count() as f64;
        total = (total + ((a - b)?.abs()?.sum_all()? * (w.0[l] / n))?)?;
    }
    Ok(total)
}

/// `Σ_l w_l / C_l · Σ_c |μ_c(ψ_l(x)) − μ_c(ψ_l(y))|` on precomputed features, batch-averaged.
pub fn texture_from_features(fx: &FeatureStack, fy: &FeatureStack, w: &LayerWeights) -> Result<Tensor> {
    let mut total = zero_like_scalar(&fx.layers[0])?;
    for (l, (a, b)) in fx.layers.iter().zip(&fy.layers).enumerate() {
        check_same_shape(a, b, "texture metric")?;
        if w.0[l] == 0.0 {
            continue;
        }
        let (batch, channels, _, _) = a.dims4()?;
        let diff = (a.mean((2, 3))? - b.mean((2, 3))?)?.abs()?.sum_all()?;
        total = (total + (diff * (w.0[l] / (channels * batch) as f64))?)?;
    }
    Ok(total)
}

pub fn perceptual_metric(ex: &dyn FeatureExtractor, x: &Tensor, y: &Tensor, w: &LayerWeights) -> Result<Tensor> {
    check_same_shape(x, y, "perceptual metric")?;
    perceptual_from_features(&ex.extract(x)?, &ex.extract(y)?, w)
}

pub fn texture_metric(ex: &dyn FeatureExtractor, x: &Tensor, y: &Tensor, w: &LayerWeights) -> Result<Tensor> {
    check_same_shape(x, y, "texture metric")?;
    texture_from_features(&ex.extract(x)?, &ex.extract(y)?, w)
}

/// `perc(x̂_s2s, x_s; w_rec) + perc(x̂_t2t, x_t; w_rec)`
pub fn reconstruction_loss(
    ex: &dyn FeatureExtractor,
    s2s: &Tensor,
    x_s: &Tensor,
    t2t: &Tensor,
    x_t: &Tensor,
    w: &LayerWeights,
) -> Result<Tensor> {
    Ok((perceptual_metric(ex, s2s, x_s, w)? + perceptual_metric(ex, t2t, x_t, w)?)?)
}

/// `perc(x̂_s2t, x_s; w_str) + perc(x̂_t2s, x_t; w_str)`: translations keep the structure
/// of the image their structure code came from.
pub fn translation_structure_loss(
    ex: &dyn FeatureExtractor,
    s2t: &Tensor,
    x_s: &Tensor,
    t2s: &Tensor,
    x_t: &Tensor,
    w: &LayerWeights,
) -> Result<Tensor> {
    Ok((perceptual_metric(ex, s2t, x_s, w)? + perceptual_metric(ex, t2s, x_t, w)?)?)
}

/// `tex(x̂_s2t, x_t; w_tex) + tex(x̂_t2s, x_s; w_tex)`: translations take the texture of the
/// image their texture code came from (note the cross pairing).
pub fn translation_texture_loss(
    ex: &dyn FeatureExtractor,
    s2t: &Tensor,
    x_t: &Tensor,
    t2s: &Tensor,
    x_s: &Tensor,
    w: &LayerWeights,
) -> Result<Tensor> {
    Ok((texture_metric(ex, s2t, x_t, w)? + texture_metric(ex, t2s, x_s, w)?)?)
}

/// Mean `−log softmax(scores)[label]` over non-ignored pixels.
pub fn seg_cross_entropy(scores: &Tensor, labels: &LabelMap) -> Result<Tensor> {
    let (b, c, h, w) = scores.dims4()?;
    if (labels.batch, labels.height, labels.width) != (b, h, w) {
        return Err(Error::shape(format!(
            "scores {:?} do not match labels {}x{}x{}",
            scores.dims(),
            labels.batch,
            labels.height,
            labels.width
        )));
    }
    let counted = labels.data.iter().filter(|&&v| v != IGNORE_LABEL).count();
    if counted == 0 {
        return Err(Error::UndefinedMean);
    }
    let plane = h * w;
    let mut weights = vec![0f64; b * c * plane];
    let scale = 1.0 / counted as f64;
    for (i, &v) in labels.data.iter().enumerate() {
        if v == IGNORE_LABEL {
            continue;
        }
        if v as usize >= c {
            return Err(Error::Data(format!("label {v} is out of range for {c} classes")));
        }
        let (bi, p) = (i / plane, i % plane);
        weights[(bi * c + v as usize) * plane + p] = scale;
    }
    let weights = Tensor::from_vec(weights, (b, c, h, w), scores.device())?.to_dtype(scores.dtype())?;
    Ok((log_softmax_channels(scores)? * weights)?.sum_all()?.neg()?)
}

/// Cross-entropy of the classifier's scores on `x̂_s2t` against the source labels.
pub fn label_transfer_loss(scores_s2t: &Tensor, y_s: &LabelMap) -> Result<Tensor> {
    seg_cross_entropy(scores_s2t, y_s)
}

fn guarded_log(p: &Tensor) -> Result<Tensor> {
    let values: Vec<f64> = p.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    let hits = values
        .iter()
        .filter(|&&v| !(LOG_EPS..=1.0 - LOG_EPS).contains(&v))
        .count() as u64;
    if hits > 0 {
        let before = GUARD_HITS.fetch_add(hits, Ordering::Relaxed);
        if before == 0 {
            log::warn!("discriminator output outside [{LOG_EPS}, 1-{LOG_EPS}]; clamping before log");
        }
    }
    Ok(p.clamp(LOG_EPS, 1.0 - LOG_EPS)?.log()?)
}

/// `−mean log D_seg(ŷ_t)` given the (frozen) discriminator's patch outputs on target predictions.
pub fn seg_adv_generator_loss(d_target: &Tensor) -> Result<Tensor> {
    Ok(guarded_log(d_target)?.mean_all()?.neg()?)
}

/// `−mean log D_seg(ŷ_s) − mean log(1 − D_seg(ŷ_t))`, on outputs computed from detached predictions.
pub fn seg_adv_discriminator_loss(d_source: &Tensor, d_target: &Tensor) -> Result<Tensor> {
    let real = guarded_log(d_source)?.mean_all()?.neg()?;
    let fake = guarded_log(&d_target.affine(-1.0, 1.0)?)?.mean_all()?.neg()?;
    Ok((real + fake)?)
}

/// Least-squares generator term `mean((fake − 1)²)`.
pub fn lsgan_generator(fake: &Tensor) -> Result<Tensor> {
    Ok((fake - 1.0)?.sqr()?.mean_all()?)
}

/// Least-squares discriminator term `mean((real − 1)²) + mean(fake²)`.
pub fn lsgan_discriminator(real: &Tensor, fake: &Tensor) -> Result<Tensor> {
    Ok(((real - 1.0)?.sqr()?.mean_all()? + fake.sqr()?.mean_all()?)?)
}

/// `(generator, discriminator)` least-squares terms on raw patch scores.
pub fn lsgan_losses(real: &Tensor, fake: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((lsgan_generator(fake)?, lsgan_discriminator(real, fake)?))
}

pub const TERM_NAMES: [&str; 7] = [
    "seg_source",
    "seg_adv",
    "rec",
    "trans_str",
    "trans_tex",
    "trans_adv",
    "seg_s2t",
];

/// Coefficients of the seven objective terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub seg_source: f64,
    pub seg_adv: f64,
    pub rec: f64,
    pub trans_str: f64,
    pub trans_tex: f64,
    pub trans_adv: f64,
    pub seg_s2t: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            seg_source: 1.0,
            seg_adv: 0.001,
            rec: 0.1,
            trans_str: 0.1,
            trans_tex: 0.05,
            trans_adv: 0.01,
            seg_s2t: 0.1,
        }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 7] {
        [
            self.seg_source,
            self.seg_adv,
            self.rec,
            self.trans_str,
            self.trans_tex,
            self.trans_adv,
            self.seg_s2t,
        ]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        Self {
            seg_source: a[0],
            seg_adv: a[1],
            rec: a[2],
            trans_str: a[3],
            trans_tex: a[4],
            trans_adv: a[5],
            seg_s2t: a[6],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in TERM_NAMES.iter().zip(self.as_array()) {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::ConfigKey {
                    key: format!("loss_weights.{name}"),
                    reason: format!("must be finite and >= 0, got {v}"),
                });
            }
        }
        Ok(())
    }

    pub fn zero() -> Self {
        Self::from_array([0.0; 7])
    }
}

/// Scalar values of the seven terms, in [`TERM_NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms(pub [f64; 7]);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub terms: LossTerms,
    pub total: f64,
}

impl LossReport {
    pub fn term(&self, name: &str) -> Option<f64> {
        TERM_NAMES.iter().position(|n| *n == name).map(|i| self.terms.0[i])
    }
}

/// Weighted sum of the seven terms; a non-finite term aborts with its name.
pub fn total_loss(terms: &LossTerms, weights: &LossWeights) -> Result<LossReport> {
    for (name, v) in TERM_NAMES.iter().zip(terms.0) {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                term: (*name).to_string(),
            });
        }
    }
    let total = terms.0.iter().zip(weights.as_array()).map(|(t, l)| t * l).sum();
    Ok(LossReport {
        terms: *terms,
        total,
    })
}
