//! Checks shared by the integration tests and the acceptance harness. Each suite returns
//! named outcomes so a failure says exactly which example broke.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dise::config::Config;
use dise::datagen::{write_dataset, DatasetParams};
use dise::losses::*;
use dise::metrics::{iou_report, ConfusionMatrix};
use dise::nets::layers::softmax_channels;
use dise::nets::{
    Classifier, CommonEncoder, ConvExtractor, Decoder, FeatureExtractor, FeatureStack, Head, Mode, ModelConfig,
    PatchDiscriminator, PrivateEncoder, StructureCode, TextureCode, NUM_TAPS,
};
use dise::train::{fit, poly_lr, FitOptions, LogRecord, TrainState};
use dise::{Domain, ImageBatch, LabelMap, IGNORE_LABEL};

pub type Check = (String, Result<(), String>);

pub fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

pub fn close(got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, format!("got {got}, want {want} ± {tol}"))
}

fn run(name: &str, f: impl FnOnce() -> Result<(), String>) -> Check {
    (name.to_string(), f())
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

pub fn cpu() -> Device {
    Device::Cpu
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(v, shape, &cpu()).unwrap()
}

pub fn const_tensor(shape: &[usize], value: f64) -> Tensor {
    Tensor::full(value, shape, &cpu()).unwrap()
}

/// Test stub: every tap is the input itself.
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn extract(&self, x: &Tensor) -> dise::Result<FeatureStack> {
        Ok(FeatureStack {
            layers: vec![x.clone(); NUM_TAPS],
        })
    }
}

/// Brute-force `−log softmax(logits)[label]` in f64.
pub fn ce_oracle(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln() + m;
    lse - logits[label]
}

// ---------------------------------------------------------------------------------------
// Criterion 1: loss unit values
// ---------------------------------------------------------------------------------------

pub fn loss_unit_suite() -> Vec<Check> {
    let mut out = Vec::new();
    let ex = ConvExtractor::proxy(DType::F64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand_tensor(&mut rng, &[2, 3, 16, 32], 0.0, 1.0);
    let y = rand_tensor(&mut rng, &[2, 3, 16, 32], 0.0, 1.0);

    out.push(run("perceptual metric is zero at identity", || {
        ensure(scalar(&perceptual_metric(&ex, &x, &x, &LayerWeights::rec()).map_err(err)?) == 0.0, "nonzero")
    }));
    out.push(run("perceptual metric, identity stub, unit delta on 2x2 -> 1.0", || {
        let a = const_tensor(&[1, 1, 2, 2], 1.5);
        let b = const_tensor(&[1, 1, 2, 2], 0.5);
        close(scalar(&perceptual_metric(&IdentityExtractor, &a, &b, &LayerWeights::single(0)).map_err(err)?), 1.0, 1e-12)
    }));
    out.push(run("texture metric is zero at identity", || {
        ensure(scalar(&texture_metric(&ex, &x, &x, &LayerWeights::texture()).map_err(err)?) == 0.0, "nonzero")
    }));
    out.push(run("texture metric, identity stub, means 0.75 vs 0.25 -> 0.5", || {
        let a = Tensor::from_vec(vec![1.0, 0.5, 1.0, 0.5], (1, 1, 2, 2), &cpu()).map_err(err)?;
        let b = Tensor::from_vec(vec![0.0, 0.5, 0.5, 0.0], (1, 1, 2, 2), &cpu()).map_err(err)?;
        close(scalar(&texture_metric(&IdentityExtractor, &a, &b, &LayerWeights::single(0)).map_err(err)?), 0.5, 1e-12)
    }));
    out.push(run("metrics reject mismatched shapes", || {
        let small = const_tensor(&[1, 3, 16, 16], 0.0);
        let r = perceptual_metric(&ex, &x, &small, &LayerWeights::rec());
        ensure(matches!(r, Err(dise::Error::Shape(_))), format!("{r:?}"))
    }));
    out.push(run("cross-entropy, equal logits, C=2 -> ln 2 (0.6931 ± 1e-6)", || {
        let s = const_tensor(&[1, 2, 1, 1], 0.3);
        let v = scalar(&seg_cross_entropy(&s, &LabelMap::filled(1, 1, 1, 0)).map_err(err)?);
        close(v, 0.6931, 1e-4)?;
        close(v, 0.5f64.ln().abs(), 1e-6)
    }));
    out.push(run("cross-entropy, logits (10, -10), label 0 -> < 1e-4", || {
        let s = Tensor::from_vec(vec![10.0, -10.0], (1, 2, 1, 1), &cpu()).map_err(err)?;
        let v = scalar(&seg_cross_entropy(&s, &LabelMap::filled(1, 1, 1, 0)).map_err(err)?);
        ensure((0.0..1e-4).contains(&v), format!("{v}"))
    }));
    out.push(run("cross-entropy with one counted pixel equals its own term", || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = rand_tensor(&mut rng, &[1, 4, 3, 3], -3.0, 3.0);
        let mut labels = LabelMap::filled(1, 3, 3, IGNORE_LABEL);
        labels.data[5] = 2;
        let v = scalar(&seg_cross_entropy(&s, &labels).map_err(err)?);
        let flat: Vec<f64> = s.flatten_all().map_err(err)?.to_vec1().map_err(err)?;
        let logits: Vec<f64> = (0..4).map(|c| flat[c * 9 + 5]).collect();
        close(v, ce_oracle(&logits, 2), 1e-12)
    }));
    out.push(run("cross-entropy over all-ignored labels is undefined", || {
        let s = const_tensor(&[1, 2, 2, 2], 0.0);
        let r = seg_cross_entropy(&s, &LabelMap::filled(1, 2, 2, IGNORE_LABEL));
        ensure(matches!(r, Err(dise::Error::UndefinedMean)), format!("{r:?}"))
    }));
    out.push(run("seg adversarial generator: D = 1 -> 0", || {
        close(scalar(&seg_adv_generator_loss(&const_tensor(&[2, 1, 1, 4], 1.0)).map_err(err)?), 0.0, 1e-7)
    }));
    out.push(run("seg adversarial generator: D = 0.5 -> ln 2", || {
        close(scalar(&seg_adv_generator_loss(&const_tensor(&[2, 1, 1, 4], 0.5)).map_err(err)?), 2f64.ln(), 1e-12)
    }));
    out.push(run("seg adversarial generator: D = (1, .5, .25, .125) -> 1.0397", || {
        let d = Tensor::from_vec(vec![1.0, 0.5, 0.25, 0.125], (1, 1, 1, 4), &cpu()).map_err(err)?;
        let v = scalar(&seg_adv_generator_loss(&d).map_err(err)?);
        close(v, 1.0397, 1e-4)?;
        close(v, (0.0 + 2f64.ln() + 4f64.ln() + 8f64.ln()) / 4.0, 1e-8)
    }));
    out.push(run("seg adversarial discriminator: perfect -> 0", || {
        let v = seg_adv_discriminator_loss(&const_tensor(&[1, 1, 1, 2], 1.0), &const_tensor(&[1, 1, 1, 2], 0.0));
        close(scalar(&v.map_err(err)?), 0.0, 1e-7)
    }));
    out.push(run("seg adversarial discriminator: D = 0.5 on both -> 2 ln 2", || {
        let h = const_tensor(&[1, 1, 1, 2], 0.5);
        close(scalar(&seg_adv_discriminator_loss(&h, &h).map_err(err)?), 2.0 * 2f64.ln(), 1e-12)
    }));
    out.push(run("log guard clamps zero outputs to a finite loss", || {
        let before = numeric_guard_hits();
        let v = scalar(&seg_adv_generator_loss(&const_tensor(&[1, 1, 1, 1], 0.0)).map_err(err)?);
        close(v, -(1e-8f64).ln(), 1e-6)?;
        ensure(numeric_guard_hits() > before, "guard counter did not move")
    }));
    out.push(run("reconstruction: perfect -> 0; stubbed deltas -> hand value", || {
        let w = LayerWeights::rec();
        close(scalar(&reconstruction_loss(&ex, &x, &x, &y, &y, &w).map_err(err)?), 0.0, 0.0)?;
        let (a1, a0) = (const_tensor(&[1, 1, 2, 2], 2.0), const_tensor(&[1, 1, 2, 2], 1.0));
        let (b1, b0) = (const_tensor(&[1, 1, 2, 2], 0.5), const_tensor(&[1, 1, 2, 2], 0.0));
        // Σ w = 2.7; deltas 1 and 0.5.
        close(scalar(&reconstruction_loss(&IdentityExtractor, &a1, &a0, &b1, &b0, &w).map_err(err)?), 2.7 * 1.5, 1e-12)
    }));
    out.push(run("translation structure loss is zero when translations equal their structure images", || {
        close(scalar(&translation_structure_loss(&ex, &x, &x, &y, &y, &LayerWeights::structure()).map_err(err)?), 0.0, 0.0)
    }));
    out.push(run("translation texture loss is zero when translations equal their texture images", || {
        close(scalar(&translation_texture_loss(&ex, &y, &y, &x, &x, &LayerWeights::texture()).map_err(err)?), 0.0, 0.0)
    }));
    out.push(run("LSGAN: real 1, fake 0 -> discriminator 0, generator 1", || {
        let (g, d) = lsgan_losses(&const_tensor(&[1, 1, 2, 2], 1.0), &const_tensor(&[1, 1, 2, 2], 0.0)).map_err(err)?;
        close(scalar(&d), 0.0, 0.0)?;
        close(scalar(&g), 1.0, 0.0)
    }));
    out.push(run("LSGAN: real = fake = 0.5 -> discriminator 0.5, generator 0.25", || {
        let h = const_tensor(&[1, 1, 2, 2], 0.5);
        let (g, d) = lsgan_losses(&h, &h).map_err(err)?;
        close(scalar(&d), 0.5, 1e-15)?;
        close(scalar(&g), 0.25, 1e-15)
    }));
    out.push(run("label transfer equals cross-entropy on the composed network", label_transfer_matches_composition));
    out.push(run("label transfer: detached translation gives no decoder gradient", label_transfer_detach));
    out.push(run("total loss: all λ = 0 -> 0", || {
        let terms = LossTerms([0.3, 0.2, 0.1, 0.4, 0.5, 0.6, 0.7]);
        close(total_loss(&terms, &LossWeights::zero()).map_err(err)?.total, 0.0, 0.0)
    }));
    out.push(run("total loss: one-hot λ on rec -> L_rec", || {
        let terms = LossTerms([0.3, 0.2, 0.125, 0.4, 0.5, 0.6, 0.7]);
        let mut w = LossWeights::zero();
        w.rec = 1.0;
        close(total_loss(&terms, &w).map_err(err)?.total, 0.125, 0.0)
    }));
    out.push(run("total loss: λ = 1, terms 0.1..0.7 -> 2.8", || {
        let terms = LossTerms([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]);
        close(total_loss(&terms, &LossWeights::from_array([1.0; 7])).map_err(err)?.total, 2.8, 1e-12)
    }));
    out.push(run("total loss is linear in λ (superposition on random terms)", || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let t = LossTerms(std::array::from_fn(|_| rng.gen_range(0.0..3.0)));
            let a: [f64; 7] = std::array::from_fn(|_| rng.gen_range(0.0..2.0));
            let b: [f64; 7] = std::array::from_fn(|_| rng.gen_range(0.0..2.0));
            let (p, q) = (rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0));
            let mix = LossWeights::from_array(std::array::from_fn(|i| p * a[i] + q * b[i]));
            let lhs = total_loss(&t, &mix).map_err(err)?.total;
            let rhs = p * total_loss(&t, &LossWeights::from_array(a)).map_err(err)?.total
                + q * total_loss(&t, &LossWeights::from_array(b)).map_err(err)?.total;
            ensure((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(1e-12), format!("{lhs} vs {rhs}"))?;
        }
        Ok(())
    }));
    out.push(run("non-finite term aborts with its name", || {
        let r = total_loss(&LossTerms([0.1, 0.2, 0.3, f64::NAN, 0.5, 0.6, 0.7]), &LossWeights::default());
        match r {
            Err(dise::Error::NonFinite { term }) => ensure(term == "trans_str", term),
            other => Err(format!("{other:?}")),
        }
    }));
    out.push(run("one generator step on the seg adversarial loss raises mean D(ŷ_t)", adversarial_direction));
    out.push(run("adversarial detachment: no cross-partition gradients", adversarial_detachment));
    out
}

fn small_model_config() -> ModelConfig {
    ModelConfig {
        common_width: 8,
        private_width: 8,
        decoder_width: 8,
        disc_width: 4,
        init_seed: 3,
        dtype: "f64".into(),
        extractor_weights: String::new(),
    }
}

fn label_transfer_matches_composition() -> Result<(), String> {
    let cfg = small_model_config();
    let e = CommonEncoder::new(cfg.common_width, 1, DType::F64).map_err(err)?;
    let t = Classifier::new(cfg.common_width, 4, 1, DType::F64).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let s2t = rand_tensor(&mut rng, &[2, 3, 8, 16], 0.0, 1.0);
    let labels = random_labels(&mut rng, 2, 8, 16, 4, 0.1);
    let scores = t.forward(&e.forward(&s2t, Mode::EVAL).map_err(err)?, (8, 16), Mode::EVAL).map_err(err)?;
    let a = scalar(&label_transfer_loss(&scores, &labels).map_err(err)?);
    let b = scalar(&seg_cross_entropy(&scores, &labels).map_err(err)?);
    close(a, b, 1e-7)
}

fn label_transfer_detach() -> Result<(), String> {
    let cfg = small_model_config();
    let e = CommonEncoder::new(cfg.common_width, 1, DType::F64).map_err(err)?;
    let t = Classifier::new(cfg.common_width, 4, 1, DType::F64).map_err(err)?;
    let d = Decoder::new(cfg.common_width, cfg.decoder_width, 1, DType::F64).map_err(err)?;
    let p = PrivateEncoder::new("E_p_t", cfg.private_width, 1, DType::F64).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x_s = rand_tensor(&mut rng, &[2, 3, 8, 16], 0.0, 1.0);
    let x_t = rand_tensor(&mut rng, &[2, 3, 8, 16], 0.0, 1.0);
    let labels = random_labels(&mut rng, 2, 8, 16, 4, 0.0);
    let s2t = d
        .forward(&e.forward(&x_s, Mode::TRAIN).map_err(err)?, &p.forward(&x_t, Mode::TRAIN).map_err(err)?, Domain::Target, Mode::TRAIN)
        .map_err(err)?;
    let grad_norm = |detach: bool| -> Result<(f64, f64), String> {
        let input = if detach { s2t.detach() } else { s2t.clone() };
        let scores = t.forward(&e.forward(&input, Mode::TRAIN).map_err(err)?, (8, 16), Mode::TRAIN).map_err(err)?;
        let g = label_transfer_loss(&scores, &labels).map_err(err)?.backward().map_err(err)?;
        let norm = |set: &dise::nets::ParamSet| -> f64 {
            set.params()
                .filter_map(|(_, v)| g.get(v.as_tensor()))
                .map(|t| scalar(&t.sqr().unwrap().sum_all().unwrap()))
                .sum::<f64>()
                .sqrt()
        };
        Ok((norm(d.params()), norm(t.params())))
    };
    let (dec_detached, cls_detached) = grad_norm(true)?;
    let (dec_attached, _) = grad_norm(false)?;
    ensure(dec_detached == 0.0, format!("decoder gradient {dec_detached} with detach"))?;
    ensure(cls_detached > 0.0, "classifier got no gradient")?;
    ensure(dec_attached > 0.0, "decoder gradient vanished without detach")
}

fn adversarial_direction() -> Result<(), String> {
    let disc = PatchDiscriminator::new("D_seg", 3, 4, Head::Sigmoid, 2, DType::F64).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let logits = Var::from_tensor(&rand_tensor(&mut rng, &[1, 3, 16, 32], -1.0, 1.0)).map_err(err)?;
    let mean_d = |l: &Tensor| -> Result<f64, String> {
        Ok(scalar(&disc.forward(&softmax_channels(l).map_err(err)?, Mode::FROZEN).map_err(err)?.mean_all().map_err(err)?))
    };
    let before = mean_d(logits.as_tensor())?;
    let loss = seg_adv_generator_loss(&disc.forward(&softmax_channels(logits.as_tensor()).map_err(err)?, Mode::FROZEN).map_err(err)?)
        .map_err(err)?;
    let g = loss.backward().map_err(err)?;
    let grad = g.get(logits.as_tensor()).ok_or("no gradient on logits")?;
    let stepped = (logits.as_tensor() - (grad * 1.0).map_err(err)?).map_err(err)?;
    let after = mean_d(&stepped)?;
    ensure(after > before, format!("mean D went {before} -> {after}"))
}

fn adversarial_detachment() -> Result<(), String> {
    let cfg = small_model_config();
    let e = CommonEncoder::new(cfg.common_width, 1, DType::F64).map_err(err)?;
    let t = Classifier::new(cfg.common_width, 3, 1, DType::F64).map_err(err)?;
    let disc = PatchDiscriminator::new("D_seg", 3, 4, Head::Sigmoid, 2, DType::F64).map_err(err)?;
    let img = PatchDiscriminator::new("D_img_t", 3, 4, Head::Raw, 2, DType::F64).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&mut rng, &[2, 3, 16, 16], 0.0, 1.0);
    let probs = t.probabilities(&e.forward(&x, Mode::TRAIN).map_err(err)?, (16, 16), Mode::TRAIN).map_err(err)?;
    let any_grad = |g: &candle_core::backprop::GradStore, set: &dise::nets::ParamSet| set.params().any(|(_, v)| g.get(v.as_tensor()).is_some());

    let gen = (seg_adv_generator_loss(&disc.forward(&probs, Mode::FROZEN).map_err(err)?).map_err(err)?
        + lsgan_generator(&img.forward(&x, Mode::FROZEN).map_err(err)?).map_err(err)?)
    .map_err(err)?;
    let g = gen.backward().map_err(err)?;
    ensure(!any_grad(&g, disc.params()) && !any_grad(&g, img.params()), "generator loss reached a discriminator")?;
    ensure(any_grad(&g, e.params()), "generator loss did not reach the encoder")?;

    let d_loss = seg_adv_discriminator_loss(
        &disc.forward(&probs.detach(), Mode::TRAIN).map_err(err)?,
        &disc.forward(&probs.detach(), Mode::TRAIN).map_err(err)?,
    )
    .map_err(err)?;
    let g = d_loss.backward().map_err(err)?;
    ensure(!any_grad(&g, e.params()) && !any_grad(&g, t.params()), "discriminator loss reached the generator")?;
    ensure(any_grad(&g, disc.params()), "discriminator loss did not reach the discriminator")
}

pub fn random_labels(rng: &mut ChaCha8Rng, b: usize, h: usize, w: usize, c: usize, p_ignore: f64) -> LabelMap {
    let data = (0..b * h * w)
        .map(|_| {
            if rng.gen_bool(p_ignore) {
                IGNORE_LABEL
            } else {
                rng.gen_range(0..c as u8)
            }
        })
        .collect();
    LabelMap::new(b, h, w, data).unwrap()
}

// ---------------------------------------------------------------------------------------
// Criterion 2: finite-difference gradient checks
// ---------------------------------------------------------------------------------------

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
const FD_SAMPLES: usize = 12;

/// Largest relative error `‖a − n‖ / max(‖a‖, ‖n‖)` over the given variables, comparing
/// analytic gradients with central differences on up to 12 sampled coordinates per variable.
pub fn fd_max_rel_error(vars: &[(String, Var)], f: &dyn Fn() -> dise::Result<Tensor>, seed: u64) -> Result<f64, String> {
    let loss = f().map_err(err)?;
    let grads = loss.backward().map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for (name, var) in vars {
        let n = var.elem_count();
        let shape = var.dims().to_vec();
        let base: Vec<f64> = var.as_tensor().flatten_all().map_err(err)?.to_vec1().map_err(err)?;
        let analytic: Vec<f64> = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all().map_err(err)?.to_vec1().map_err(err)?,
            None => vec![0.0; n],
        };
        let idx: Vec<usize> = if n <= FD_SAMPLES {
            (0..n).collect()
        } else {
            (0..FD_SAMPLES).map(|_| rng.gen_range(0..n)).collect()
        };
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for &i in &idx {
            let probe = |delta: f64| -> Result<f64, String> {
                let mut v = base.clone();
                v[i] += delta;
                var.set(&Tensor::from_vec(v, shape.as_slice(), &cpu()).map_err(err)?).map_err(err)?;
                Ok(scalar(&f().map_err(err)?))
            };
            let numeric = (probe(FD_STEP)? - probe(-FD_STEP)?) / (2.0 * FD_STEP);
            diff2 += (analytic[i] - numeric).powi(2);
            a2 += analytic[i].powi(2);
            n2 += numeric.powi(2);
        }
        var.set(&Tensor::from_vec(base, shape.as_slice(), &cpu()).map_err(err)?).map_err(err)?;
        let scale = a2.sqrt().max(n2.sqrt());
        let rel = if scale < 1e-12 { diff2.sqrt() } else { diff2.sqrt() / scale };
        if rel > worst {
            worst = rel;
        }
        if !rel.is_finite() {
            return Err(format!("{name}: non-finite gradient"));
        }
    }
    Ok(worst)
}

fn input_var(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Var {
    Var::from_tensor(&rand_tensor(rng, shape, lo, hi)).unwrap()
}

fn with_params(inputs: Vec<(&str, &Var)>, sets: &[&dise::nets::ParamSet]) -> Vec<(String, Var)> {
    let mut v: Vec<(String, Var)> = inputs.into_iter().map(|(n, v)| (n.to_string(), v.clone())).collect();
    for s in sets {
        for (n, var) in s.params() {
            v.push((format!("{}/{n}", s.group()), var.clone()));
        }
    }
    v
}

/// Fixed random projection making any output a scalar.
fn project(t: &Tensor, seed: u64) -> dise::Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rand_tensor(&mut rng, t.dims(), -1.0, 1.0);
    Ok((t * r)?.sum_all()?)
}

fn fd_case(name: &str, vars: Vec<(String, Var)>, f: &dyn Fn() -> dise::Result<Tensor>) -> Check {
    let res = fd_max_rel_error(&vars, f, 17).and_then(|rel| ensure(rel <= FD_TOL, format!("relative error {rel:.3e} > {FD_TOL:e}")));
    (format!("gradient check: {name}"), res)
}

/// Every network and loss term at f64. Networks and losses without a 16-divisibility
/// requirement run on 8x16 inputs; the patch discriminators and the five-tap extractor
/// need both dims divisible by 16, so their checks use 16x16, the smallest valid size.
pub fn gradient_suite() -> Vec<Check> {
    let cfg = small_model_config();
    let dt = DType::F64;
    let fc = cfg.common_width;
    let c = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = Vec::new();

    let e_c = CommonEncoder::new(fc, 5, dt).unwrap();
    let x = input_var(&mut rng, &[2, 3, 8, 16], 0.0, 1.0);
    out.push(fd_case("common encoder (train-mode batch norm)", with_params(vec![("x", &x)], &[e_c.params()]), &|| {
        project(e_c.forward(x.as_tensor(), Mode::TRAIN)?.tensor(), 1)
    }));
    out.push(fd_case("common encoder (eval mode)", with_params(vec![("x", &x)], &[e_c.params()]), &|| {
        project(e_c.forward(x.as_tensor(), Mode::EVAL)?.tensor(), 1)
    }));

    let e_p = PrivateEncoder::new("E_p_s", cfg.private_width, 5, dt).unwrap();
    out.push(fd_case("private encoder", with_params(vec![("x", &x)], &[e_p.params()]), &|| {
        project(e_p.forward(x.as_tensor(), Mode::TRAIN)?.tensor(), 2)
    }));

    let dec = Decoder::new(fc, cfg.decoder_width, 5, dt).unwrap();
    let z_c = input_var(&mut rng, &[2, fc, 1, 2], -1.0, 1.0);
    let z_p = input_var(&mut rng, &[2, dise::TEXTURE_DIM], -1.0, 1.0);
    out.push(fd_case("decoder", with_params(vec![("z_c", &z_c), ("z_p", &z_p)], &[dec.params()]), &|| {
        let y = dec.forward_flags(
            &StructureCode(z_c.as_tensor().clone()),
            &TextureCode(z_p.as_tensor().clone()),
            &[Domain::Source, Domain::Target],
            Mode::TRAIN,
        )?;
        project(&y, 3)
    }));

    let cls = Classifier::new(fc, c, 5, dt).unwrap();
    out.push(fd_case("classifier", with_params(vec![("z_c", &z_c)], &[cls.params()]), &|| {
        project(&cls.forward(&StructureCode(z_c.as_tensor().clone()), (8, 16), Mode::TRAIN)?, 4)
    }));

    let d_seg = PatchDiscriminator::new("D_seg", c, cfg.disc_width, Head::Sigmoid, 5, dt).unwrap();
    let p16 = input_var(&mut rng, &[2, c, 16, 16], 0.0, 1.0);
    out.push(fd_case("segmentation discriminator (16x16)", with_params(vec![("p", &p16)], &[d_seg.params()]), &|| {
        project(&d_seg.forward(p16.as_tensor(), Mode::TRAIN)?, 5)
    }));
    let d_img = PatchDiscriminator::new("D_img_t", 3, cfg.disc_width, Head::Raw, 5, dt).unwrap();
    let x16 = input_var(&mut rng, &[2, 3, 16, 16], 0.0, 1.0);
    out.push(fd_case("image discriminator (16x16)", with_params(vec![("x", &x16)], &[d_img.params()]), &|| {
        project(&d_img.forward(x16.as_tensor(), Mode::TRAIN)?, 6)
    }));

    let ex = ConvExtractor::proxy(dt).unwrap();
    let y16 = input_var(&mut rng, &[2, 3, 16, 16], 0.0, 1.0);
    let a16 = input_var(&mut rng, &[2, 3, 16, 16], 0.0, 1.0);
    let b16 = input_var(&mut rng, &[2, 3, 16, 16], 0.0, 1.0);
    let pair = || vec![("x".to_string(), x16.clone()), ("y".to_string(), y16.clone())];
    let quad = || {
        vec![
            ("a".to_string(), x16.clone()),
            ("b".to_string(), y16.clone()),
            ("c".to_string(), a16.clone()),
            ("d".to_string(), b16.clone()),
        ]
    };
    out.push(fd_case("perceptual metric (16x16)", pair(), &|| {
        perceptual_metric(&ex, x16.as_tensor(), y16.as_tensor(), &LayerWeights::rec())
    }));
    out.push(fd_case("texture metric (16x16)", pair(), &|| {
        texture_metric(&ex, x16.as_tensor(), y16.as_tensor(), &LayerWeights::texture())
    }));
    out.push(fd_case("reconstruction loss (16x16)", quad(), &|| {
        reconstruction_loss(&ex, x16.as_tensor(), y16.as_tensor(), a16.as_tensor(), b16.as_tensor(), &LayerWeights::rec())
    }));
    out.push(fd_case("translation structure loss (16x16)", quad(), &|| {
        translation_structure_loss(&ex, x16.as_tensor(), y16.as_tensor(), a16.as_tensor(), b16.as_tensor(), &LayerWeights::structure())
    }));
    out.push(fd_case("translation texture loss (16x16)", quad(), &|| {
        translation_texture_loss(&ex, x16.as_tensor(), y16.as_tensor(), a16.as_tensor(), b16.as_tensor(), &LayerWeights::texture())
    }));

    let scores = input_var(&mut rng, &[2, c, 8, 16], -2.0, 2.0);
    let labels = random_labels(&mut rng, 2, 8, 16, c, 0.2);
    out.push(fd_case("segmentation cross-entropy", vec![("scores".into(), scores.clone())], &|| {
        seg_cross_entropy(scores.as_tensor(), &labels)
    }));
    out.push(fd_case(
        "label transfer through common encoder and classifier",
        with_params(vec![("x_s2t", &x)], &[e_c.params(), cls.params()]),
        &|| {
            let s = cls.forward(&e_c.forward(x.as_tensor(), Mode::TRAIN)?, (8, 16), Mode::TRAIN)?;
            label_transfer_loss(&s, &labels)
        },
    ));
    let logits16 = input_var(&mut rng, &[2, c, 16, 16], -1.0, 1.0);
    out.push(fd_case(
        "seg adversarial generator loss through softmax and frozen discriminator (16x16)",
        vec![("logits".into(), logits16.clone())],
        &|| seg_adv_generator_loss(&d_seg.forward(&softmax_channels(logits16.as_tensor())?, Mode::FROZEN)?),
    ));
    let q16 = input_var(&mut rng, &[2, c, 16, 16], 0.0, 1.0);
    out.push(fd_case(
        "seg adversarial discriminator loss (16x16)",
        with_params(vec![], &[d_seg.params()]),
        &|| {
            seg_adv_discriminator_loss(&d_seg.forward(p16.as_tensor(), Mode::TRAIN)?, &d_seg.forward(q16.as_tensor(), Mode::TRAIN)?)
        },
    ));
    let real = input_var(&mut rng, &[2, 1, 4, 4], -1.0, 2.0);
    let fake = input_var(&mut rng, &[2, 1, 4, 4], -1.0, 2.0);
    out.push(fd_case("LSGAN generator term", vec![("fake".into(), fake.clone())], &|| lsgan_generator(fake.as_tensor())));
    out.push(fd_case(
        "LSGAN discriminator term",
        vec![("real".into(), real.clone()), ("fake".into(), fake.clone())],
        &|| lsgan_discriminator(real.as_tensor(), fake.as_tensor()),
    ));
    out.push(fd_case(
        "translation adversarial loss through both image discriminators (16x16)",
        with_params(vec![("x", &x16)], &[d_img.params()]),
        &|| lsgan_generator(&d_img.forward(x16.as_tensor(), Mode::TRAIN)?),
    ));
    out
}

// ---------------------------------------------------------------------------------------
// Criterion 3: IoU against a set-based oracle
// ---------------------------------------------------------------------------------------

/// Per-class IoU from explicit pixel sets: |{pred = c} ∩ {gt = c}| / |{pred = c} ∪ {gt = c}|,
/// over non-ignored pixels, `None` when the union is empty.
pub fn iou_oracle(pred: &[u8], gt: &[u8], classes: usize) -> (Vec<Option<f64>>, Option<f64>) {
    use std::collections::BTreeSet;
    let mut per = Vec::new();
    for c in 0..classes as u8 {
        let p: BTreeSet<usize> = (0..pred.len()).filter(|&i| gt[i] != IGNORE_LABEL && pred[i] == c).collect();
        let g: BTreeSet<usize> = (0..gt.len()).filter(|&i| gt[i] == c).collect();
        let union = p.union(&g).count();
        per.push((union > 0).then(|| p.intersection(&g).count() as f64 / union as f64));
    }
    let defined: Vec<f64> = per.iter().flatten().copied().collect();
    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    (per, mean)
}

pub fn metric_oracle_suite() -> Vec<Check> {
    let mut out = Vec::new();
    out.push(run("IoU matches the set oracle on 100 random 8x8 cases", || {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        for case in 0..100 {
            let classes = rng.gen_range(2..7);
            let gt = random_labels(&mut rng, 1, 8, 8, classes, 0.1);
            let pred = random_labels(&mut rng, 1, 8, 8, classes, 0.0);
            let (per, mean) = iou_oracle(&pred.data, &gt.data, classes);
            let mut cm = ConfusionMatrix::new(classes);
            cm.accumulate(&pred, &gt).map_err(err)?;
            match (iou_report(&cm), mean) {
                (Ok(r), Some(m)) => {
                    ensure(r.per_class_iou == per, format!("case {case}: {:?} vs {per:?}", r.per_class_iou))?;
                    ensure(r.miou == m, format!("case {case}: mIoU {} vs {m}", r.miou))?;
                }
                (Err(dise::Error::EmptyReport), None) => {}
                (r, m) => return Err(format!("case {case}: {r:?} vs oracle {m:?}")),
            }
        }
        Ok(())
    }));
    out.push(run("confusion accumulation is partition-invariant", || {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for _ in 0..50 {
            let classes = rng.gen_range(2..6);
            let n = rng.gen_range(1..7);
            let preds: Vec<LabelMap> = (0..n).map(|_| random_labels(&mut rng, 1, 8, 8, classes, 0.0)).collect();
            let gts: Vec<LabelMap> = (0..n).map(|_| random_labels(&mut rng, 1, 8, 8, classes, 0.15)).collect();
            let mut whole = ConfusionMatrix::new(classes);
            whole
                .accumulate(&LabelMap::stack(&preds).map_err(err)?, &LabelMap::stack(&gts).map_err(err)?)
                .map_err(err)?;
            let cut = rng.gen_range(0..=n);
            let mut parts = ConfusionMatrix::new(classes);
            let mut second = ConfusionMatrix::new(classes);
            for i in 0..n {
                let target = if i < cut { &mut parts } else { &mut second };
                target.accumulate(&preds[i], &gts[i]).map_err(err)?;
            }
            parts.merge(&second).map_err(err)?;
            ensure(parts == whole, "split accumulation differs")?;
        }
        Ok(())
    }));
    out
}

// ---------------------------------------------------------------------------------------
// Criterion 4: schedule, parameter partition, resume
// ---------------------------------------------------------------------------------------

pub fn tiny_config(root: &Path, out: &Path) -> Config {
    let mut c = Config::default();
    c.data.root = root.to_string_lossy().into_owned();
    c.data.n_train = 6;
    c.data.n_val = 2;
    c.schedule.max_iters = 10;
    c.schedule.eval_interval = 0;
    c.run.out_dir = out.to_string_lossy().into_owned();
    c.model.common_width = 16;
    c.model.private_width = 8;
    c.model.decoder_width = 8;
    c.model.disc_width = 4;
    c
}

pub fn write_tiny_dataset(config: &Config) -> dise::Result<()> {
    write_dataset(
        &DatasetParams {
            root: config.data.root.clone().into(),
            seed: config.data.seed,
            generator: config.data.generator(),
            overwrite: true,
        },
        config.data.n_train,
        config.data.n_val,
    )
    .map(|_| ())
}

fn fingerprints(state: &TrainState) -> BTreeMap<String, u64> {
    state
        .model
        .groups()
        .iter()
        .map(|g| (g.group().to_string(), g.fingerprint().unwrap()))
        .collect()
}

fn state_fingerprints(state: &TrainState) -> BTreeMap<String, u64> {
    state
        .model
        .groups()
        .iter()
        .map(|g| (g.group().to_string(), g.state_fingerprint().unwrap()))
        .collect()
}

const GENERATOR_GROUPS: [&str; 5] = ["E_c", "E_p_s", "E_p_t", "D", "T"];
const DISCRIMINATOR_GROUPS: [&str; 3] = ["D_seg", "D_img_s", "D_img_t"];

fn partition_check() -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(err)?;
    let config = tiny_config(&dir.path().join("d"), &dir.path().join("r"));
    let mut state = TrainState::new(config, 5).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let xs = ImageBatch::new(rand_tensor(&mut rng, &[2, 3, 32, 64], 0.0, 1.0).to_dtype(DType::F32).map_err(err)?, Domain::Source)
        .map_err(err)?;
    let xt = ImageBatch::new(rand_tensor(&mut rng, &[2, 3, 32, 64], 0.0, 1.0).to_dtype(DType::F32).map_err(err)?, Domain::Target)
        .map_err(err)?;
    let ys = random_labels(&mut rng, 2, 32, 64, 5, 0.0);
    let lambdas = LossWeights::default();
    let lrs = state.current_lrs().map_err(err)?;

    let h0 = fingerprints(&state);
    let (pass, _) = state.generator_step(&xs, &ys, &xt, &lambdas, &lrs).map_err(err)?;
    let h1 = fingerprints(&state);
    for g in DISCRIMINATOR_GROUPS {
        ensure(h0[g] == h1[g], format!("generator step changed {g}"))?;
    }
    for g in GENERATOR_GROUPS {
        ensure(h0[g] != h1[g], format!("generator step left {g} unchanged"))?;
    }
    state.discriminator_step(&pass, &lambdas, &lrs).map_err(err)?;
    let h2 = fingerprints(&state);
    for g in GENERATOR_GROUPS {
        ensure(h1[g] == h2[g], format!("discriminator step changed {g}"))?;
    }
    for g in DISCRIMINATOR_GROUPS {
        ensure(h1[g] != h2[g], format!("discriminator step left {g} unchanged"))?;
    }
    Ok(())
}

fn steps_of(records: &[LogRecord]) -> Vec<dise::train::StepOutcome> {
    records
        .iter()
        .filter_map(|r| match r {
            LogRecord::Step(s) => Some(s.clone()),
            LogRecord::Eval(_) => None,
        })
        .collect()
}

fn resume_check() -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(err)?;
    let root = dir.path().join("data");
    let straight_cfg = tiny_config(&root, &dir.path().join("straight"));
    write_tiny_dataset(&straight_cfg).map_err(err)?;
    let straight = fit(straight_cfg.clone(), &FitOptions::default()).map_err(err)?;

    let split_cfg = tiny_config(&root, &dir.path().join("split"));
    let first = fit(
        split_cfg.clone(),
        &FitOptions {
            stop_at: Some(5),
            ..Default::default()
        },
    )
    .map_err(err)?;
    ensure(first.state.iteration == 5, "first half did not stop at 5")?;
    drop(first);
    let ckpt = dir.path().join("split").join(dise::train::LATEST_CHECKPOINT);
    let second = fit(
        split_cfg,
        &FitOptions {
            resume: Some(ckpt),
            ..Default::default()
        },
    )
    .map_err(err)?;

    let a = steps_of(&straight.records);
    let b = steps_of(&second.records);
    ensure(a.len() == 10 && b.len() == 5, format!("{} and {} step records", a.len(), b.len()))?;
    for (x, y) in a[5..].iter().zip(&b) {
        ensure(x == y, format!("step {} differs after resume: {:?} vs {:?}", x.iteration, x.report, y.report))?;
    }
    ensure(state_fingerprints(&straight.state) == state_fingerprints(&second.state), "final parameters differ")
}

pub fn schedule_suite() -> Vec<Check> {
    vec![
        run("poly_lr(1, 125000, 250000, 0.9) = 0.53589 ± 1e-5", || {
            close(poly_lr(1.0, 125_000, 250_000, 0.9).map_err(err)?, 0.53589, 1e-5)
        }),
        run("poly_lr endpoints: base at 0, zero at max_iters", || {
            close(poly_lr(2.5e-4, 0, 5000, 0.9).map_err(err)?, 2.5e-4, 0.0)?;
            close(poly_lr(2.5e-4, 5000, 5000, 0.9).map_err(err)?, 0.0, 0.0)?;
            ensure(poly_lr(1.0, 5001, 5000, 0.9).is_err(), "iteration past max accepted")
        }),
        run("generator and discriminator steps touch disjoint parameter groups", partition_check),
        run("checkpoint resume is bit-identical over 5 steps", resume_check),
    ]
}

pub fn summarize(checks: &[Check]) -> Result<(), String> {
    let failed: Vec<String> = checks
        .iter()
        .filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}")))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(failed.join("; "))
    }
}

pub fn assert_all(checks: Vec<Check>) {
    for (name, r) in &checks {
        eprintln!("{} {name}{}", if r.is_ok() { "ok  " } else { "FAIL" }, r.as_ref().err().map_or(String::new(), |e| format!(": {e}")));
    }
    summarize(&checks).unwrap();
}
