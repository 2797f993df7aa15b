//! Evaluates every loss term on a pair of rendered scenes with an untrained model, and
//! shows how the ablation presets mask the weighted total.
//!
//! cargo run --release --example losses_tour

use anyhow::Result;
use candle_core::{DType, Device};
use dise::config::{Ablation, Config};
use dise::datagen::{generate_scene, rasters_to_tensor, render, TextureProfile};
use dise::losses::{
    lsgan_losses, perceptual_metric, seg_adv_discriminator_loss, seg_adv_generator_loss, seg_cross_entropy,
    texture_metric, total_loss, LossTerms, TERM_NAMES,
};
use dise::nets::{DiseModel, Mode};
use dise::{Domain, LabelMap};

fn scalar(t: &candle_core::Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn main() -> Result<()> {
    let config = Config::default();
    let gen = config.data.generator();
    let scene = generate_scene(3, &gen)?;
    let mut images = Vec::new();
    let mut labels: Vec<LabelMap> = Vec::new();
    for d in Domain::ALL {
        let (img, lab) = render(&scene, &TextureProfile::default_for(d, config.data.num_classes))?;
        images.push(img);
        labels.push(lab);
    }
    println!("same scene, two textures: labels identical = {}", labels[0] == labels[1]);

    let model = DiseModel::new(&config.model, config.data.num_classes)?;
    let ex = &model.extractor;
    let dtype = config.model.dtype()?;
    let x_s = rasters_to_tensor(&images[..1], dtype, &Device::Cpu)?;
    let x_t = rasters_to_tensor(&images[1..], dtype, &Device::Cpu)?;
    let lw = &config.layer_weights;
    println!("perceptual(x_s, x_t) = {:.4}", scalar(&perceptual_metric(ex, &x_s, &x_t, &lw.rec)?)?);
    println!("texture(x_s, x_t)    = {:.4}", scalar(&texture_metric(ex, &x_s, &x_t, &lw.tex)?)?);
    println!("texture(x_s, x_s)    = {:.4}", scalar(&texture_metric(ex, &x_s, &x_s, &lw.tex)?)?);

    let (z_s, p_s) = model.encode(&x_s, Domain::Source, Mode::EVAL)?;
    let (z_t, p_t) = model.encode(&x_t, Domain::Target, Mode::EVAL)?;
    let (h, w) = (x_s.dims()[2], x_s.dims()[3]);
    let s2s = model.decoder.forward(&z_s, &p_s, Domain::Source, Mode::EVAL)?;
    let t2t = model.decoder.forward(&z_t, &p_t, Domain::Target, Mode::EVAL)?;
    let s2t = model.decoder.forward(&z_s, &p_t, Domain::Target, Mode::EVAL)?;
    let t2s = model.decoder.forward(&z_t, &p_s, Domain::Source, Mode::EVAL)?;
    let scores_s = model.classifier.forward(&z_s, (h, w), Mode::EVAL)?;
    let probs_s = model.classifier.probabilities(&z_s, (h, w), Mode::EVAL)?;
    let probs_t = model.classifier.probabilities(&z_t, (h, w), Mode::EVAL)?;
    let d_s = model.seg_disc.forward(&probs_s, Mode::EVAL)?;
    let d_t = model.seg_disc.forward(&probs_t, Mode::EVAL)?;
    let (g_adv, d_adv) = lsgan_losses(
        &model.img_disc_target.forward(&x_t, Mode::EVAL)?,
        &model.img_disc_target.forward(&s2t, Mode::EVAL)?,
    )?;
    let scores_s2t = model
        .classifier
        .forward(&model.common.forward(&s2t, Mode::EVAL)?, (h, w), Mode::EVAL)?;

    let terms = LossTerms([
        scalar(&seg_cross_entropy(&scores_s, &labels[0])?)?,
        scalar(&seg_adv_generator_loss(&d_t)?)?,
        scalar(&dise::losses::reconstruction_loss(ex, &s2s, &x_s, &t2t, &x_t, &lw.rec)?)?,
        scalar(&dise::losses::translation_structure_loss(ex, &s2t, &x_s, &t2s, &x_t, &lw.str)?)?,
        scalar(&dise::losses::translation_texture_loss(ex, &s2t, &x_t, &t2s, &x_s, &lw.tex)?)?,
        scalar(&g_adv)?,
        scalar(&seg_cross_entropy(&scores_s2t, &labels[0])?)?,
    ]);
    println!("\nuntrained model, one scene pair:");
    for (name, v) in TERM_NAMES.iter().zip(terms.0) {
        println!("  {name:<10} {v:.4}");
    }
    println!("  D_seg loss {:.4}, D_img_t loss {:.4}", scalar(&seg_adv_discriminator_loss(&d_s, &d_t)?)?, scalar(&d_adv)?);

    println!("\nweighted total per ablation:");
    for ab in Ablation::ALL {
        let w = ab.apply(&config.loss_weights);
        println!("  {:<24} {:.4}", ab.title(), total_loss(&terms, &w)?.total);
    }
    Ok(())
}
