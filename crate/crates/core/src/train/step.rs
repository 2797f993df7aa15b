use std::collections::BTreeMap;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::optim::{Optimizer, OptimizerKind};
use super::schedule::poly_lr;
use crate::config::Config;
use crate::datagen::LoaderState;
use crate::error::{Error, Result};
use crate::losses::{
    label_transfer_loss, lsgan_discriminator, lsgan_generator, perceptual_from_features, seg_adv_discriminator_loss,
    seg_adv_generator_loss, seg_cross_entropy, texture_from_features, total_loss, LossReport, LossTerms, LossWeights,
};
use crate::nets::layers::softmax_channels;
use crate::nets::{DiseModel, FeatureExtractor, Mode, StructureCode, TextureCode};
use crate::types::{Domain, ImageBatch, LabelMap};

/// Optimizer names in update order: generator side first, then the discriminators.
pub const OPTIMIZER_NAMES: [&str; 5] = ["seg", "decoder", "private", "d_seg", "d_img"];

/// Model, optimizers and progress counters; everything a checkpoint restores.
pub struct TrainState {
    pub config: Config,
    pub model: DiseModel,
    pub optimizers: Vec<Optimizer>,
    /// Completed iterations.
    pub iteration: usize,
    pub best_miou: Option<f64>,
    /// Source and target loader positions at the last save point.
    pub loaders: Option<[LoaderState; 2]>,
}

/// Everything logged about one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub iteration: usize,
    pub report: LossReport,
    pub lambdas: LossWeights,
    pub lrs: BTreeMap<String, f64>,
    pub d_seg_loss: f64,
    pub d_img_loss: f64,
}

impl TrainState {
    pub fn new(config: Config, num_classes: usize) -> Result<Self> {
        config.validate()?;
        let model = DiseModel::new(&config.model, num_classes)?;
        let optimizers = build_optimizers(&config, &model);
        Ok(Self {
            config,
            model,
            optimizers,
            iteration: 0,
            best_miou: None,
            loaders: None,
        })
    }

    pub fn optimizer(&self, name: &str) -> Option<&Optimizer> {
        self.optimizers.iter().find(|o| o.name() == name)
    }

    pub fn optimizer_mut(&mut self, name: &str) -> Option<&mut Optimizer> {
        self.optimizers.iter_mut().find(|o| o.name() == name)
    }

    /// Learning rate of every optimizer at the current iteration.
    pub fn current_lrs(&self) -> Result<BTreeMap<String, f64>> {
        let s = &self.config.schedule;
        self.optimizers
            .iter()
            .map(|o| Ok((o.name().to_string(), poly_lr(o.base_lr(), self.iteration, s.max_iters, s.power)?)))
            .collect()
    }

    /// One alternating update: a generator step on the λ-weighted objective, then one step
    /// for each discriminator on detached generator outputs.
    pub fn train_step(
        &mut self,
        x_s: &ImageBatch,
        y_s: &LabelMap,
        x_t: &ImageBatch,
        lambdas: &LossWeights,
    ) -> Result<StepOutcome> {
        let lrs = self.current_lrs()?;
        let (pass, report) = self.generator_step(x_s, y_s, x_t, lambdas, &lrs)?;
        let (d_seg_loss, d_img_loss) = self.discriminator_step(&pass, lambdas, &lrs)?;
        self.iteration += 1;
        Ok(StepOutcome {
            iteration: self.iteration,
            report,
            lambdas: *lambdas,
            lrs,
            d_seg_loss,
            d_img_loss,
        })
    }

    /// Forward pass over all terms and an update of E_c, T, D and both private encoders.
    /// Discriminators are read frozen, so their parameters cannot change here.
    pub fn generator_step(
        &mut self,
        x_s: &ImageBatch,
        y_s: &LabelMap,
        x_t: &ImageBatch,
        lambdas: &LossWeights,
        lrs: &BTreeMap<String, f64>,
    ) -> Result<(GeneratorPass, LossReport)> {
        if x_s.domain != Domain::Source || x_t.domain != Domain::Target {
            return Err(Error::Data("train_step expects a source batch and a target batch".into()));
        }
        if (x_s.height(), x_s.width()) != (x_t.height(), x_t.width()) {
            return Err(Error::shape("source and target crops differ in size"));
        }
        lambdas.validate()?;
        let m = &self.model;
        let (b_s, b_t) = (x_s.batch(), x_t.batch());
        let (h, w) = (x_s.height(), x_s.width());
        let (xs, xt) = (&x_s.tensor, &x_t.tensor);

        // Shared encoder sees both domains in one batch so normalization statistics are shared.
        let z_c = m.common.forward(&Tensor::cat(&[xs, xt], 0)?, Mode::TRAIN)?;
        let z_c_s = z_c.tensor().narrow(0, 0, b_s)?;
        let z_c_t = z_c.tensor().narrow(0, b_s, b_t)?;
        let z_p_s = m.private_source.forward(xs, Mode::TRAIN)?;
        let z_p_t = m.private_target.forward(xt, Mode::TRAIN)?;

        // s2s, t2t, s2t, t2s in one decoder call.
        let codes = StructureCode(Tensor::cat(&[&z_c_s, &z_c_t, &z_c_s, &z_c_t], 0)?);
        let styles = TextureCode(Tensor::cat(&[z_p_s.tensor(), z_p_t.tensor(), z_p_t.tensor(), z_p_s.tensor()], 0)?);
        let mut flags = vec![Domain::Source; b_s];
        flags.extend(vec![Domain::Target; b_t]);
        flags.extend(vec![Domain::Target; b_s]);
        flags.extend(vec![Domain::Source; b_t]);
        let decoded = m.decoder.forward_flags(&codes, &styles, &flags, Mode::TRAIN)?;
        let s2t = decoded.narrow(0, b_s + b_t, b_s)?;
        let t2s = decoded.narrow(0, 2 * b_s + b_t, b_t)?;

        let scores = m.classifier.forward(&z_c, (h, w), Mode::TRAIN)?;
        let probs = softmax_channels(&scores)?;
        let scores_s = scores.narrow(0, 0, b_s)?;
        let probs_s = probs.narrow(0, 0, b_s)?;
        let probs_t = probs.narrow(0, b_s, b_t)?;

        let l_seg = seg_cross_entropy(&scores_s, y_s)?;
        let l_seg_adv = seg_adv_generator_loss(&m.seg_disc.forward(&probs_t, Mode::FROZEN)?)?;

        let feats = m.extractor.extract(&Tensor::cat(&[xs, xt, &decoded], 0)?)?;
        let f = feats.split(&[b_s, b_t, b_s, b_t, b_s, b_t])?;
        let (f_s, f_t, f_s2s, f_t2t, f_s2t, f_t2s) = (&f[0], &f[1], &f[2], &f[3], &f[4], &f[5]);
        let lw = &self.config.layer_weights;
        let l_rec = (perceptual_from_features(f_s2s, f_s, &lw.rec)? + perceptual_from_features(f_t2t, f_t, &lw.rec)?)?;
        let l_str = (perceptual_from_features(f_s2t, f_s, &lw.str)? + perceptual_from_features(f_t2s, f_t, &lw.str)?)?;
        let l_tex = (texture_from_features(f_s2t, f_t, &lw.tex)? + texture_from_features(f_t2s, f_s, &lw.tex)?)?;
        let l_trans_adv = (lsgan_generator(&m.img_disc_target.forward(&s2t, Mode::FROZEN)?)?
            + lsgan_generator(&m.img_disc_source.forward(&t2s, Mode::FROZEN)?)?)?;

        let s2t_in = if self.config.run.detach_label_transfer {
            s2t.detach()
        } else {
            s2t.clone()
        };
        let z_c_s2t = m.common.forward(&s2t_in, Mode::TRAIN)?;
        let l_s2t = label_transfer_loss(&m.classifier.forward(&z_c_s2t, (h, w), Mode::TRAIN)?, y_s)?;

        let terms = [l_seg, l_seg_adv, l_rec, l_str, l_tex, l_trans_adv, l_s2t];
        let mut values = [0.0; 7];
        for (v, t) in values.iter_mut().zip(&terms) {
            *v = scalar(t)?;
        }
        let report = total_loss(&LossTerms(values), lambdas)?;

        let mut objective: Option<Tensor> = None;
        for (t, l) in terms.iter().zip(lambdas.as_array()) {
            if l != 0.0 {
                let wt = (t * l)?;
                objective = Some(match objective {
                    Some(acc) => (acc + wt)?,
                    None => wt,
                });
            }
        }
        let pass = GeneratorPass {
            x_s: xs.detach(),
            x_t: xt.detach(),
            probs_s: probs_s.detach(),
            probs_t: probs_t.detach(),
            s2t: s2t.detach(),
            t2s: t2s.detach(),
        };
        if let Some(obj) = objective {
            let grads = obj.backward()?;
            for name in ["seg", "decoder", "private"] {
                let lr = lrs[name];
                self.optimizer_mut(name).expect("built").step(&grads, lr)?;
            }
        }
        Ok((pass, report))
    }

    /// Updates the discriminators on detached generator outputs. A discriminator only
    /// trains when its adversarial term is active. Returns `(d_seg, d_img)` losses.
    pub fn discriminator_step(
        &mut self,
        pass: &GeneratorPass,
        lambdas: &LossWeights,
        lrs: &BTreeMap<String, f64>,
    ) -> Result<(f64, f64)> {
        let m = &self.model;
        let d_seg = seg_adv_discriminator_loss(
            &m.seg_disc.forward(&pass.probs_s, Mode::TRAIN)?,
            &m.seg_disc.forward(&pass.probs_t, Mode::TRAIN)?,
        )?;
        let d_img = (lsgan_discriminator(
            &m.img_disc_target.forward(&pass.x_t, Mode::TRAIN)?,
            &m.img_disc_target.forward(&pass.s2t, Mode::TRAIN)?,
        )? + lsgan_discriminator(
            &m.img_disc_source.forward(&pass.x_s, Mode::TRAIN)?,
            &m.img_disc_source.forward(&pass.t2s, Mode::TRAIN)?,
        )?)?;
        let (d_seg_loss, d_img_loss) = (scalar(&d_seg)?, scalar(&d_img)?);
        for (name, v) in [("d_seg", d_seg_loss), ("d_img", d_img_loss)] {
            if !v.is_finite() {
                return Err(Error::NonFinite { term: name.into() });
            }
        }
        if lambdas.seg_adv != 0.0 {
            let g = d_seg.backward()?;
            self.optimizer_mut("d_seg").expect("built").step(&g, lrs["d_seg"])?;
        }
        if lambdas.trans_adv != 0.0 {
            let g = d_img.backward()?;
            self.optimizer_mut("d_img").expect("built").step(&g, lrs["d_img"])?;
        }
        Ok((d_seg_loss, d_img_loss))
    }
}

/// Detached generator outputs handed from the generator step to the discriminator step.
#[derive(Debug, Clone)]
pub struct GeneratorPass {
    pub x_s: Tensor,
    pub x_t: Tensor,
    pub probs_s: Tensor,
    pub probs_t: Tensor,
    pub s2t: Tensor,
    pub t2s: Tensor,
}

pub(crate) fn build_optimizers(config: &Config, model: &DiseModel) -> Vec<Optimizer> {
    let o = &config.optim;
    let sgd = OptimizerKind::MomentumSgd {
        momentum: o.sgd_momentum,
        weight_decay: o.weight_decay,
    };
    let adam = OptimizerKind::Adam {
        beta1: o.adam_beta1,
        beta2: o.adam_beta2,
        eps: o.adam_eps,
    };
    vec![
        Optimizer::new("seg", sgd, o.sgd_lr, &[model.common.params(), model.classifier.params()]),
        Optimizer::new("decoder", adam, o.decoder_lr, &[model.decoder.params()]),
        Optimizer::new("private", adam, o.others_lr, &[model.private_source.params(), model.private_target.params()]),
        Optimizer::new("d_seg", adam, o.others_lr, &[model.seg_disc.params()]),
        Optimizer::new(
            "d_img",
            adam,
            o.others_lr,
            &[model.img_disc_source.params(), model.img_disc_target.params()],
        ),
    ]
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

