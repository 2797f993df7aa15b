//! Reference segmenter for scoring translations.
//!
//! It is trained with full supervision on freshly rendered scenes in both domain styles,
//! using seeds disjoint from any dataset, so it segments either texture well and its
//! accuracy on a translated image measures how much structure survived translation.

use candle_core::{Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::optim::{Optimizer, OptimizerKind};
use crate::config::Config;
use crate::datagen::{generate_scene, rasters_to_tensor, record_seed, render, Raster, TextureProfile};
use crate::error::Result;
use crate::losses::seg_cross_entropy;
use crate::nets::{DiseModel, Mode, Segmenter};
use crate::types::{Domain, LabelMap, Split};

const ORACLE_SALT: u64 = 0x0a1c_1e5e_9e77_0001;

#[derive(Debug, Clone)]
pub struct OracleOptions {
    pub steps: usize,
    /// Distinct scenes rendered per domain.
    pub pool: usize,
    pub batch_per_domain: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            steps: 1500,
            pool: 200,
            batch_per_domain: 2,
            lr: 1e-3,
            seed: 7,
        }
    }
}

/// Common encoder plus classifier, trained on labeled scenes of both styles.
pub struct OracleSegmenter {
    model: DiseModel,
}

impl OracleSegmenter {
    pub fn train(config: &Config, options: &OracleOptions) -> Result<Self> {
        let model = DiseModel::new(&config.model, config.data.num_classes)?;
        let dtype = config.model.dtype()?;
        let gen = config.data.generator();
        let [ch, cw] = [config.data.crop_height, config.data.crop_width];
        let [th, tw] = [config.data.train_height, config.data.train_width];
        let mut pools: Vec<Vec<(Raster, LabelMap)>> = Vec::new();
        for domain in Domain::ALL {
            let profile = TextureProfile::default_for(domain, config.data.num_classes);
            let mut pool = Vec::with_capacity(options.pool);
            for i in 0..options.pool {
                let seed = record_seed(options.seed ^ ORACLE_SALT, domain, Split::Train, i);
                let (img, lab) = render(&generate_scene(seed, &gen)?, &profile)?;
                pool.push((img.resize_bilinear(th, tw), lab.resize_nearest(th, tw)));
            }
            pools.push(pool);
        }
        let adam = OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        };
        let mut opt = Optimizer::new("oracle", adam, options.lr, &[model.common.params(), model.classifier.params()]);
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        for _ in 0..options.steps {
            let mut imgs = Vec::new();
            let mut labs = Vec::new();
            for pool in &pools {
                for _ in 0..options.batch_per_domain {
                    let (img, lab) = &pool[rng.gen_range(0..pool.len())];
                    let top = rng.gen_range(0..=th - ch);
                    let left = rng.gen_range(0..=tw - cw);
                    imgs.push(img.crop(top, left, ch, cw)?);
                    labs.push(lab.crop(top, left, ch, cw)?);
                }
            }
            let x = rasters_to_tensor(&imgs, dtype, &Device::Cpu)?;
            let y = LabelMap::stack(&labs)?;
            let z = model.common.forward(&x, Mode::TRAIN)?;
            let loss = seg_cross_entropy(&model.classifier.forward(&z, (ch, cw), Mode::TRAIN)?, &y)?;
            opt.step(&loss.backward()?, options.lr)?;
        }
        Ok(Self { model })
    }

    pub fn model(&self) -> &DiseModel {
        &self.model
    }
}

impl Segmenter for OracleSegmenter {
    fn predict(&self, x: &Tensor) -> Result<LabelMap> {
        self.model.predict(x)
    }
}
