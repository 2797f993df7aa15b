//! Batch loading with the train-time resize + random crop pipeline.

use candle_core::{DType, Device};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::DatasetManifest;
use super::raster::{rasters_to_tensor, Raster};
use crate::error::{Error, Result};
use crate::types::{Domain, ImageBatch, LabelMap, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadMode {
    /// Resize to the train size, then crop at a random offset.
    Train,
    /// Resize to the eval size, no crop.
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoaderOptions {
    pub train_size: [usize; 2],
    pub crop_size: [usize; 2],
    pub eval_size: [usize; 2],
}

impl Default for LoaderOptions {
    fn default() -> Self {
        Self {
            train_size: [64, 128],
            crop_size: [32, 64],
            eval_size: [64, 128],
        }
    }
}

impl LoaderOptions {
    pub fn validate(&self) -> Result<()> {
        let [th, tw] = self.train_size;
        let [ch, cw] = self.crop_size;
        if ch > th || cw > tw || ch == 0 || cw == 0 {
            return Err(Error::Config(format!(
                "crop {ch}x{cw} does not fit in train size {th}x{tw}"
            )));
        }
        Ok(())
    }
}

/// Resumable position of a [`Loader`]: the epoch, the cursor inside the epoch's
/// shuffled order, and the word position of the crop stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoaderState {
    pub seed: u64,
    pub epoch: u64,
    pub cursor: usize,
    pub crop_word_pos: u128,
}

#[derive(Debug, Clone)]
pub struct LoadedBatch {
    pub domain: Domain,
    pub images: Vec<Raster>,
    pub labels: Option<LabelMap>,
}

impl LoadedBatch {
    pub fn to_image_batch(&self, dtype: DType, device: &Device) -> Result<ImageBatch> {
        ImageBatch::new(rasters_to_tensor(&self.images, dtype, device)?, self.domain)
    }
}

/// Loads batches of one (domain, split) slice of a manifest. Decoded files are cached.
pub struct Loader {
    manifest: DatasetManifest,
    domain: Domain,
    split: Split,
    record_ids: Vec<usize>,
    options: LoaderOptions,
    seed: u64,
    crop_rng: ChaCha8Rng,
    epoch: u64,
    cursor: usize,
    order: Vec<usize>,
    images: Vec<Option<Raster>>,
    labels: Vec<Option<LabelMap>>,
}

impl Loader {
    pub fn new(
        manifest: &DatasetManifest,
        domain: Domain,
        split: Split,
        options: LoaderOptions,
        seed: u64,
    ) -> Result<Self> {
        options.validate()?;
        let record_ids: Vec<usize> = manifest
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.domain == domain && r.split == split)
            .map(|(i, _)| i)
            .collect();
        if record_ids.is_empty() {
            return Err(Error::Data(format!("manifest has no {domain}/{split} records")));
        }
        let n = record_ids.len();
        let mut loader = Self {
            manifest: manifest.clone(),
            domain,
            split,
            record_ids,
            options,
            seed,
            crop_rng: ChaCha8Rng::seed_from_u64(seed),
            epoch: 0,
            cursor: 0,
            order: Vec::new(),
            images: vec![None; n],
            labels: vec![None; n],
        };
        loader.order = loader.epoch_order(0);
        Ok(loader)
    }

    pub fn len(&self) -> usize {
        self.record_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record_ids.is_empty()
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn options(&self) -> &LoaderOptions {
        &self.options
    }

    pub fn state(&self) -> LoaderState {
        LoaderState {
            seed: self.seed,
            epoch: self.epoch,
            cursor: self.cursor,
            crop_word_pos: self.crop_rng.get_word_pos(),
        }
    }

    pub fn restore(&mut self, state: LoaderState) {
        self.seed = state.seed;
        self.crop_rng = ChaCha8Rng::seed_from_u64(state.seed);
        self.crop_rng.set_word_pos(state.crop_word_pos);
        self.epoch = state.epoch;
        self.cursor = state.cursor;
        self.order = self.epoch_order(state.epoch);
    }

    fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x0dde_c0de);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
        order
    }

    /// Draws the next crop offset `(top, left)` from the loader's own stream.
    pub fn crop_offsets(&mut self) -> (usize, usize) {
        let [th, tw] = self.options.train_size;
        let [ch, cw] = self.options.crop_size;
        let top = self.crop_rng.gen_range(0..=th - ch);
        let left = self.crop_rng.gen_range(0..=tw - cw);
        (top, left)
    }

    fn image(&mut self, i: usize) -> Result<&Raster> {
        if self.images[i].is_none() {
            let rec = &self.manifest.records[self.record_ids[i]];
            self.images[i] = Some(self.manifest.load_image(rec)?);
        }
        Ok(self.images[i].as_ref().expect("just filled"))
    }

    fn label(&mut self, i: usize) -> Result<&LabelMap> {
        if self.labels[i].is_none() {
            let rec = &self.manifest.records[self.record_ids[i]];
            self.labels[i] = Some(self.manifest.load_label(rec)?);
        }
        Ok(self.labels[i].as_ref().expect("just filled"))
    }

    /// Loads the records at `indices` (positions within this loader's slice).
    pub fn load_batch(&mut self, indices: &[usize], mode: LoadMode, with_labels: bool) -> Result<LoadedBatch> {
        if indices.is_empty() {
            return Err(Error::Data("empty index list".into()));
        }
        let mut images = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Data(format!(
                    "index {i} out of range for {} {}/{} records",
                    self.len(),
                    self.domain,
                    self.split
                )));
            }
            let (img, lab) = match mode {
                LoadMode::Eval => {
                    let [h, w] = self.options.eval_size;
                    let img = self.image(i)?.resize_bilinear(h, w);
                    let lab = if with_labels {
                        Some(self.label(i)?.resize_nearest(h, w))
                    } else {
                        None
                    };
                    (img, lab)
                }
                LoadMode::Train => {
                    let [th, tw] = self.options.train_size;
                    let [ch, cw] = self.options.crop_size;
                    // Look up the label first so a missing one fails before the stream advances.
                    let resized_label = if with_labels {
                        Some(self.label(i)?.resize_nearest(th, tw))
                    } else {
                        None
                    };
                    let resized = self.image(i)?.resize_bilinear(th, tw);
                    let (top, left) = self.crop_offsets();
                    let img = resized.crop(top, left, ch, cw)?;
                    let lab = resized_label
                        .map(|l| l.crop(top, left, ch, cw))
                        .transpose()?;
                    (img, lab)
                }
            };
            images.push(img);
            if let Some(l) = lab {
                labels.push(l);
            }
        }
        let labels = if with_labels {
            Some(LabelMap::stack(&labels)?)
        } else {
            None
        };
        Ok(LoadedBatch {
            domain: self.domain,
            images,
            labels,
        })
    }

    /// Next train-mode batch, cycling through reshuffled epochs.
    pub fn next_batch(&mut self, batch_size: usize, with_labels: bool) -> Result<LoadedBatch> {
        let mut indices = Vec::with_capacity(batch_size);
        while indices.len() < batch_size {
            if self.cursor == self.order.len() {
                self.epoch += 1;
                self.cursor = 0;
                self.order = self.epoch_order(self.epoch);
            }
            indices.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        self.load_batch(&indices, LoadMode::Train, with_labels)
    }
}
