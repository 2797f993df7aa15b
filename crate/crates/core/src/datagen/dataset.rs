//! On-disk corpus layout:
//!
//! ```text
//! <root>/manifest.json
//! <root>/<domain>/<split>/images/<id>.png   8-bit RGB
//! <root>/<domain>/<split>/labels/<id>.png   8-bit gray, class index per pixel, 255 = ignore
//! ```
//!
//! Target-domain training records have no label file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::scene::{generate_scene, GenConfig};
use super::texture::{render, TextureProfile};
use super::raster::Raster;
use crate::error::{Error, Result};
use crate::types::{Domain, LabelMap, Split};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub domain: Domain,
    pub split: Split,
    /// Path relative to the dataset root.
    pub image: String,
    pub label: Option<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(skip)]
    pub root: PathBuf,
    pub version: u32,
    pub seed: u64,
    /// `[height, width]`
    pub canvas: [usize; 2],
    pub classes: Vec<String>,
    pub records: Vec<Record>,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn records_for(&self, domain: Domain, split: Split) -> Vec<&Record> {
        self.records
            .iter()
            .filter(|r| r.domain == domain && r.split == split)
            .collect()
    }

    pub fn load_image(&self, record: &Record) -> Result<Raster> {
        Raster::load_png(&self.root.join(&record.image))
    }

    pub fn load_label(&self, record: &Record) -> Result<LabelMap> {
        let rel = record
            .label
            .as_ref()
            .ok_or_else(|| Error::MissingLabel(format!("{}/{}/{}", record.domain, record.split, record.id)))?;
        LabelMap::load_png(&self.root.join(rel))
    }

    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Data(format!(
                "manifest version {} is not supported (expected {MANIFEST_VERSION})",
                manifest.version
            )));
        }
        manifest.root = root.to_path_buf();
        Ok(manifest)
    }

    pub fn write(&self) -> Result<()> {
        let path = self.root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

/// Default class names; extra classes are numbered.
pub fn class_names(num_classes: usize) -> Vec<String> {
    const NAMES: [&str; 5] = ["background", "ground", "block", "disk", "pole"];
    (0..num_classes)
        .map(|c| NAMES.get(c).map_or_else(|| format!("class{c}"), |n| n.to_string()))
        .collect()
}

#[derive(Debug, Clone)]
pub struct DatasetParams {
    pub root: PathBuf,
    pub seed: u64,
    pub generator: GenConfig,
    pub overwrite: bool,
}

/// Per-record scene seed; distinct across (domain, split, index).
pub fn record_seed(base: u64, domain: Domain, split: Split, index: usize) -> u64 {
    let d = match domain {
        Domain::Source => 1u64,
        Domain::Target => 2,
    };
    let s = match split {
        Split::Train => 1u64,
        Split::Val => 2,
    };
    splitmix64(splitmix64(base ^ (d << 60) ^ (s << 56)) ^ index as u64)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generates and writes the two-domain corpus, returning its manifest.
pub fn write_dataset(params: &DatasetParams, n_train: usize, n_val: usize) -> Result<DatasetManifest> {
    params.generator.validate()?;
    let root = &params.root;
    if root.exists() {
        let non_empty = std::fs::read_dir(root)
            .map_err(|e| Error::io(root, e))?
            .next()
            .is_some();
        if non_empty {
            if !params.overwrite {
                return Err(Error::Refusal(root.clone()));
            }
            std::fs::remove_dir_all(root).map_err(|e| Error::io(root, e))?;
        }
    }

    let gen = &params.generator;
    let mut records = Vec::new();
    for domain in Domain::ALL {
        let profile = TextureProfile::default_for(domain, gen.num_classes);
        for (split, count) in [(Split::Train, n_train), (Split::Val, n_val)] {
            let dir = root.join(domain.as_str()).join(split.as_str());
            let labeled = domain == Domain::Source || split == Split::Val;
            create_dir(&dir.join("images"))?;
            if labeled {
                create_dir(&dir.join("labels"))?;
            }
            for i in 0..count {
                let id = format!("{i:05}");
                let seed = record_seed(params.seed, domain, split, i);
                let scene = generate_scene(seed, gen)?;
                let (image, labels) = render(&scene, &profile)?;
                let rel_dir = format!("{}/{}", domain.as_str(), split.as_str());
                let image_rel = format!("{rel_dir}/images/{id}.png");
                image.save_png(&root.join(&image_rel))?;
                let label_rel = if labeled {
                    let rel = format!("{rel_dir}/labels/{id}.png");
                    labels.save_png(&root.join(&rel))?;
                    Some(rel)
                } else {
                    None
                };
                records.push(Record {
                    id,
                    domain,
                    split,
                    image: image_rel,
                    label: label_rel,
                    seed,
                });
            }
        }
    }

    let manifest = DatasetManifest {
        root: root.clone(),
        version: MANIFEST_VERSION,
        seed: params.seed,
        canvas: [gen.height, gen.width],
        classes: class_names(gen.num_classes),
        records,
    };
    manifest.write()?;
    Ok(manifest)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
