//! Procedural scene layouts: a ground band, standing blocks, poles and disks.
//!
//! Each foreground class owns one shape kind, so class identity is recoverable from
//! geometry alone. Appearance is decided later by a [`TextureProfile`](super::TextureProfile).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::LabelMap;

pub const MIN_CANVAS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Band,
    Rectangle,
    Disk,
    Pole,
}

impl ShapeKind {
    /// Shape kind owned by a foreground class (class 0 is background).
    pub fn for_class(class_id: u8) -> ShapeKind {
        match (class_id.max(1) - 1) % 4 {
            0 => ShapeKind::Band,
            1 => ShapeKind::Rectangle,
            2 => ShapeKind::Disk,
            _ => ShapeKind::Pole,
        }
    }

    fn depth(self) -> u8 {
        match self {
            ShapeKind::Band => 0,
            ShapeKind::Rectangle => 1,
            ShapeKind::Pole => 2,
            ShapeKind::Disk => 3,
        }
    }
}

/// Pixel-unit placement of one object. Bounds are half-open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Band { top: usize, bottom: usize },
    Rectangle { top: usize, left: usize, bottom: usize, right: usize },
    Disk { cy: f32, cx: f32, radius: f32 },
    Pole { top: usize, left: usize, bottom: usize, right: usize },
}

impl Shape {
    pub fn kind(&self) -> ShapeKind {
        match self {
            Shape::Band { .. } => ShapeKind::Band,
            Shape::Rectangle { .. } => ShapeKind::Rectangle,
            Shape::Disk { .. } => ShapeKind::Disk,
            Shape::Pole { .. } => ShapeKind::Pole,
        }
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        match *self {
            Shape::Band { top, bottom } => y >= top && y < bottom,
            Shape::Rectangle {
                top,
                left,
                bottom,
                right,
            }
            | Shape::Pole {
                top,
                left,
                bottom,
                right,
            } => y >= top && y < bottom && x >= left && x < right,
            Shape::Disk { cy, cx, radius } => {
                let dy = y as f32 + 0.5 - cy;
                let dx = x as f32 + 0.5 - cx;
                dy * dy + dx * dx <= radius * radius
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class_id: u8,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 128,
            num_classes: 5,
            min_objects: 4,
            max_objects: 9,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < MIN_CANVAS || self.width < MIN_CANVAS {
            return Err(Error::Config(format!(
                "canvas {}x{} is smaller than {MIN_CANVAS}x{MIN_CANVAS}",
                self.height, self.width
            )));
        }
        if !(2..=255).contains(&self.num_classes) {
            return Err(Error::Config(format!(
                "num_classes must be in 2..=255, got {}",
                self.num_classes
            )));
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return Err(Error::Config(format!(
                "object count range {}..={} is empty or starts at zero",
                self.min_objects, self.max_objects
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    /// Back-to-front draw order.
    pub objects: Vec<SceneObject>,
}

impl SceneSpec {
    /// Rasterizes the class layout; later objects overwrite earlier ones.
    pub fn label_map(&self) -> LabelMap {
        let mut data = vec![0u8; self.height * self.width];
        for obj in &self.objects {
            for y in 0..self.height {
                let row = &mut data[y * self.width..(y + 1) * self.width];
                for (x, px) in row.iter_mut().enumerate() {
                    if obj.shape.contains(y, x) {
                        *px = obj.class_id;
                    }
                }
            }
        }
        LabelMap {
            batch: 1,
            height: self.height,
            width: self.width,
            data,
        }
    }
}

/// Deterministic scene layout for `(seed, config)`.
pub fn generate_scene(seed: u64, config: &GenConfig) -> Result<SceneSpec> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (config.height as f32, config.width as f32);
    let classes: Vec<u8> = (1..config.num_classes as u8).collect();
    let band_classes: Vec<u8> = classes
        .iter()
        .copied()
        .filter(|&c| ShapeKind::for_class(c) == ShapeKind::Band)
        .collect();

    let horizon = (h * rng.gen_range(0.55..0.75)) as usize;
    let mut objects = vec![SceneObject {
        class_id: band_classes[0],
        shape: Shape::Band {
            top: horizon,
            bottom: config.height,
        },
    }];

    let count = rng.gen_range(config.min_objects..=config.max_objects);
    for _ in 1..count {
        let class_id = classes[rng.gen_range(0..classes.len())];
        let shape = match ShapeKind::for_class(class_id) {
            ShapeKind::Band => {
                let top = (h * rng.gen_range(0.35..0.9)) as usize;
                let height = ((h * rng.gen_range(0.06..0.16)) as usize).max(2);
                Shape::Band {
                    top,
                    bottom: (top + height).min(config.height),
                }
            }
            ShapeKind::Rectangle => {
                let bw = ((w * rng.gen_range(0.10..0.30)) as usize).max(4);
                let bh = ((h * rng.gen_range(0.25..0.55)) as usize).max(4);
                let left = rng.gen_range(0..config.width - bw.min(config.width - 1));
                let bottom = (horizon + (h * rng.gen_range(0.0..0.08)) as usize).min(config.height);
                Shape::Rectangle {
                    top: bottom.saturating_sub(bh),
                    left,
                    bottom,
                    right: (left + bw).min(config.width),
                }
            }
            ShapeKind::Disk => {
                let radius = h * rng.gen_range(0.07..0.14);
                Shape::Disk {
                    cy: h * rng.gen_range(0.12..0.45),
                    cx: rng.gen_range(radius..w - radius),
                    radius,
                }
            }
            ShapeKind::Pole => {
                let pw = ((w * rng.gen_range(0.025..0.05)).round() as usize).max(2);
                let left = rng.gen_range(0..config.width - pw);
                let bottom = (horizon + (h * rng.gen_range(0.02..0.15)) as usize).min(config.height);
                let top = (h * rng.gen_range(0.08..0.35)) as usize;
                Shape::Pole {
                    top: top.min(bottom.saturating_sub(2)),
                    left,
                    bottom,
                    right: left + pw,
                }
            }
        };
        objects.push(SceneObject { class_id, shape });
    }
    // Stable sort keeps generation order within a depth layer.
    objects.sort_by_key(|o| o.shape.kind().depth());

    Ok(SceneSpec {
        seed,
        height: config.height,
        width: config.width,
        num_classes: config.num_classes,
        objects,
    })
}
