use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::raster::Raster;
use super::scene::SceneSpec;
use crate::error::{Error, Result};
use crate::types::{Domain, LabelMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Flat,
    Checker,
    Gradient,
    Speckle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillRule {
    pub base: [f32; 3],
    pub modulation: Modulation,
    pub amplitude: f32,
    /// Pattern period in pixels (ignored by `flat` and `speckle`).
    pub period: f32,
}

impl FillRule {
    pub fn flat(base: [f32; 3]) -> Self {
        Self {
            base,
            modulation: Modulation::Flat,
            amplitude: 0.0,
            period: 1.0,
        }
    }
}

/// Per-domain appearance model: one fill rule per class plus global noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureProfile {
    pub domain: Domain,
    pub fills: Vec<FillRule>,
    pub noise_sigma: f32,
    /// Per-scene uniform shift of every base color, drawn from the scene seed.
    pub color_jitter: f32,
}

// Hand-picked palettes for the first five classes: background, ground band,
// blocks, disks, poles. The target palette is deliberately not a recoloring that
// preserves the source's class ordering by brightness or hue.
const SOURCE_BASE: [[f32; 3]; 5] = [
    [0.55, 0.72, 0.92],
    [0.36, 0.34, 0.38],
    [0.74, 0.46, 0.30],
    [0.92, 0.82, 0.16],
    [0.20, 0.22, 0.24],
];
const TARGET_BASE: [[f32; 3]; 5] = [
    [0.62, 0.60, 0.52],
    [0.50, 0.55, 0.42],
    [0.36, 0.44, 0.60],
    [0.86, 0.34, 0.32],
    [0.78, 0.76, 0.70],
];

impl TextureProfile {
    /// Built-in profile for a domain; covers `num_classes` classes.
    pub fn default_for(domain: Domain, num_classes: usize) -> Self {
        let fills = (0..num_classes)
            .map(|c| match domain {
                Domain::Source => FillRule {
                    base: palette(&SOURCE_BASE, c, 0.0),
                    modulation: if c % 2 == 1 {
                        Modulation::Checker
                    } else {
                        Modulation::Flat
                    },
                    amplitude: 0.06,
                    period: 6.0,
                },
                Domain::Target => FillRule {
                    base: palette(&TARGET_BASE, c, 0.5),
                    modulation: if c % 2 == 1 {
                        Modulation::Speckle
                    } else {
                        Modulation::Gradient
                    },
                    amplitude: 0.10,
                    period: 11.0,
                },
            })
            .collect();
        let (noise_sigma, color_jitter) = match domain {
            Domain::Source => (0.01, 0.04),
            Domain::Target => (0.03, 0.06),
        };
        Self {
            domain,
            fills,
            noise_sigma,
            color_jitter,
        }
    }

    pub fn covers(&self, num_classes: usize) -> bool {
        self.fills.len() >= num_classes
    }
}

fn palette(table: &[[f32; 3]; 5], class: usize, hue_offset: f32) -> [f32; 3] {
    if class < table.len() {
        return table[class];
    }
    let hue = (class as f32 * 0.618_034 + hue_offset).fract();
    hsv_to_rgb(hue, 0.55, 0.75)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    match i as i32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Renders a scene under a texture profile. The label map depends on the scene only.
pub fn render(scene: &SceneSpec, profile: &TextureProfile) -> Result<(Raster, LabelMap)> {
    let labels = scene.label_map();
    for c in labels.classes_present() {
        if c as usize >= profile.fills.len() {
            return Err(Error::Config(format!(
                "{} texture profile has no fill rule for class {c}",
                profile.domain
            )));
        }
    }

    let salt = match profile.domain {
        Domain::Source => 0x5eed_0001,
        Domain::Target => 0x5eed_0002,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ salt);
    let bases: Vec<[f32; 3]> = profile
        .fills
        .iter()
        .map(|f| {
            let mut b = f.base;
            if profile.color_jitter > 0.0 {
                let shift = rng.gen_range(-1.0f32..1.0) * profile.color_jitter;
                for v in &mut b {
                    *v += shift;
                }
            }
            b
        })
        .collect();
    let phase: f32 = rng.gen_range(0.0..64.0);
    let noise = (profile.noise_sigma > 0.0)
        .then(|| Normal::new(0.0f32, profile.noise_sigma).expect("sigma is positive"));

    let (h, w) = (scene.height, scene.width);
    let mut raster = Raster::filled(h, w, [0.0; 3]);
    for y in 0..h {
        for x in 0..w {
            let class = labels.data[y * w + x] as usize;
            let fill = &profile.fills[class];
            let base = bases[class];
            let offset = match fill.modulation {
                Modulation::Flat => 0.0,
                Modulation::Checker => {
                    let cell = ((x as f32 + phase) / fill.period).floor()
                        + ((y as f32 + phase) / fill.period).floor();
                    if cell as i64 % 2 == 0 {
                        fill.amplitude
                    } else {
                        -fill.amplitude
                    }
                }
                Modulation::Gradient => {
                    let t = ((x + y) as f32 + phase) / fill.period;
                    fill.amplitude * (2.0 * t.fract() - 1.0)
                }
                Modulation::Speckle => fill.amplitude * rng.gen_range(-1.0f32..1.0),
            };
            let mut px = [0f32; 3];
            for c in 0..3 {
                let n = noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
                px[c] = (base[c] + offset + n).clamp(0.0, 1.0);
            }
            raster.set_pixel(y, x, px);
        }
    }
    Ok((raster, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::scene::{generate_scene, GenConfig};

    #[test]
    fn labels_are_domain_independent() {
        let cfg = GenConfig::default();
        for seed in 0..5 {
            let s = generate_scene(seed, &cfg).unwrap();
            let (_, ls) = render(&s, &TextureProfile::default_for(Domain::Source, 5)).unwrap();
            let (_, lt) = render(&s, &TextureProfile::default_for(Domain::Target, 5)).unwrap();
            assert_eq!(ls, lt);
        }
    }

    #[test]
    fn flat_noiseless_profile_paints_base_colors() {
        let s = generate_scene(3, &GenConfig::default()).unwrap();
        let bases: Vec<[f32; 3]> = (0..5).map(|c| [0.1 * c as f32, 0.5, 0.9]).collect();
        let profile = TextureProfile {
            domain: Domain::Source,
            fills: bases.iter().map(|&b| FillRule::flat(b)).collect(),
            noise_sigma: 0.0,
            color_jitter: 0.0,
        };
        let (img, labels) = render(&s, &profile).unwrap();
        for y in 0..img.height {
            for x in 0..img.width {
                let c = labels.data[y * img.width + x] as usize;
                assert_eq!(img.pixel(y, x), bases[c]);
            }
        }
    }

    #[test]
    fn domain_channel_means_differ() {
        let cfg = GenConfig::default();
        let src = TextureProfile::default_for(Domain::Source, 5);
        let tgt = TextureProfile::default_for(Domain::Target, 5);
        for seed in 0..10 {
            let s = generate_scene(seed, &cfg).unwrap();
            let ms = render(&s, &src).unwrap().0.channel_means();
            let mt = render(&s, &tgt).unwrap().0.channel_means();
            let gap = (0..3).map(|c| (ms[c] - mt[c]).abs()).fold(0.0, f64::max);
            assert!(gap > 0.02, "seed {seed}: {ms:?} vs {mt:?}");
        }
    }

    #[test]
    fn modulation_families_differ_for_half_the_classes() {
        for c in 2..12 {
            let src = TextureProfile::default_for(Domain::Source, c);
            let tgt = TextureProfile::default_for(Domain::Target, c);
            let distinct = src
                .fills
                .iter()
                .zip(&tgt.fills)
                .filter(|(a, b)| a.modulation != b.modulation)
                .count();
            assert!(distinct >= c.div_ceil(2));
        }
    }

    #[test]
    fn missing_fill_rule_is_a_config_error() {
        let s = generate_scene(0, &GenConfig::default()).unwrap();
        let mut p = TextureProfile::default_for(Domain::Source, 5);
        p.fills.truncate(1);
        assert!(matches!(render(&s, &p), Err(Error::Config(_))));
    }
}
