//! Swaps texture codes between val scenes of the two domains and writes
//! structure | texture | output strips, with texture and structure diagnostics.
//!
//! cargo run --release --example translate -- <checkpoint> [out dir] [scenes]

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use candle_core::Device;
use dise::cli::grid_strip;
use dise::datagen::{rasters_to_tensor, tensor_to_rasters, DatasetManifest};
use dise::metrics::{structure_report, texture_report};
use dise::nets::Segmenter;
use dise::train::load_checkpoint;
use dise::{Domain, Split};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = args.next().context("usage: translate <checkpoint> [out dir] [scenes]")?;
    let out = PathBuf::from(args.next().unwrap_or_else(|| "translations".into()));
    let scenes: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(4);
    std::fs::create_dir_all(&out)?;

    let state = load_checkpoint(Path::new(&ckpt))?;
    let config = &state.config;
    let model = &state.model;
    let dtype = config.model.dtype()?;
    let manifest = DatasetManifest::read(Path::new(&config.data.root))?;
    let src = manifest.records_for(Domain::Source, Split::Val);
    let tgt = manifest.records_for(Domain::Target, Split::Val);

    for i in 0..scenes.min(src.len()).min(tgt.len()) {
        let (img_s, img_t) = (manifest.load_image(src[i])?, manifest.load_image(tgt[i])?);
        let x_s = rasters_to_tensor(std::slice::from_ref(&img_s), dtype, &Device::Cpu)?;
        let x_t = rasters_to_tensor(std::slice::from_ref(&img_t), dtype, &Device::Cpu)?;
        let s2t = model.translate(&x_s, &x_t, Domain::Target)?;
        let t2s = model.translate(&x_t, &x_s, Domain::Source)?;

        let (to_t, to_s) = texture_report(&model.extractor, &s2t, &x_s, &x_t, &config.layer_weights.tex)?;
        let y_s = manifest.load_label(src[i])?;
        let (d_str, acc) = structure_report(
            &model.extractor,
            &s2t,
            &x_s,
            &y_s,
            model as &dyn Segmenter,
            &config.layer_weights.str,
        )?;
        println!(
            "scene {i}: texture to target {to_t:.4} / to source {to_s:.4}; structure distance {d_str:.4}; \
             segmenter accuracy on translation {acc:.3}"
        );
        let s2t_img = tensor_to_rasters(&s2t)?.remove(0);
        let t2s_img = tensor_to_rasters(&t2s)?.remove(0);
        grid_strip(&[&img_s, &img_t, &s2t_img])?.save_png(&out.join(format!("s2t_{i:02}.png")))?;
        grid_strip(&[&img_t, &img_s, &t2s_img])?.save_png(&out.join(format!("t2s_{i:02}.png")))?;
    }
    println!("strips in {}", out.display());
    Ok(())
}
