//! Scores a checkpoint on both domains' val splits and prints the per-class IoU tables.
//!
//! cargo run --release --example evaluate -- <checkpoint> [data root]

use std::path::Path;

use anyhow::{Context, Result};
use dise::datagen::DatasetManifest;
use dise::train::{evaluate, load_checkpoint};
use dise::{Domain, Split};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = args.next().context("usage: evaluate <checkpoint> [data root]")?;
    let state = load_checkpoint(Path::new(&ckpt))?;
    let config = &state.config;
    let root = args.next().unwrap_or_else(|| config.data.root.clone());
    let manifest = DatasetManifest::read(Path::new(&root))?;
    println!("checkpoint at iteration {}", state.iteration);
    for domain in Domain::ALL {
        let report = evaluate(
            &state.model,
            &manifest,
            domain,
            Split::Val,
            &config.data.loader_options(),
            config.run.eval_batch,
            config.run.upsample_predictions,
            config.model.dtype()?,
        )?;
        print!("{}", report.table(&manifest.classes, &format!("{domain} val")));
    }
    Ok(())
}
