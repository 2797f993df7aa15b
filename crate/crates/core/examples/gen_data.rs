//! Writes the two-domain toy corpus.
//!
//! cargo run --release --example gen_data -- [root] [seed]

use std::path::PathBuf;

use anyhow::Result;
use dise::config::Config;
use dise::datagen::{write_dataset, DatasetParams};
use dise::Domain;
use dise::Split;

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let root = PathBuf::from(args.next().unwrap_or_else(|| "data/toy".into()));
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let data = Config::default().data;
    let manifest = write_dataset(
        &DatasetParams {
            root: root.clone(),
            seed,
            generator: data.generator(),
            overwrite: true,
        },
        data.n_train,
        data.n_val,
    )?;
    for domain in Domain::ALL {
        for split in [Split::Train, Split::Val] {
            println!("{domain}/{split}: {} images", manifest.records_for(domain, split).len());
        }
    }
    println!("wrote {}", root.display());
    Ok(())
}
