//! Runs the four-way ablation (Source Only, Seg-map Adaptation, DISE w/o Label Transfer,
//! DISE) and prints a per-class IoU table on target val.
//!
//! cargo run --release --example ablation -- [iterations] [data root] [out dir] [ablation ...]

use anyhow::Result;
use dise::config::{Ablation, Config};
use dise::datagen::class_names;
use dise::train::run_ablations;

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut config = Config::default();
    if let Some(n) = args.first() {
        config.schedule.max_iters = n.parse()?;
    }
    if let Some(root) = args.get(1) {
        config.data.root = root.clone();
    }
    config.run.out_dir = args.get(2).cloned().unwrap_or_else(|| "runs/ablation".into());
    let which = if args.len() > 3 {
        args[3..].iter().map(|s| s.parse()).collect::<Result<Vec<Ablation>, _>>()?
    } else {
        Ablation::ALL.to_vec()
    };
    let names = class_names(config.data.num_classes);
    for r in run_ablations(&config, &which)? {
        print!("{}", r.report.table(&names, r.ablation.title()));
    }
    Ok(())
}
