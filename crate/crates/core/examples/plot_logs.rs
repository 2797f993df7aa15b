//! Renders loss curves and per-class IoU bars from one or more training logs.
//!
//! cargo run --release --example plot_logs -- <out dir> <log.jsonl>...

use std::path::PathBuf;

use anyhow::{ensure, Result};
use dise::plot::{plot_iou_bars, plot_loss_curves};
use dise::train::read_log;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "plots".into()));
    let logs: Vec<_> = args.map(|p| read_log(p.as_ref())).collect::<Result<_, _>>()?;
    ensure!(!logs.is_empty(), "usage: plot_logs <out dir> <log.jsonl>...");
    plot_loss_curves(&logs, &out.join("loss_curves.png"))?;
    plot_iou_bars(&logs, &out.join("iou_bars.png"))?;
    println!("wrote {}", out.display());
    Ok(())
}
