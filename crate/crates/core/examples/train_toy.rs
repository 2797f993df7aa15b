//! Trains DISE on the toy corpus, writing checkpoints and a JSONL log.
//!
//! cargo run --release --example train_toy -- [iterations] [data root] [out dir]

use anyhow::Result;
use dise::config::Config;
use dise::train::{fit, FitOptions, LogRecord};

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let mut config = Config::default();
    if let Some(n) = args.next() {
        config.schedule.max_iters = n.parse()?;
        config.schedule.eval_interval = config.schedule.eval_interval.min(config.schedule.max_iters);
    }
    if let Some(root) = args.next() {
        config.data.root = root;
    }
    if let Some(out) = args.next() {
        config.run.out_dir = out;
    }
    let started = std::time::Instant::now();
    let outcome = fit(config, &FitOptions::default())?;
    let steps = outcome.records.iter().filter(|r| matches!(r, LogRecord::Step(_))).count();
    println!(
        "{steps} steps in {:.1}s ({:.1} ms/step)",
        started.elapsed().as_secs_f64(),
        started.elapsed().as_secs_f64() * 1000.0 / steps.max(1) as f64
    );
    for r in &outcome.records {
        if let LogRecord::Eval(e) = r {
            println!("iter {:>5}  target mIoU {:.2}", e.iteration, e.miou * 100.0);
        }
    }
    Ok(())
}
