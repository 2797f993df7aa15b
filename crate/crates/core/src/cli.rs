//! Command-line front end: `gen-data`, `train`, `eval`, `translate`, `plot`.
//!
//! Every config key is also a flag of the same dotted name (`--optim.sgd_lr 1e-3`).
//! Precedence is flags > config file (`--config` or `$DISE_CONFIG`) > defaults.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or config error, 3 missing checkpoint,
//! 130 interrupted (after writing an emergency checkpoint).

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use candle_core::{DType, Device};
use clap::{Arg, ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::Serialize;

use crate::config::{Ablation, Config};
use crate::datagen::{rasters_to_tensor, tensor_to_rasters, write_dataset, DatasetManifest, DatasetParams, Raster};
use crate::error::{Error, Result};
use crate::metrics::{structure_report, texture_report, EvalReport};
use crate::nets::Segmenter;
use crate::plot::{plot_iou_bars, plot_loss_curves};
use crate::train::{evaluate, fit, load_checkpoint, read_log, FitOptions};
use crate::types::{Domain, LabelMap, Split};

#[derive(Debug, Parser)]
#[command(name = "dise", version, about = "Domain-invariant structure extraction on a two-domain toy corpus")]
struct Cli {
    /// TOML config file (defaults to $DISE_CONFIG when set).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Debug, Subcommand)]
enum Verb {
    /// Write the procedural two-domain dataset.
    GenData(GenDataArgs),
    /// Train (optionally as one of the ablation presets).
    Train(TrainArgs),
    /// Score a checkpoint on a manifest split and print the IoU table.
    Eval(EvalArgs),
    /// Combine the structure of one image with the texture of another.
    Translate(TranslateArgs),
    /// Render loss curves and IoU bars from JSONL logs.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Output root (overrides data.root).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset seed (overrides data.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Replace an existing non-empty directory.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Loss-weight mask applied on top of the configured weights.
    #[arg(long, value_parser = parse_ablation)]
    ablation: Option<Ablation>,
    /// Continue from a checkpoint (its stored config is used).
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "target", value_parser = parse_domain)]
    domain: Domain,
    #[arg(long, default_value = "val", value_parser = parse_split)]
    split: Split,
    /// Where to write the JSON report (default: next to the checkpoint).
    #[arg(long)]
    json: Option<PathBuf>,
    /// Row label of the printed table.
    #[arg(long, default_value = "model")]
    label: String,
}

#[derive(Debug, Args)]
struct TranslateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Image providing the structure code.
    #[arg(long)]
    structure: PathBuf,
    /// Image providing the texture code.
    #[arg(long)]
    texture: PathBuf,
    /// Domain of the texture image.
    #[arg(long, default_value = "target", value_parser = parse_domain)]
    texture_domain: Domain,
    /// Label map of the structure image, enabling the pseudo-label accuracy report.
    #[arg(long)]
    structure_label: Option<PathBuf>,
    /// Output image.
    #[arg(long)]
    out: PathBuf,
    /// Structure | texture | output strip.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// JSON with texture and structure diagnostics.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// One or more JSONL training logs; each becomes one series.
    #[arg(long = "log", required = true, num_args = 1..)]
    logs: Vec<PathBuf>,
    /// Output directory for `loss_curves.png` and `iou_bars.png`.
    #[arg(long)]
    out: PathBuf,
}

fn parse_ablation(s: &str) -> std::result::Result<Ablation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_domain(s: &str) -> std::result::Result<Domain, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Every dotted config key, e.g. `optim.sgd_lr`.
pub fn config_keys() -> Vec<String> {
    let value = toml::Value::try_from(Config::default()).expect("config always serializes");
    let mut keys = Vec::new();
    for (section, v) in value.as_table().into_iter().flatten() {
        for key in v.as_table().into_iter().flatten().map(|(k, _)| k) {
            keys.push(format!("{section}.{key}"));
        }
    }
    keys
}

fn command() -> clap::Command {
    let keys = config_keys();
    let mut cmd = Cli::command();
    for sub in ["gen-data", "train", "eval", "translate"] {
        let keys = keys.clone();
        cmd = cmd.mut_subcommand(sub, move |mut s| {
            for k in &keys {
                s = s.arg(
                    Arg::new(k.clone())
                        .long(k.clone())
                        .value_name("VALUE")
                        .num_args(1)
                        .help_heading("Config overrides"),
                );
            }
            s
        });
    }
    cmd
}

fn overrides(m: &ArgMatches) -> Vec<(String, String)> {
    config_keys()
        .into_iter()
        .filter_map(|k| m.get_one::<String>(&k).map(|v| (k, v.clone())))
        .collect()
}

/// Maps an error to its process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::ConfigKey { .. } => 2,
        Error::MissingCheckpoint(_) => 3,
        Error::Interrupted { .. } => 130,
        _ => 1,
    }
}

/// Parses `argv` (including the program name), runs the verb and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    let sub = matches.subcommand().map(|(_, m)| m).expect("verb is required");
    match dispatch(cli, &overrides(sub)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            exit_code(&e)
        }
    }
}

fn one_line(e: &Error) -> String {
    let mut msg = e.to_string();
    let mut src = std::error::Error::source(e);
    while let Some(s) = src {
        let next = s.to_string();
        if !msg.contains(&next) {
            msg = format!("{msg}: {next}");
        }
        src = s.source();
    }
    msg.replace('\n', " ")
}

fn dispatch(cli: Cli, overrides: &[(String, String)]) -> Result<()> {
    let file = cli.config.or_else(Config::env_path);
    match cli.verb {
        Verb::GenData(a) => {
            let mut config = Config::resolve(file.as_deref(), overrides)?;
            if let Some(out) = a.out {
                config.data.root = out.to_string_lossy().into_owned();
            }
            if let Some(seed) = a.seed {
                config.data.seed = seed;
            }
            let manifest = write_dataset(
                &DatasetParams {
                    root: PathBuf::from(&config.data.root),
                    seed: config.data.seed,
                    generator: config.data.generator(),
                    overwrite: a.overwrite,
                },
                config.data.n_train,
                config.data.n_val,
            )?;
            println!("wrote {} records to {}", manifest.records.len(), config.data.root);
            Ok(())
        }
        Verb::Train(a) => {
            let mut config = Config::resolve(file.as_deref(), overrides)?;
            if let Some(ab) = a.ablation {
                config.loss_weights = ab.apply(&config.loss_weights);
            }
            let stop = Arc::new(AtomicBool::new(false));
            let flag = stop.clone();
            // A handler can only be installed once per process; later calls keep the first.
            let _ = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst));
            let outcome = fit(
                config,
                &FitOptions {
                    resume: a.resume,
                    stop: Some(stop),
                    stop_at: None,
                },
            )?;
            let state = outcome.state;
            println!(
                "trained to iteration {}; best target mIoU {}; checkpoints in {}",
                state.iteration,
                state.best_miou.map_or("n/a".into(), |m| format!("{:.2}", m * 100.0)),
                state.config.run.out_dir
            );
            Ok(())
        }
        Verb::Eval(a) => {
            let mut state = load_checkpoint(&a.checkpoint)?;
            for (k, v) in overrides {
                state.config.set(k, v)?;
            }
            let config = &state.config;
            let manifest = DatasetManifest::read(Path::new(&config.data.root))?;
            let report = evaluate(
                &state.model,
                &manifest,
                a.domain,
                a.split,
                &config.data.loader_options(),
                config.run.eval_batch,
                config.run.upsample_predictions,
                config.model.dtype()?,
            )?;
            print!("{}", report.table(&manifest.classes, &a.label));
            let json = a.json.unwrap_or_else(|| a.checkpoint.with_extension("eval.json"));
            write_json(
                &json,
                &EvalJson {
                    checkpoint: a.checkpoint.display().to_string(),
                    iteration: state.iteration,
                    domain: a.domain.to_string(),
                    split: a.split.as_str().to_string(),
                    classes: manifest.classes.clone(),
                    report,
                },
            )
        }
        Verb::Translate(a) => translate(a, overrides),
        Verb::Plot(a) => {
            let logs = a.logs.iter().map(|p| read_log(p)).collect::<Result<Vec<_>>>()?;
            plot_loss_curves(&logs, &a.out.join("loss_curves.png"))?;
            plot_iou_bars(&logs, &a.out.join("iou_bars.png"))?;
            println!("wrote {}", a.out.display());
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct EvalJson {
    checkpoint: String,
    iteration: usize,
    domain: String,
    split: String,
    classes: Vec<String>,
    report: EvalReport,
}

#[derive(Serialize)]
struct TranslateJson {
    texture_to_texture_image: f64,
    texture_to_structure_image: f64,
    structure_distance: Option<f64>,
    pseudo_label_accuracy: Option<f64>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn translate(a: TranslateArgs, overrides: &[(String, String)]) -> Result<()> {
    let mut state = load_checkpoint(&a.checkpoint)?;
    for (k, v) in overrides {
        state.config.set(k, v)?;
    }
    let config = &state.config;
    let model = &state.model;
    let dtype: DType = config.model.dtype()?;
    let [h, w] = [config.data.eval_height, config.data.eval_width];
    let load = |p: &Path| -> Result<Raster> { Ok(Raster::load_png(p)?.resize_bilinear(h, w)) };
    let (s_img, t_img) = (load(&a.structure)?, load(&a.texture)?);
    let x_s = rasters_to_tensor(std::slice::from_ref(&s_img), dtype, &Device::Cpu)?;
    let x_t = rasters_to_tensor(std::slice::from_ref(&t_img), dtype, &Device::Cpu)?;
    let out = model.translate(&x_s, &x_t, a.texture_domain)?;
    let out_img = tensor_to_rasters(&out)?.remove(0);
    out_img.save_png(&a.out)?;

    let w_tex = &config.layer_weights.tex;
    let (to_tex, to_struct) = texture_report(&model.extractor, &out, &x_s, &x_t, w_tex)?;
    let (mut d_struct, mut acc) = (None, None);
    if let Some(lp) = &a.structure_label {
        let y = LabelMap::load_png(lp)?.resize_nearest(h, w);
        let (d, p) = structure_report(&model.extractor, &out, &x_s, &y, model as &dyn Segmenter, &config.layer_weights.str)?;
        d_struct = Some(d);
        acc = Some(p);
    }
    println!("texture distance to texture image {to_tex:.5}, to structure image {to_struct:.5}");
    if let Some(grid) = &a.grid {
        grid_strip(&[&s_img, &t_img, &out_img])?.save_png(grid)?;
    }
    if let Some(report) = &a.report {
        write_json(
            report,
            &TranslateJson {
                texture_to_texture_image: to_tex,
                texture_to_structure_image: to_struct,
                structure_distance: d_struct,
                pseudo_label_accuracy: acc,
            },
        )?;
    }
    Ok(())
}

/// Side-by-side strip of equally sized images separated by 2-pixel white gutters.
pub fn grid_strip(images: &[&Raster]) -> Result<Raster> {
    let first = images.first().ok_or_else(|| Error::shape("empty grid"))?;
    let (h, w) = (first.height, first.width);
    let gutter = 2;
    let total_w = images.len() * w + (images.len() - 1) * gutter;
    let mut out = Raster::filled(h, total_w, [1.0, 1.0, 1.0]);
    for (i, img) in images.iter().enumerate() {
        if (img.height, img.width) != (h, w) {
            return Err(Error::shape("grid images differ in size"));
        }
        for y in 0..h {
            for x in 0..w {
                out.set_pixel(y, i * (w + gutter) + x, img.pixel(y, x));
            }
        }
    }
    Ok(out)
}
