use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use candle_core::Device;
use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::step::{StepOutcome, TrainState};
use crate::config::Config;
use crate::datagen::{DatasetManifest, LoadMode, Loader, LoaderOptions};
use crate::error::{Error, Result};
use crate::metrics::{iou_report, ConfusionMatrix, EvalReport};
use crate::nets::Segmenter;
use crate::types::{Domain, LabelMap, Split};

pub const LATEST_CHECKPOINT: &str = "latest.safetensors";
pub const BEST_CHECKPOINT: &str = "best.safetensors";
pub const EMERGENCY_CHECKPOINT: &str = "emergency.safetensors";
pub const LOG_FILE: &str = "log.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iteration: usize,
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub pixel_accuracy: f64,
}

/// One line of the JSONL training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step(StepOutcome),
    Eval(EvalRecord),
}

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// Continue from this checkpoint instead of a fresh initialization.
    pub resume: Option<PathBuf>,
    /// Set asynchronously to request an emergency checkpoint and a clean stop.
    pub stop: Option<Arc<AtomicBool>>,
    /// Stop after this many completed iterations (defaults to `schedule.max_iters`).
    pub stop_at: Option<usize>,
}

pub struct FitOutcome {
    pub state: TrainState,
    pub records: Vec<LogRecord>,
}

/// Scores `segmenter` on every labeled record of `(domain, split)`.
///
/// Images are resized to the eval size. Predictions are optionally upsampled 2x, then
/// resized (nearest) to the stored label resolution before scoring.
pub fn evaluate(
    segmenter: &dyn Segmenter,
    manifest: &DatasetManifest,
    domain: Domain,
    split: Split,
    options: &LoaderOptions,
    batch_size: usize,
    upsample: bool,
    dtype: candle_core::DType,
) -> Result<EvalReport> {
    let mut loader = Loader::new(manifest, domain, split, options.clone(), 0)?;
    let records = manifest.records_for(domain, split);
    let mut cm = ConfusionMatrix::new(manifest.num_classes());
    let indices: Vec<usize> = (0..loader.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = loader.load_batch(chunk, LoadMode::Eval, false)?;
        let x = batch.to_image_batch(dtype, &Device::Cpu)?;
        let mut pred = segmenter.predict(&x.tensor)?;
        if upsample {
            pred = pred.upsample_nearest(2);
        }
        let gts = chunk
            .iter()
            .map(|&i| manifest.load_label(records[i]))
            .collect::<Result<Vec<_>>>()?;
        let gt = LabelMap::stack(&gts)?;
        let pred = pred.resize_nearest(gt.height, gt.width);
        cm.accumulate(&pred, &gt)?;
    }
    iou_report(&cm)
}

struct LogSink(Option<File>);

impl LogSink {
    fn write(&mut self, rec: &LogRecord) -> Result<()> {
        if let Some(f) = self.0.as_mut() {
            let line = serde_json::to_string(rec)?;
            writeln!(f, "{line}").map_err(|e| Error::io(LOG_FILE, e))?;
        }
        Ok(())
    }
}

/// Trains until `schedule.max_iters`, evaluating on target val every `eval_interval`
/// iterations and keeping `latest` and `best` checkpoints plus a JSONL log in `run.out_dir`.
pub fn fit(config: Config, options: &FitOptions) -> Result<FitOutcome> {
    let mut state = match &options.resume {
        Some(p) => load_checkpoint(p)?,
        None => {
            config.validate()?;
            TrainState::new(config.clone(), config.data.num_classes)?
        }
    };
    let config = state.config.clone();
    let manifest = DatasetManifest::read(Path::new(&config.data.root))?;
    if manifest.num_classes() != config.data.num_classes {
        return Err(Error::Config(format!(
            "dataset at {} has {} classes, config says {}",
            config.data.root,
            manifest.num_classes(),
            config.data.num_classes
        )));
    }
    let opts = config.data.loader_options();
    let seed = config.run.seed;
    let mut src = Loader::new(&manifest, Domain::Source, Split::Train, opts.clone(), seed)?;
    let mut tgt = Loader::new(&manifest, Domain::Target, Split::Train, opts.clone(), seed ^ 0x5eed_7a29)?;
    if let Some([s, t]) = state.loaders {
        src.restore(s);
        tgt.restore(t);
    }
    let max_iters = config.schedule.max_iters;
    let stop_at = options.stop_at.unwrap_or(max_iters).min(max_iters);
    let mut records = Vec::new();

    let out_dir = PathBuf::from(&config.run.out_dir);
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    std::fs::write(out_dir.join("config.toml"), config.to_toml_string()).map_err(|e| Error::io(&out_dir, e))?;
    let log_path = out_dir.join(LOG_FILE);
    let mut sink = LogSink(Some(
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?,
    ));
    let dtype = config.model.dtype()?;
    let lambdas = config.loss_weights;
    let bs = config.data.batch_size;

    while state.iteration < stop_at {
        if options.stop.as_ref().is_some_and(|s| s.load(Ordering::SeqCst)) {
            let path = out_dir.join(EMERGENCY_CHECKPOINT);
            save_checkpoint(&state, &path)?;
            return Err(Error::Interrupted {
                iteration: state.iteration,
                path,
            });
        }
        let result = (|| {
            let bs_src = src.next_batch(bs, true)?;
            let bt = tgt.next_batch(bs, false)?;
            let xs = bs_src.to_image_batch(dtype, &Device::Cpu)?;
            let xt = bt.to_image_batch(dtype, &Device::Cpu)?;
            let ys = bs_src.labels.expect("requested labels");
            state.train_step(&xs, &ys, &xt, &lambdas)
        })();
        let outcome = match result {
            Ok(o) => o,
            Err(e) => {
                let path = out_dir.join(EMERGENCY_CHECKPOINT);
                save_checkpoint(&state, &path)?;
                return Err(Error::Aborted {
                    iteration: state.iteration,
                    path,
                    source: Box::new(e),
                });
            }
        };
        state.loaders = Some([src.state(), tgt.state()]);
        if state.iteration % 50 == 0 || state.iteration == 1 {
            log::info!(
                "iter {:>5}/{max_iters}  total {:.4}  seg {:.4}  s2t {:.4}",
                state.iteration,
                outcome.report.total,
                outcome.report.terms.0[0],
                outcome.report.terms.0[6]
            );
        }
        let rec = LogRecord::Step(outcome);
        sink.write(&rec)?;
        records.push(rec);

        let interval = config.schedule.eval_interval;
        let at_eval = interval > 0 && (state.iteration % interval == 0 || state.iteration == max_iters);
        if at_eval {
            let report = evaluate(
                &state.model,
                &manifest,
                Domain::Target,
                Split::Val,
                &opts,
                config.run.eval_batch,
                config.run.upsample_predictions,
                dtype,
            )?;
            log::info!("iter {:>5}  target val mIoU {:.2}", state.iteration, report.miou * 100.0);
            let improved = state.best_miou.map_or(true, |b| report.miou > b);
            if improved {
                state.best_miou = Some(report.miou);
                save_checkpoint(&state, &out_dir.join(BEST_CHECKPOINT))?;
            }
            let rec = LogRecord::Eval(EvalRecord {
                iteration: state.iteration,
                per_class_iou: report.per_class_iou,
                miou: report.miou,
                pixel_accuracy: report.pixel_accuracy,
            });
            sink.write(&rec)?;
            records.push(rec);
            save_checkpoint(&state, &out_dir.join(LATEST_CHECKPOINT))?;
        }
    }
    save_checkpoint(&state, &out_dir.join(LATEST_CHECKPOINT))?;
    Ok(FitOutcome { state, records })
}

/// Parses a JSONL training log.
pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
