use std::path::Path;

use super::fit::{evaluate, fit, FitOptions};
use crate::config::{Ablation, Config};
use crate::datagen::DatasetManifest;
use crate::error::Result;
use crate::metrics::EvalReport;
use crate::types::{Domain, Split};

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub ablation: Ablation,
    /// Target-val scores of the final model.
    pub report: EvalReport,
}

/// Trains one model per λ mask from the same initialization and data order, each in
/// `<run.out_dir>/<ablation name>`, and scores the final weights on target val.
pub fn run_ablations(base: &Config, which: &[Ablation]) -> Result<Vec<AblationResult>> {
    let manifest = DatasetManifest::read(Path::new(&base.data.root))?;
    let mut out = Vec::with_capacity(which.len());
    for &ablation in which {
        let mut config = base.clone();
        config.loss_weights = ablation.apply(&base.loss_weights);
        config.run.out_dir = Path::new(&base.run.out_dir).join(ablation.name()).to_string_lossy().into_owned();
        log::info!("ablation {}: {} iterations", ablation.name(), config.schedule.max_iters);
        let state = fit(config.clone(), &FitOptions::default())?.state;
        let report = evaluate(
            &state.model,
            &manifest,
            Domain::Target,
            Split::Val,
            &config.data.loader_options(),
            config.run.eval_batch,
            config.run.upsample_predictions,
            config.model.dtype()?,
        )?;
        log::info!("ablation {}: target mIoU {:.2}", ablation.name(), report.miou * 100.0);
        out.push(AblationResult { ablation, report });
    }
    Ok(out)
}
