//! Alternating generator/discriminator optimization, checkpoints and the training loop.

mod ablation;
mod checkpoint;
mod fit;
mod optim;
mod oracle;
mod schedule;
mod step;

pub use ablation::{run_ablations, AblationResult};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use fit::{
    evaluate, fit, read_log, EvalRecord, FitOptions, FitOutcome, LogRecord, BEST_CHECKPOINT, EMERGENCY_CHECKPOINT,
    LATEST_CHECKPOINT, LOG_FILE,
};
pub use optim::{Optimizer, OptimizerKind, SlotState};
pub use oracle::{OracleOptions, OracleSegmenter};
pub use schedule::poly_lr;
pub use step::{GeneratorPass, StepOutcome, TrainState, OPTIMIZER_NAMES};
