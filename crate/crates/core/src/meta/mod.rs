//! Experiment orchestration: configuration, parallel data collection, the
//! alternating predictor/policy training loop, baselines and evaluation.

mod collect;
mod config;
mod evaluate;
mod pipeline;
mod run_dir;

pub use collect::{collect_dataset, SourceFactory};
pub use config::{ChainConfig, DataConfig, ExperimentConfig, MAX_META_ITERATIONS};
pub use evaluate::{evaluate, uniform_guess_baseline, EvaluationReport, ModelEntry, ModelScore};
pub use pipeline::{
    load_outcome, load_policy, load_predictor, policy_checkpoint, predictor_checkpoint, save_policy, save_predictor,
    thread_pool, HistoryRow, IterationOutcome, Pipeline, PipelineOutcome, Stage, HISTORY_FILE, RP_CHECKPOINT,
    RP_PLUS_CHECKPOINT,
};
pub use run_dir::{build_id, ManifestEntry, RunDir, CONFIG_FILE, MANIFEST_FILE};
