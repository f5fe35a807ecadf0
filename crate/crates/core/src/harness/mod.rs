//! Training loop, checkpoints, configuration files and benchmark runs.

mod checkpoint;
mod config;
mod eval;
mod optim;
mod train;

pub use checkpoint::{checkpoint_scalar, Checkpoint, RngState, CHECKPOINT_VERSION};
pub use config::{parse_toml, CorpusSource, GenConfig, GroupMode, Mining, TrainConfig};
pub use eval::{
    run_eval, training_recall_at_1, BenchmarkSpec, CaptionMetrics, EvalReport, EvalSample, QaMetrics, RecallMetrics,
    Task, DEFAULT_MAX_ANSWER,
};
pub use optim::{linear_decay, AdamW, ADAM_EPS, BETA1, BETA2};
pub use train::{build_vocabulary, load_corpora, train, EvalPoint, MetricsReport, StepLog, Trainer};
