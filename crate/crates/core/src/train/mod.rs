//! Two-stage training, evaluation and persistence.

pub mod ablation;
pub mod checkpoint;
pub mod data;
pub mod metrics;
pub mod optim;
pub mod stage;

pub use checkpoint::Checkpoint;
pub use data::{Corpus, Dataset, Sample};
pub use metrics::{accuracy, pr_auc, roc_auc, Metrics};
pub use optim::{layer_index, lr_at_step, AdamW, AdamWConfig};
pub use stage::{
    check_stage1_model, evaluate, run_stage1, run_stage2, scores, Policy, StageConfig, StageOutcome, StageReport,
};
